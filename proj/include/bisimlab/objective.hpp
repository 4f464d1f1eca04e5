#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bisimlab/ad/ops.hpp"

namespace bisimlab::objective {

/// Which term carries the weight beta.
///   BetaOnBehavior: L_total = L_rec + beta * L_behavior   (default)
///   BetaOnReconstruction: L_total = L_behavior + beta * L_rec
enum class Weighting { BetaOnBehavior, BetaOnReconstruction };

/// Training objective ablations.
enum class Terms { Full, BehaviorOnly, ReconstructionOnly };

Weighting parse_weighting(const std::string& name);
std::string to_string(Weighting w);
Terms parse_terms(const std::string& name);
std::string to_string(Terms t);

struct LossBreakdown {
  double l_behavior = 0.0;
  double l_reconstruction = 0.0;
  double beta = 0.0;
  double l_total = 0.0;
  Weighting weighting = Weighting::BetaOnBehavior;
  Terms terms = Terms::Full;
};

nlohmann::json to_json(const LossBreakdown& b);

/// Combined scalar for the given convention; all inputs must be >= 0.
double combine(double l_behavior, double l_reconstruction, double beta, Weighting w, Terms t = Terms::Full);

/// For each of `steps` timesteps, a uniformly drawn derangement of the batch:
/// element b is paired with partner[t][b] != b.
std::vector<std::vector<Index>> sample_pairing(Index batch, Index steps, Rng& rng);

/// Min-max normalization to [0, 1]; a degenerate range maps to 0.
struct RewardNormalizer {
  double lo = 0.0;
  double hi = 0.0;

  double operator()(double r) const { return hi > lo ? (r - lo) / (hi - lo) : 0.0; }
};

/// Behavior loss over the first K-1 steps of each window.
///   current_t(i, j) = dbar(z_i^t, z_j^t)          online latents, differentiable
///   target_t(i, j)  = |r_i^t - r_j^t| + gamma * dbar(s_hat_i^{t+1}, s_hat_j^{t+1})
/// The target is evaluated once and enters the graph as a constant.
/// latents, predicted: [B, K, d]; rewards: B x K; pairing: K-1 derangements.
template <typename Scalar>
ad::Var<Scalar> behavior_loss(const ad::Var<Scalar>& latents, const ad::Var<Scalar>& predicted,
                              const Eigen::MatrixXd& rewards, double gamma,
                              const std::vector<std::vector<Index>>& pairing) {
  const auto& s = latents.shape();
  if (s.size() != 3 || predicted.shape() != s)
    throw InvalidInput("behavior_loss: latents " + ad::shape_str(s) + " and predictions " +
                       ad::shape_str(predicted.shape()) + " must both be [B, K, d]");
  const Index B = s[0], K = s[1], d = s[2];
  if (K < 2) throw InvalidInput("behavior_loss: need K >= 2");
  if (rewards.rows() != B || rewards.cols() != K)
    throw InvalidInput("behavior_loss: rewards must be " + std::to_string(B) + " x " + std::to_string(K));
  if (static_cast<Index>(pairing.size()) != K - 1) throw InvalidInput("behavior_loss: need K-1 pairings");
  std::vector<Index> ii, jj, ii_next, jj_next;
  for (Index t = 0; t + 1 < K; ++t) {
    if (static_cast<Index>(pairing[static_cast<std::size_t>(t)].size()) != B)
      throw InvalidInput("behavior_loss: pairing size does not match batch");
    for (Index b = 0; b < B; ++b) {
      const Index p = pairing[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)];
      if (p < 0 || p >= B) throw InvalidInput("behavior_loss: partner index out of range");
      ii.push_back(b * K + t);
      jj.push_back(p * K + t);
      ii_next.push_back(b * K + t + 1);
      jj_next.push_back(p * K + t + 1);
    }
  }
  auto& g = *latents.graph;
  const auto flat = ad::reshape(latents, {B * K, d});
  const auto current = ad::cosine_distance_batch(ad::embedding_lookup(flat, ii), ad::embedding_lookup(flat, jj));

  const auto pred = predicted.value().reshaped({B * K, d});
  ad::Tensor<Scalar> target({static_cast<Index>(ii.size())});
  {
    ad::Graph<Scalar> scratch;
    const auto pv = scratch.constant(pred);
    const auto succ = ad::cosine_distance_batch(ad::embedding_lookup(pv, ii_next), ad::embedding_lookup(pv, jj_next));
    for (std::size_t n = 0; n < ii.size(); ++n) {
      const Index bi = ii[n] / K, bj = jj[n] / K, t = ii[n] % K;
      target.data(static_cast<Index>(n)) =
          static_cast<Scalar>(std::abs(rewards(bi, t) - rewards(bj, t))) +
          static_cast<Scalar>(gamma) * succ.value().data(static_cast<Index>(n));
    }
  }
  return ad::mse(current, g.constant(std::move(target)));
}

/// MSE between transformer predictions and momentum-encoder targets. The
/// targets must not require gradients.
template <typename Scalar>
ad::Var<Scalar> reconstruction_loss(const ad::Var<Scalar>& targets, const ad::Var<Scalar>& predicted) {
  if (targets.graph->needs_grad(targets.id))
    throw InvalidInput("reconstruction_loss: targets must not carry gradients");
  if (targets.shape() != predicted.shape() || targets.shape().size() != 3)
    throw InvalidInput("reconstruction_loss: shapes " + ad::shape_str(targets.shape()) + " and " +
                       ad::shape_str(predicted.shape()) + " must match as [B, K, d]");
  return ad::mse(predicted, targets);
}

/// Graph-level total plus the scalar breakdown.
template <typename Scalar>
std::pair<ad::Var<Scalar>, LossBreakdown> total_loss(const ad::Var<Scalar>& behavior,
                                                     const ad::Var<Scalar>& reconstruction, double beta,
                                                     Weighting w, Terms t = Terms::Full) {
  if (!(beta >= 0.0)) throw InvalidInput("total_loss: beta must be non-negative");
  LossBreakdown out;
  out.l_behavior = static_cast<double>(behavior.value().item());
  out.l_reconstruction = static_cast<double>(reconstruction.value().item());
  out.beta = beta;
  out.weighting = w;
  out.terms = t;
  out.l_total = combine(out.l_behavior, out.l_reconstruction, beta, w, t);
  const Scalar b = static_cast<Scalar>(beta);
  ad::Var<Scalar> total;
  switch (t) {
    case Terms::BehaviorOnly:
      total = behavior;
      break;
    case Terms::ReconstructionOnly:
      total = reconstruction;
      break;
    case Terms::Full:
      total = w == Weighting::BetaOnBehavior ? ad::add(reconstruction, ad::scale(behavior, b))
                                         : ad::add(behavior, ad::scale(reconstruction, b));
      break;
  }
  return {total, out};
}

}  // namespace bisimlab::objective
