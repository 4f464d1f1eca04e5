#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bisimlab/ad/ops.hpp"
#include "bisimlab/ad/params.hpp"

namespace bisimlab::dynamics {

/// Pre-norm transformer encoder over interleaved (state, action) tokens.
/// Relative position enters as a learned additive bias on the attention
/// logits, one table entry per offset i - j.
struct TransformerConfig {
  Index layers = 2;
  Index heads = 1;
  Index d_model = 50;
  Index ff_width = 200;
  Index n_actions = 4;
  Index seq_len = 16;  ///< K; the token sequence has 2K entries
  double ln_eps = 1e-5;
  bool position_bias = true;

  Index tokens() const { return 2 * seq_len; }
  void validate() const;
};

inline void TransformerConfig::validate() const {
  require(layers >= 1 && heads >= 1 && d_model >= 1 && ff_width >= 1, "TransformerConfig: sizes must be positive");
  require(d_model % heads == 0, "TransformerConfig: d_model must be divisible by heads");
  require(n_actions >= 1, "TransformerConfig: need at least one action");
  require(seq_len >= 1, "TransformerConfig: seq_len must be positive");
  require(ln_eps > 0.0, "TransformerConfig: ln_eps must be positive");
}

inline std::string layer_prefix(Index l) { return "dynamics/layer" + std::to_string(l) + "/"; }

/// Parameters under "dynamics/". Projections are N(0, 1/fan_in), layer-norm
/// gains 1, biases 0, position tables N(0, 0.1^2).
template <typename Scalar>
ad::ParameterSet<Scalar> init_dynamics(const TransformerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ad::ParameterSet<Scalar> p;
  auto normal = [&](ad::Shape s, double stddev) {
    ad::Tensor<Scalar> t(std::move(s));
    for (Index i = 0; i < t.size(); ++i) t.data(i) = static_cast<Scalar>(stddev * rng.normal());
    return t;
  };
  const Index d = cfg.d_model, f = cfg.ff_width;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  p.add("dynamics/action_embed", normal({cfg.n_actions, d}, 1.0));
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string pre = layer_prefix(l);
    p.add(pre + "ln1_g", ad::Tensor<Scalar>({d}, Scalar(1)));
    p.add(pre + "ln1_b", ad::Tensor<Scalar>({d}));
    for (const char* w : {"wq", "wk", "wv", "wo"}) p.add(pre + w, normal({d, d}, sd));
    p.add(pre + "bo", ad::Tensor<Scalar>({d}));
    for (Index h = 0; h < cfg.heads; ++h) p.add(pre + "rel_bias" + std::to_string(h), normal({2 * cfg.tokens() - 1, 1}, 0.1));
    p.add(pre + "ln2_g", ad::Tensor<Scalar>({d}, Scalar(1)));
    p.add(pre + "ln2_b", ad::Tensor<Scalar>({d}));
    p.add(pre + "ff1_w", normal({d, f}, sd));
    p.add(pre + "ff1_b", ad::Tensor<Scalar>({f}));
    p.add(pre + "ff2_w", normal({f, d}, 1.0 / std::sqrt(static_cast<double>(f))));
    p.add(pre + "ff2_b", ad::Tensor<Scalar>({d}));
  }
  return p;
}

/// Action tokens [n, d] by row lookup in the action table (equivalent to a
/// linear layer on one-hot actions).
template <typename Scalar>
ad::Var<Scalar> embed_actions(const std::map<std::string, ad::Var<Scalar>>& vars, const std::vector<Index>& actions) {
  return ad::embedding_lookup(vars.at("dynamics/action_embed"), actions);
}

/// [L, L] logit bias with entry (i, j) = table[i - j + L - 1].
template <typename Scalar>
ad::Var<Scalar> relative_bias(const ad::Var<Scalar>& table, Index L) {
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(L * L));
  for (Index i = 0; i < L; ++i)
    for (Index j = 0; j < L; ++j) idx.push_back(i - j + L - 1);
  return ad::reshape(ad::embedding_lookup(table, idx), {L, L});
}

/// Runs the transformer on an arbitrary token tensor [B, L, d]; L must not
/// exceed the configured 2K.
template <typename Scalar>
ad::Var<Scalar> transformer_forward(const TransformerConfig& cfg, const std::map<std::string, ad::Var<Scalar>>& vars,
                                    const ad::Var<Scalar>& tokens) {
  const auto& s = tokens.shape();
  if (s.size() != 3 || s[2] != cfg.d_model || s[1] > cfg.tokens())
    throw InvalidInput("transformer: expected [B, <=" + std::to_string(cfg.tokens()) + ", " +
                       std::to_string(cfg.d_model) + "] tokens, got " + ad::shape_str(s));
  const Index L = s[1], dh = cfg.d_model / cfg.heads;
  const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Scalar eps = static_cast<Scalar>(cfg.ln_eps);
  ad::Var<Scalar> h = tokens;
  for (Index l = 0; l < cfg.layers; ++l) {
    const std::string pre = layer_prefix(l);
    const auto n1 = ad::add(ad::mul(ad::layer_norm(h, eps), vars.at(pre + "ln1_g")), vars.at(pre + "ln1_b"));
    const auto q = ad::matmul(n1, vars.at(pre + "wq"));
    const auto k = ad::matmul(n1, vars.at(pre + "wk"));
    const auto v = ad::matmul(n1, vars.at(pre + "wv"));
    std::vector<ad::Var<Scalar>> heads;
    for (Index hd = 0; hd < cfg.heads; ++hd) {
      const auto qh = cfg.heads == 1 ? q : ad::slice(q, 2, hd * dh, dh);
      const auto kh = cfg.heads == 1 ? k : ad::slice(k, 2, hd * dh, dh);
      const auto vh = cfg.heads == 1 ? v : ad::slice(v, 2, hd * dh, dh);
      auto logits = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh);
      if (cfg.position_bias) {
        // The table covers offsets of the full 2K window; shorter inputs use
        // its centre.
        const auto table = vars.at(pre + "rel_bias" + std::to_string(hd));
        const Index full = cfg.tokens();
        const auto centre = L == full ? table : ad::slice(table, 0, full - L, 2 * L - 1);
        logits = ad::add(logits, relative_bias(centre, L));
      }
      heads.push_back(ad::matmul(ad::softmax(logits, -1), vh));
    }
    const auto att = cfg.heads == 1 ? heads[0] : ad::concat(heads, 2);
    h = ad::add(h, ad::add(ad::matmul(att, vars.at(pre + "wo")), vars.at(pre + "bo")));
    const auto n2 = ad::add(ad::mul(ad::layer_norm(h, eps), vars.at(pre + "ln2_g")), vars.at(pre + "ln2_b"));
    const auto ff = ad::gelu(ad::add(ad::matmul(n2, vars.at(pre + "ff1_w")), vars.at(pre + "ff1_b")));
    h = ad::add(h, ad::add(ad::matmul(ff, vars.at(pre + "ff2_w")), vars.at(pre + "ff2_b")));
  }
  return h;
}

/// Interleaves states [B, K, d] with actions (B*K indices, row-major) as
/// (s_0, a_0, s_1, a_1, ...) and returns the outputs at state positions,
/// [B, K, d].
template <typename Scalar>
ad::Var<Scalar> forward_dynamics(const TransformerConfig& cfg, const std::map<std::string, ad::Var<Scalar>>& vars,
                                 const ad::Var<Scalar>& states, const std::vector<Index>& actions) {
  const auto& s = states.shape();
  if (s.size() != 3 || s[1] != cfg.seq_len || s[2] != cfg.d_model)
    throw InvalidInput("forward_dynamics: expected [B, " + std::to_string(cfg.seq_len) + ", " +
                       std::to_string(cfg.d_model) + "] states, got " + ad::shape_str(s));
  const Index B = s[0], K = s[1], d = s[2];
  if (static_cast<Index>(actions.size()) != B * K)
    throw InvalidInput("forward_dynamics: expected " + std::to_string(B * K) + " actions, got " +
                       std::to_string(actions.size()));
  const auto a = ad::reshape(embed_actions(vars, actions), {B, K, 1, d});
  const auto st = ad::reshape(states, {B, K, 1, d});
  const auto tokens = ad::reshape(ad::concat<Scalar>({st, a}, 2), {B, 2 * K, d});
  const auto out = ad::reshape(transformer_forward(cfg, vars, tokens), {B, K, 2, d});
  return ad::reshape(ad::slice(out, 2, 0, 1), {B, K, d});
}

}  // namespace bisimlab::dynamics
