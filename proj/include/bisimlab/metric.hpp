#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "bisimlab/common.hpp"
#include "bisimlab/mdp.hpp"
#include "bisimlab/transport.hpp"

namespace bisimlab::metric {

/// Symmetric, non-negative pairwise state distances with a zero diagonal.
class MetricMatrix {
 public:
  MetricMatrix() = default;
  /// Validates symmetry (exact), zero diagonal and non-negativity.
  explicit MetricMatrix(MatrixXd values);

  static MetricMatrix zero(Index n_states) { return MetricMatrix(MatrixXd::Zero(n_states, n_states)); }

  const MatrixXd& values() const { return d_; }
  Index size() const { return d_.rows(); }
  double operator()(Index i, Index j) const { return d_(i, j); }
  double diameter() const { return d_.size() == 0 ? 0.0 : d_.maxCoeff(); }

 private:
  MatrixXd d_;
};

inline double sup_distance(const MetricMatrix& a, const MetricMatrix& b) {
  return (a.values() - b.values()).cwiseAbs().maxCoeff();
}

/// Upper bound (r_max - r_min) / (1 - gamma) on any fixed-point entry.
inline double diameter_bound(double r_min, double r_max, double gamma) {
  return (r_max - r_min) / (1.0 - gamma);
}

/// One application of the on-policy bisimulation operator:
///   F(d)(i, j) = |r_i - r_j| + gamma * W1(d)(P_i, P_j).
MetricMatrix apply_operator(const MetricMatrix& d, const mdp::PolicyDynamics& dyn, double gamma);

struct FixedPointReport {
  MetricMatrix metric;
  long iterations = 0;
  double residual = 0.0;
  double contraction_ratio_observed = 0.0;
  double diameter = 0.0;
  double diameter_bound = 0.0;
  /// Sup-norm change of every iteration, in order.
  std::vector<double> residual_history;
};

/// Iterates the operator from d = 0 until the sup-norm update is at most
/// `tol`. Throws ConvergenceError (carrying the last residual) when
/// `max_iter` runs out, and InternalError if the converged diameter exceeds
/// the reward-range bound by more than 1e-9.
FixedPointReport solve_fixed_point(const mdp::TabularMDP& mdp, const mdp::Policy& policy, double tol,
                                   long max_iter);

FixedPointReport solve_fixed_point(const mdp::PolicyDynamics& dyn, double gamma, double r_min, double r_max,
                                   double tol, long max_iter);

/// ||F d1 - F d2||_inf / ||d1 - d2||_inf, or 0 when d1 == d2.
double contraction_ratio(const MetricMatrix& d1, const MetricMatrix& d2, const mdp::PolicyDynamics& dyn,
                         double gamma);

/// Symmetric cost table with zero diagonal and off-diagonal entries uniform
/// on [0, scale].
MetricMatrix random_metric(Index n_states, double scale, Rng& rng);

/// Largest observed contraction ratio over `n_trials` random metric pairs.
/// The operator is a gamma-contraction, so this never exceeds gamma.
double certify_contraction(const mdp::TabularMDP& mdp, const mdp::Policy& policy, long n_trials,
                           std::uint64_t seed);

struct GapReport {
  double e_p = 0.0;
  double gap_observed = 0.0;
  double gap_bound = 0.0;
  bool holds = true;
};

/// Mixes every transition row with Dirichlet(1) noise at weight
/// min(scale, 1) and renormalizes.
mdp::TabularMDP perturb_transitions(const mdp::TabularMDP& mdp, double scale, std::uint64_t seed);

/// Compares the fixed points of the true and perturbed dynamics against
/// 2 e_p / (1 - gamma), where e_p is measured with the true fixed point as
/// ground metric.
GapReport certify_gap_bound(const mdp::TabularMDP& mdp, const mdp::Policy& policy, double perturbation_scale,
                            double tol, std::uint64_t seed);

/// Same comparison against an explicit perturbed MDP.
GapReport certify_gap_bound(const mdp::TabularMDP& mdp, const mdp::TabularMDP& perturbed,
                            const mdp::Policy& policy, double tol);

/// Fixed point of a zero-reward MDP; every entry is at most `tol`.
MetricMatrix collapse_witness(const mdp::TabularMDP& zero_reward_mdp, const mdp::Policy& policy, double tol);

/// Minimum norm accepted by the cosine distance.
inline constexpr double kMinCosineNorm = 1e-8;

/// 1 - <u, v> / (|u| |v|), clamped to [0, 2], and exactly 0 for identical
/// inputs. Near-zero vectors are rejected rather than mapped to an arbitrary
/// distance.
template <typename DerivedA, typename DerivedB>
double cosine_distance(const Eigen::MatrixBase<DerivedA>& u, const Eigen::MatrixBase<DerivedB>& v) {
  if (u.size() != v.size())
    throw InvalidInput("cosine_distance: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
  const double nu = static_cast<double>(u.norm());
  const double nv = static_cast<double>(v.norm());
  if (!(nu >= kMinCosineNorm) || !(nv >= kMinCosineNorm))
    throw InvalidInput("cosine_distance: zero-norm input");
  if (u == v) return 0.0;
  const double c = static_cast<double>(u.dot(v)) / (nu * nv);
  return std::clamp(1.0 - c, 0.0, 2.0);
}

nlohmann::json to_json(const FixedPointReport& report);
nlohmann::json to_json(const GapReport& report);
nlohmann::json to_json(const MetricMatrix& metric);

}  // namespace bisimlab::metric
