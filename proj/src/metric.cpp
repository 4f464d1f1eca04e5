#include "bisimlab/metric.hpp"

#include <thread>

namespace bisimlab::metric {

namespace {

// Rows of the upper triangle are independent W1 problems; split them across
// hardware threads when there is enough work.
template <typename Fn>
void parallel_rows(Index n, Fn&& fn) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (hw == 1 || n < 32) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  const Index n_workers = std::min<Index>(hw, n);
  for (Index w = 0; w < n_workers; ++w) {
    workers.emplace_back([&, w] {
      for (Index i = w; i < n; i += n_workers) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

std::vector<SparseDistribution> sparse_rows(const MatrixXd& p) {
  std::vector<SparseDistribution> rows;
  rows.reserve(static_cast<std::size_t>(p.rows()));
  for (Index s = 0; s < p.rows(); ++s) rows.push_back(sparsify(p.row(s).transpose()));
  return rows;
}

void check_dynamics(const mdp::PolicyDynamics& dyn, double gamma) {
  require(dyn.p_pi.rows() == dyn.p_pi.cols(), "policy dynamics: p_pi must be square");
  require(dyn.r_pi.size() == dyn.p_pi.rows(), "policy dynamics: r_pi length mismatch");
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
}

MatrixXd operator_values(const MatrixXd& d, const std::vector<SparseDistribution>& rows, const VectorXd& r,
                         double gamma) {
  const Index n = d.rows();
  MatrixXd out = MatrixXd::Zero(n, n);
  parallel_rows(n, [&](Index i) {
    for (Index j = i + 1; j < n; ++j) {
      const double w = transport_cost(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)], d);
      out(i, j) = std::abs(r(i) - r(j)) + gamma * w;
    }
  });
  out.triangularView<Eigen::StrictlyLower>() = out.transpose();
  return out;
}

}  // namespace

MetricMatrix::MetricMatrix(MatrixXd values) : d_(std::move(values)) {
  require(d_.rows() == d_.cols(), "MetricMatrix: must be square");
  require(d_.allFinite(), "MetricMatrix: non-finite entry");
  require((d_.array() >= 0.0).all(), "MetricMatrix: negative entry");
  require(d_.diagonal().isZero(0.0), "MetricMatrix: non-zero diagonal");
  require(d_ == d_.transpose(), "MetricMatrix: not symmetric");
}

MetricMatrix apply_operator(const MetricMatrix& d, const mdp::PolicyDynamics& dyn, double gamma) {
  check_dynamics(dyn, gamma);
  require(d.size() == dyn.p_pi.rows(), "apply_operator: metric size does not match state count");
  return MetricMatrix(operator_values(d.values(), sparse_rows(dyn.p_pi), dyn.r_pi, gamma));
}

FixedPointReport solve_fixed_point(const mdp::PolicyDynamics& dyn, double gamma, double r_min, double r_max,
                                   double tol, long max_iter) {
  check_dynamics(dyn, gamma);
  require(tol > 0.0, "solve_fixed_point: tol must be positive");
  require(max_iter >= 1, "solve_fixed_point: max_iter must be at least 1");
  require(r_min <= r_max, "solve_fixed_point: invalid reward range");

  const auto rows = sparse_rows(dyn.p_pi);
  const Index n = dyn.p_pi.rows();
  FixedPointReport report;
  report.diameter_bound = diameter_bound(r_min, r_max, gamma);

  MatrixXd current = MatrixXd::Zero(n, n);
  double previous_residual = -1.0;
  for (long it = 1; it <= max_iter; ++it) {
    MatrixXd next = operator_values(current, rows, dyn.r_pi, gamma);
    const double residual = n > 0 ? (next - current).cwiseAbs().maxCoeff() : 0.0;
    report.residual_history.push_back(residual);
    // Ratios of updates near the round-off floor of the iterate carry no
    // information, so they are left out of the observed rate.
    const double floor = 1e-6 * std::max(1.0, next.cwiseAbs().maxCoeff());
    if (previous_residual > floor)
      report.contraction_ratio_observed = std::max(report.contraction_ratio_observed, residual / previous_residual);
    previous_residual = residual;
    current = std::move(next);
    report.iterations = it;
    report.residual = residual;
    if (residual <= tol) {
      report.metric = MetricMatrix(std::move(current));
      report.diameter = report.metric.diameter();
      if (report.diameter > report.diameter_bound + 1e-9)
        throw InternalError("solve_fixed_point: diameter " + std::to_string(report.diameter) +
                            " exceeds bound " + std::to_string(report.diameter_bound));
      return report;
    }
  }
  throw ConvergenceError("solve_fixed_point: no convergence after " + std::to_string(max_iter) +
                             " iterations (residual " + std::to_string(report.residual) + ")",
                         report.residual, report.iterations);
}

FixedPointReport solve_fixed_point(const mdp::TabularMDP& mdp, const mdp::Policy& policy, double tol,
                                   long max_iter) {
  return solve_fixed_point(mdp::policy_dynamics(mdp, policy), mdp.gamma(), mdp.r_min(), mdp.r_max(), tol,
                           max_iter);
}

double contraction_ratio(const MetricMatrix& d1, const MetricMatrix& d2, const mdp::PolicyDynamics& dyn,
                         double gamma) {
  const double denom = sup_distance(d1, d2);
  if (denom == 0.0) return 0.0;
  const MetricMatrix f1 = apply_operator(d1, dyn, gamma);
  const MetricMatrix f2 = apply_operator(d2, dyn, gamma);
  return sup_distance(f1, f2) / denom;
}

MetricMatrix random_metric(Index n_states, double scale, Rng& rng) {
  require(n_states >= 1, "random_metric: need at least one state");
  require(scale >= 0.0, "random_metric: scale must be non-negative");
  MatrixXd d = MatrixXd::Zero(n_states, n_states);
  for (Index i = 0; i < n_states; ++i)
    for (Index j = i + 1; j < n_states; ++j) d(i, j) = d(j, i) = rng.uniform(0.0, scale);
  return MetricMatrix(std::move(d));
}

double certify_contraction(const mdp::TabularMDP& mdp, const mdp::Policy& policy, long n_trials,
                           std::uint64_t seed) {
  require(n_trials >= 1, "certify_contraction: need at least one trial");
  const auto dyn = mdp::policy_dynamics(mdp, policy);
  double scale = diameter_bound(mdp.r_min(), mdp.r_max(), mdp.gamma());
  if (scale <= 0.0) scale = 1.0;
  Rng rng(seed);
  double worst = 0.0;
  for (long t = 0; t < n_trials; ++t) {
    const MetricMatrix d1 = random_metric(mdp.n_states(), scale, rng);
    const MetricMatrix d2 = random_metric(mdp.n_states(), scale, rng);
    worst = std::max(worst, contraction_ratio(d1, d2, dyn, mdp.gamma()));
  }
  return worst;
}

mdp::TabularMDP perturb_transitions(const mdp::TabularMDP& mdp, double scale, std::uint64_t seed) {
  require(scale >= 0.0, "perturb_transitions: scale must be non-negative");
  const double w = std::min(scale, 1.0);
  MatrixXd p = mdp.transition();
  if (w == 0.0) return mdp;
  Rng rng(seed);
  for (Index r = 0; r < p.rows(); ++r) {
    VectorXd noise(p.cols());
    for (Index c = 0; c < p.cols(); ++c) noise(c) = rng.gamma(1.0);
    noise /= noise.sum();
    p.row(r) = (1.0 - w) * p.row(r) + w * noise.transpose();
    p.row(r) /= p.row(r).sum();
  }
  return mdp.with_transition(std::move(p));
}

GapReport certify_gap_bound(const mdp::TabularMDP& mdp, const mdp::TabularMDP& perturbed,
                            const mdp::Policy& policy, double tol) {
  require(perturbed.n_states() == mdp.n_states() && perturbed.n_actions() == mdp.n_actions(),
          "certify_gap_bound: perturbed MDP has different dimensions");
  const long max_iter = 1'000'000;
  const auto dyn = mdp::policy_dynamics(mdp, policy);
  const auto dyn_hat = mdp::policy_dynamics(perturbed, policy);
  const auto truth = solve_fixed_point(dyn, mdp.gamma(), mdp.r_min(), mdp.r_max(), tol, max_iter);
  const auto approx = solve_fixed_point(dyn_hat, mdp.gamma(), mdp.r_min(), mdp.r_max(), tol, max_iter);

  GapReport report;
  for (Index s = 0; s < mdp.n_states(); ++s) {
    const double w = wasserstein1(dyn.p_pi.row(s).transpose(), dyn_hat.p_pi.row(s).transpose(),
                                  truth.metric.values());
    report.e_p = std::max(report.e_p, w);
  }
  report.gap_observed = sup_distance(truth.metric, approx.metric);
  report.gap_bound = 2.0 * report.e_p / (1.0 - mdp.gamma());
  report.holds = report.gap_observed <= report.gap_bound + 1e-9;
  return report;
}

GapReport certify_gap_bound(const mdp::TabularMDP& mdp, const mdp::Policy& policy, double perturbation_scale,
                            double tol, std::uint64_t seed) {
  return certify_gap_bound(mdp, perturb_transitions(mdp, perturbation_scale, seed), policy, tol);
}

MetricMatrix collapse_witness(const mdp::TabularMDP& zero_reward_mdp, const mdp::Policy& policy, double tol) {
  if (!zero_reward_mdp.reward().isZero(0.0))
    throw InvalidInput("collapse_witness: reward table is not identically zero");
  auto report = solve_fixed_point(zero_reward_mdp, policy, tol, 1'000'000);
  if (report.diameter > tol)
    throw InternalError("collapse_witness: zero-reward fixed point has diameter " + std::to_string(report.diameter));
  return std::move(report.metric);
}

nlohmann::json to_json(const MetricMatrix& metric) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < metric.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < metric.size(); ++j) row.push_back(metric(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const FixedPointReport& report) {
  return nlohmann::json{{"metric", to_json(report.metric)},
                        {"iterations", report.iterations},
                        {"residual", report.residual},
                        {"contraction_ratio_observed", report.contraction_ratio_observed},
                        {"diameter", report.diameter},
                        {"diameter_bound", report.diameter_bound}};
}

nlohmann::json to_json(const GapReport& report) {
  return nlohmann::json{{"e_p", report.e_p},
                        {"gap_observed", report.gap_observed},
                        {"gap_bound", report.gap_bound},
                        {"holds", report.holds}};
}

}  // namespace bisimlab::metric
