#include <doctest.h>

#include "bisimlab/metric.hpp"
#include "oracles.hpp"

using namespace bisimlab;
using namespace bisimlab::metric;
using mdp::Policy;
using mdp::TabularMDP;

namespace {

MatrixXd discrete_metric(Index n) { return MatrixXd::Ones(n, n) - MatrixXd::Identity(n, n); }

// Two absorbing states with rewards 0 and 1.
TabularMDP absorbing_pair(double gamma) {
  MatrixXd p(2, 2);
  p << 1, 0, 0, 1;
  MatrixXd r(2, 1);
  r << 0, 1;
  return TabularMDP(p, r, gamma, VectorXd::Constant(2, 0.5));
}

VectorXd random_distribution(Index n, Index support, Rng& rng) {
  VectorXd p = VectorXd::Zero(n);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (Index k = 0; k < support; ++k) {
    const Index pick = k + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - k)));
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick)]);
    p(idx[static_cast<std::size_t>(k)]) = 0.05 + rng.uniform();
  }
  return p / p.sum();
}

}  // namespace

TEST_CASE("wasserstein1 on point masses returns the ground cost") {
  Rng rng(5);
  const MatrixXd g = random_metric(4, 3.0, rng).values();
  for (Index a = 0; a < 4; ++a)
    for (Index b = 0; b < 4; ++b) {
      VectorXd mu = VectorXd::Zero(4), nu = VectorXd::Zero(4);
      mu(a) = 1;
      nu(b) = 1;
      CHECK(wasserstein1(mu, nu, g) == g(a, b));
    }
}

TEST_CASE("wasserstein1 of a distribution with itself is zero") {
  Rng rng(6);
  const MatrixXd g = random_metric(5, 2.0, rng).values();
  const VectorXd mu = random_distribution(5, 4, rng);
  CHECK(wasserstein1(mu, mu, g) == 0.0);
}

TEST_CASE("wasserstein1 under the discrete metric matches the vertex oracle") {
  VectorXd mu(3), nu(3);
  mu << 0.5, 0.5, 0.0;
  nu << 0.0, 0.5, 0.5;
  const double oracle_value = oracle::wasserstein_by_vertices(mu, nu, discrete_metric(3));
  CHECK(oracle_value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(wasserstein1(mu, nu, discrete_metric(3)) == doctest::Approx(oracle_value).epsilon(1e-12));
}

TEST_CASE("wasserstein1 agrees with exhaustive vertex enumeration on small supports") {
  Rng rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = 2 + static_cast<Index>(rng.below(5));
    const Index ka = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(std::min<Index>(4, n))));
    const Index kb = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(std::min<Index>(4, n))));
    const VectorXd mu = random_distribution(n, ka, rng);
    const VectorXd nu = random_distribution(n, kb, rng);
    const MatrixXd g = random_metric(n, 1.0 + 9.0 * rng.uniform(), rng).values();
    const double expected = oracle::wasserstein_by_vertices(mu, nu, g);
    CHECK(std::abs(wasserstein1(mu, nu, g) - expected) <= 1e-10 * std::max(1.0, expected));
  }
}

TEST_CASE("wasserstein1 rejects malformed inputs") {
  VectorXd mu(2), nu(2);
  mu << 0.6, 0.6;
  nu << 0.5, 0.5;
  CHECK_THROWS_AS(wasserstein1(mu, nu, discrete_metric(2)), InvalidInput);
  mu << 1.2, -0.2;
  CHECK_THROWS_AS(wasserstein1(mu, nu, discrete_metric(2)), InvalidInput);
  mu << 0.5, 0.5;
  CHECK_THROWS_AS(wasserstein1(mu, nu, discrete_metric(3)), InvalidInput);
}

TEST_CASE("operator applied to zero on a zero-reward MDP stays zero") {
  const auto mdp = mdp::make_random_mdp(5, 2, {0.0, 0.0}, 0.9, 1);
  const auto dyn = mdp::policy_dynamics(mdp, Policy::uniform(5, 2));
  CHECK(apply_operator(MetricMatrix::zero(5), dyn, 0.9).values().isZero(0.0));
}

TEST_CASE("two absorbing states: hand-iterated operator") {
  const auto mdp = absorbing_pair(0.9);
  const auto dyn = mdp::policy_dynamics(mdp, Policy::uniform(2, 1));
  const auto d1 = apply_operator(MetricMatrix::zero(2), dyn, 0.9);
  CHECK(d1(0, 1) == 1.0);
  const auto d2 = apply_operator(d1, dyn, 0.9);
  CHECK(d2(0, 1) == doctest::Approx(1.9).epsilon(1e-15));
  CHECK(d2(1, 0) == d2(0, 1));
}

TEST_CASE("fixed point of two absorbing states is the geometric series") {
  const double tol = 1e-10;
  const auto report = solve_fixed_point(absorbing_pair(0.9), Policy::uniform(2, 1), tol, 100000);
  CHECK(std::abs(report.metric(0, 1) - 1.0 / (1.0 - 0.9)) <= 10 * tol);
  CHECK(report.residual <= tol);
  CHECK(report.diameter <= report.diameter_bound + 1e-9);
  CHECK(report.contraction_ratio_observed <= 0.9 + 1e-9);
}

TEST_CASE("zero-reward fixed point is reached after one iteration") {
  const auto mdp = mdp::make_random_mdp(6, 3, {0.0, 0.0}, 0.9, 8);
  const auto report = solve_fixed_point(mdp, Policy::uniform(6, 3), 1e-9, 10);
  CHECK(report.iterations == 1);
  CHECK(report.metric.values().isZero(0.0));
}

TEST_CASE("random 6-state MDP at gamma 0.99 respects the diameter bound") {
  const auto mdp = mdp::make_random_mdp(6, 3, {0.0, 1.0}, 0.99, 11);
  const auto report = solve_fixed_point(mdp, Policy::uniform(6, 3), 1e-8, 1'000'000);
  CHECK(report.diameter_bound == doctest::Approx(100.0));
  CHECK(report.diameter <= 100.0);
}

TEST_CASE("non-convergence carries the residual") {
  const auto mdp = absorbing_pair(0.99);
  try {
    solve_fixed_point(mdp, Policy::uniform(2, 1), 1e-12, 5);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.iterations() == 5);
    CHECK(e.residual() == doctest::Approx(std::pow(0.99, 4)));
  }
  CHECK_THROWS_AS(solve_fixed_point(mdp, Policy::uniform(2, 1), 0.0, 5), InvalidInput);
  CHECK_THROWS_AS(solve_fixed_point(mdp, Policy::uniform(2, 1), 1e-6, 0), InvalidInput);
}

TEST_CASE("fixed-point properties over many random MDPs") {
  long checked = 0;
  for (double gamma : {0.5, 0.9, 0.99}) {
    for (std::uint64_t seed = 0; seed < 34; ++seed) {
      const Index n = 3 + static_cast<Index>(seed % 4);
      const Index na = 1 + static_cast<Index>(seed % 3);
      const auto mdp = mdp::make_random_mdp(n, na, {-1.0, 1.0}, gamma, 1000 + seed);
      const auto dyn = mdp::policy_dynamics(mdp, Policy::uniform(n, na));
      const double tol = 1e-9;
      const auto report = solve_fixed_point(dyn, gamma, mdp.r_min(), mdp.r_max(), tol, 1'000'000);
      CHECK(report.diameter <= report.diameter_bound + 1e-9);
      CHECK(report.contraction_ratio_observed <= gamma + 1e-9);
      const auto& h = report.residual_history;
      for (std::size_t k = 2; k < h.size(); ++k) CHECK(h[k] <= h[k - 1] + 1e-12);
      const auto again = apply_operator(report.metric, dyn, gamma);
      CHECK(sup_distance(again, report.metric) <= tol * (1.0 + gamma));
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("observed contraction never exceeds gamma") {
  const auto mdp = mdp::make_random_mdp(6, 2, {0.0, 1.0}, 0.5, 21);
  CHECK(certify_contraction(mdp, Policy::uniform(6, 2), 100, 3) <= 0.5 + 1e-9);
  const auto mdp99 = mdp::make_random_mdp(5, 3, {-1.0, 1.0}, 0.99, 22);
  CHECK(certify_contraction(mdp99, Policy::uniform(5, 3), 50, 4) <= 0.99 + 1e-9);
}

TEST_CASE("contraction ratio of equal metrics is zero") {
  const auto mdp = mdp::make_random_mdp(4, 2, {0.0, 1.0}, 0.9, 5);
  const auto dyn = mdp::policy_dynamics(mdp, Policy::uniform(4, 2));
  Rng rng(1);
  const auto d = random_metric(4, 5.0, rng);
  CHECK(contraction_ratio(d, d, dyn, 0.9) == 0.0);
}

TEST_CASE("deterministic transitions attain the contraction ratio gamma") {
  // States 0 -> 2 and 1 -> 3; 2 and 3 are absorbing. Metrics that differ only
  // at the successor pair (2, 3) move F(d)(0, 1) by exactly gamma times that.
  MatrixXd p = MatrixXd::Zero(4, 4);
  p(0, 2) = 1;
  p(1, 3) = 1;
  p(2, 2) = 1;
  p(3, 3) = 1;
  const TabularMDP mdp(p, MatrixXd::Zero(4, 1), 0.8, VectorXd::Constant(4, 0.25), {0.0, 1.0});
  const auto dyn = mdp::policy_dynamics(mdp, Policy::uniform(4, 1));
  MatrixXd a = MatrixXd::Zero(4, 4);
  MatrixXd b = a;
  b(2, 3) = b(3, 2) = 1.0;
  const double ratio = contraction_ratio(MetricMatrix(a), MetricMatrix(b), dyn, 0.8);
  CHECK(ratio == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(ratio <= 0.8 + 1e-9);
}

TEST_CASE("zero perturbation gives zero gap") {
  const auto mdp = mdp::make_random_mdp(5, 2, {0.0, 1.0}, 0.9, 9);
  const auto report = certify_gap_bound(mdp, Policy::uniform(5, 2), 0.0, 1e-10, 1);
  CHECK(report.e_p == 0.0);
  CHECK(report.gap_observed == 0.0);
  CHECK(report.holds);
}

TEST_CASE("swap perturbation on two absorbing states respects the gap bound") {
  const double eps = 0.1;
  const auto mdp = absorbing_pair(0.9);
  MatrixXd p(2, 2);
  p << 1 - eps, eps, eps, 1 - eps;
  const auto report = certify_gap_bound(mdp, mdp.with_transition(p), Policy::uniform(2, 1), 1e-11);
  CHECK(report.e_p == doctest::Approx(eps * 10.0).epsilon(1e-8));
  CHECK(report.gap_observed > 0.0);
  CHECK(report.gap_observed <= report.gap_bound + 1e-9);
  CHECK(report.holds);
}

TEST_CASE("gap bound holds across perturbation seeds") {
  for (std::uint64_t base = 0; base < 3; ++base) {
    const auto mdp = mdp::make_random_mdp(6, 2, {0.0, 1.0}, 0.9, 50 + base);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto report = certify_gap_bound(mdp, Policy::uniform(6, 2), 0.1, 1e-10, seed);
      CHECK(report.holds);
      CHECK(report.gap_observed <= report.gap_bound + 1e-9);
    }
  }
}

TEST_CASE("zero reward collapses the metric") {
  mdp::GridSpec g;
  g.width = 3;
  g.height = 3;
  g.reward = mdp::RewardSpec::Zero;
  const auto grid = mdp::make_gridworld(g);
  CHECK(collapse_witness(grid, Policy::uniform(9, 4), 1e-12).values().isZero(0.0));
  const auto rnd = mdp::make_random_mdp(10, 3, {0.0, 0.0}, 0.95, 4);
  CHECK(collapse_witness(rnd, Policy::uniform(10, 3), 1e-12).values().isZero(0.0));
  CHECK_THROWS_AS(collapse_witness(mdp::make_random_mdp(4, 2, {0.0, 1.0}, 0.9, 1), Policy::uniform(4, 2), 1e-9),
                  InvalidInput);
}

TEST_CASE("near-zero reward range bounds the diameter") {
  const double gamma = 0.9;
  const auto mdp = mdp::make_random_mdp(6, 2, {0.0, 1e-6}, gamma, 12);
  const auto report = solve_fixed_point(mdp, Policy::uniform(6, 2), 1e-15, 1'000'000);
  CHECK(report.diameter <= 1e-6 / (1 - gamma) + 1e-12);
}

TEST_CASE("cosine distance examples") {
  VectorXd u(3);
  u << 1, 2, 3;
  CHECK(cosine_distance(u, u) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_distance(u, -u) == 2.0);
  VectorXd e1 = VectorXd::Unit(3, 0), e2 = VectorXd::Unit(3, 1);
  CHECK(cosine_distance(e1, e2) == 1.0);
  CHECK_THROWS_AS(cosine_distance(VectorXd::Zero(3), u), InvalidInput);
  CHECK_THROWS_AS(cosine_distance(u, VectorXd::Ones(2)), InvalidInput);
}

TEST_CASE("cosine distance properties") {
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    VectorXd u(6), v(6);
    for (Index i = 0; i < 6; ++i) {
      u(i) = rng.normal();
      v(i) = rng.normal();
    }
    const double d = cosine_distance(u, v);
    CHECK(d >= 0.0);
    CHECK(d <= 2.0);
    CHECK(d == cosine_distance(v, u));
    const double a = std::exp(rng.uniform(-3.0, 3.0));
    CHECK(std::abs(cosine_distance((a * u).eval(), v) - d) <= 1e-12);
    CHECK(std::abs(cosine_distance(u, (a * v).eval()) - d) <= 1e-12);
  }
}

TEST_CASE("report json carries the documented fields") {
  const auto report = solve_fixed_point(absorbing_pair(0.5), Policy::uniform(2, 1), 1e-9, 1000);
  const auto j = to_json(report);
  for (const char* key : {"metric", "iterations", "residual", "contraction_ratio_observed", "diameter", "diameter_bound"})
    CHECK(j.contains(key));
  const auto g = to_json(GapReport{});
  for (const char* key : {"e_p", "gap_observed", "gap_bound"}) CHECK(g.contains(key));
}
