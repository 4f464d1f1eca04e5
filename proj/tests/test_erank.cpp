#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bisimlab/erank.hpp"
#include "oracles.hpp"

using namespace bisimlab;
using namespace bisimlab::erank_lab;

namespace {

MatrixXd random_orthogonal(Index k, Rng& rng) {
  const MatrixXd g = MatrixXd::NullaryExpr(k, k, [&] { return rng.normal(); });
  return Eigen::HouseholderQR<MatrixXd>(g).householderQ();
}

}  // namespace

TEST_CASE("erank examples") {
  CHECK(erank(MatrixXd::Identity(4, 4)).erank == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  CHECK(std::log(4.0) == doctest::Approx(1.3863).epsilon(1e-4));
  const VectorXd v = VectorXd::LinSpaced(5, 1.0, 2.0);
  CHECK(std::abs(erank(v * v.transpose()).erank) <= 1e-12);
  const Eigen::Matrix2d c = Eigen::Vector2d(3, 1).asDiagonal();
  const auto rep = erank(c);
  CHECK(rep.normalized(0) == doctest::Approx(0.75));
  CHECK(rep.erank == doctest::Approx(-0.75 * std::log(0.75) - 0.25 * std::log(0.25)).epsilon(1e-14));
  CHECK(rep.erank == doctest::Approx(0.5623).epsilon(1e-4));
  CHECK(erank(Eigen::Matrix3f::Identity()).erank == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("erank rejects invalid input") {
  MatrixXd c = MatrixXd::Identity(3, 3);
  c(0, 0) = -0.1;
  CHECK_THROWS_AS(erank(c), InvalidInput);
  c = MatrixXd::Identity(3, 3);
  c(0, 1) = 1e-3;
  CHECK_THROWS_AS(erank(c), InvalidInput);
  CHECK_THROWS_AS(erank(MatrixXd::Zero(3, 3)), InvalidInput);
  CHECK_THROWS_AS(erank(MatrixXd::Identity(2, 3)), InvalidInput);
  c = MatrixXd::Identity(3, 3);
  c(0, 1) = 1e-13;
  CHECK(erank(c).erank == doctest::Approx(std::log(3.0)));
}

TEST_CASE("erank matches the spectral entropy oracle and its invariances") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = 1 + static_cast<Index>(rng.below(8));
    VectorXd lambda(k);
    for (Index i = 0; i < k; ++i) lambda(i) = rng.uniform() < 0.2 ? 0.0 : std::exp(rng.uniform(-5, 3));
    if (lambda.sum() == 0.0) lambda(0) = 1.0;
    const MatrixXd q = random_orthogonal(k, rng);
    MatrixXd c = q * lambda.asDiagonal() * q.transpose();
    c = 0.5 * (c + c.transpose());
    const double e = erank(c).erank;
    CHECK(std::abs(e - oracle::spectral_entropy({lambda.data(), lambda.data() + k})) <= 1e-9);
    CHECK(e >= -1e-12);
    CHECK(e <= std::log(static_cast<double>(k)) + 1e-12);
    const double a = std::exp(rng.uniform(-6, 6));
    CHECK(std::abs(erank(MatrixXd(a * c)).erank - e) <= 1e-12);
    const MatrixXd q2 = random_orthogonal(k, rng);
    MatrixXd rotated = q2 * c * q2.transpose();
    rotated = 0.5 * (rotated + rotated.transpose());
    CHECK(std::abs(erank(rotated).erank - e) <= 1e-9);
  }
}

TEST_CASE("closed-form filter examples and monotonicity") {
  const VectorXd big = VectorXd::Constant(1, 1e12);
  CHECK(closed_form_filter(big, 1.0)(0) == doctest::Approx(1.0).epsilon(1e-11));
  const VectorXd ones = VectorXd::Ones(3);
  for (Index i = 0; i < 3; ++i) CHECK(closed_form_filter(ones, 1.0)(i) == doctest::Approx(1.0 / std::sqrt(2.0)));
  const VectorXd s = closed_form_filter(Eigen::Vector2d(4, 1), 1.0);
  CHECK(s(0) == doctest::Approx(std::sqrt(0.8)).epsilon(1e-15));
  CHECK(s(1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(s(0) > s(1));
  CHECK(s(0) == doctest::Approx(0.8944).epsilon(1e-4));

  const auto v = filter_variants(Eigen::Vector2d(4, 1), 4.0);
  CHECK(v.sigma(0) == doctest::Approx(std::sqrt(4.0 / 6.0)));
  CHECK(v.variance(0) == doctest::Approx(std::sqrt(0.5)));

  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(10));
    VectorXd d(n);
    for (Index i = 0; i < n; ++i) d(i) = std::exp(rng.uniform(-4, 4));
    std::sort(d.data(), d.data() + n, std::greater<>());
    if (rng.uniform() < 0.3 && n > 1) d(n - 1) = d(n - 2);
    const VectorXd f = closed_form_filter(d, std::exp(rng.uniform(-3, 3)));
    for (Index i = 0; i < n; ++i) {
      CHECK(f(i) > 0.0);
      CHECK(f(i) < 1.0);
      if (i > 0) CHECK(f(i) <= f(i - 1));
    }
  }
  CHECK_THROWS_AS(closed_form_filter(Eigen::Vector2d(1, 2), 1.0), InvalidInput);
  CHECK_THROWS_AS(closed_form_filter(Eigen::Vector2d(2, 1), 0.0), InvalidInput);
  CHECK_THROWS_AS(closed_form_filter(Eigen::Vector2d(2, -1), 1.0), InvalidInput);
}

TEST_CASE("linear experiment trivial cases") {
  auto s = canonical_setting(3);
  const auto base = run_linear_experiment(s, 0);
  REQUIRE(base.size() == 1);
  CHECK(base[0].erank == erank(MatrixXd(base[0].eigenvalues.asDiagonal())).erank);
  s.lr = 0.0;
  const auto flat = run_linear_experiment(s, 5);
  for (const auto& step : flat) CHECK(step.erank == base[0].erank);
  CHECK(run_linear_experiment(canonical_setting(3), 7)[7].erank ==
        run_linear_experiment(canonical_setting(3), 7)[7].erank);
  CHECK_THROWS_AS(run_linear_experiment(s, 1, 16, 100), InvalidInput);
  s.d(0) = 0.01;
  CHECK_THROWS_AS(run_linear_experiment(s, 1), InvalidInput);
}

TEST_CASE("linear experiment reports divergence with the step index") {
  auto s = canonical_setting(0);
  s.lr = 1e3;
  try {
    run_linear_experiment(s, 50);
    FAIL("expected divergence");
  } catch (const InternalError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("erank increases over the initial training phase for at least 9 of 10 seeds") {
  const long horizon = 10;
  int passing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto series = run_linear_experiment(canonical_setting(seed), horizon);
    for (long t = 1; t <= horizon; ++t) CHECK(series[static_cast<std::size_t>(t)].loss < 10.0);
    passing += increasing_prefix(series) >= horizon;
  }
  CHECK(passing >= 9);
}

TEST_CASE("filter convergence trivial limits") {
  auto s = canonical_setting(1);
  s.sigma2 = 1e-6;
  const auto clean = verify_filter_convergence(s, 2000);
  CHECK((clean.learned.array() - 1.0).abs().maxCoeff() < 1e-2);
  CHECK(clean.deviation < 1e-2);

  auto sym = canonical_setting(2);
  sym.d.setConstant(2.0);
  const auto flat = verify_filter_convergence(sym, 4000, 8192);
  CHECK(flat.learned.maxCoeff() - flat.learned.minCoeff() < 1e-3);
  CHECK(flat.wiener.maxCoeff() == flat.wiener.minCoeff());
}

TEST_CASE("trained predictor converges to the population least-squares filter") {
  // The least-squares predictor in the aligned basis is d / (d + sigma2); the
  // square-root expression differs from it away from the noiseless limit.
  const auto rep = verify_filter_convergence(canonical_setting(0), 4000);
  CHECK(rep.deviation_wiener < 5e-3);
  CHECK(rep.residual <= 1e-2);
  CHECK(rep.sigma_variant.isApprox(rep.variance_variant));  // sigma2 = 1 makes both readings coincide
  for (Index i = 1; i < rep.learned.size(); ++i) CHECK(rep.learned(i) < rep.learned(i - 1));
}

TEST_CASE("non-convergence is reported with its residual") {
  try {
    verify_filter_convergence(canonical_setting(0), 4, 64, 1e-6, 1e-6);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 1e-6);
    CHECK(e.iterations() == 4);
  }
}

TEST_CASE("erank csv has the frozen header") {
  const auto path = std::filesystem::temp_directory_path() / "bisimlab_erank.csv";
  write_erank_csv(path, run_linear_experiment(canonical_setting(0), 2));
  std::ifstream f(path);
  std::string header, line;
  std::getline(f, header);
  CHECK(header == "step,erank,loss,eig_1,eig_2,eig_3,eig_4");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 3);
  std::filesystem::remove(path);
}
