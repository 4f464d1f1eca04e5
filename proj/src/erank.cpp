#include "bisimlab/erank.hpp"

#include <fstream>
#include <iomanip>

namespace bisimlab::erank_lab {

namespace {

MatrixXd gaussian(Index rows, Index cols, Rng& rng) {
  return MatrixXd::NullaryExpr(rows, cols, [&] { return rng.normal(); });
}

// Columns are samples: clean ~ N(0, D).
MatrixXd sample_clean(const VectorXd& d, Index count, Rng& rng) {
  return d.cwiseSqrt().asDiagonal() * gaussian(d.size(), count, rng);
}

MatrixXd correlation(const MatrixXd& features) {
  return features * features.transpose() / static_cast<double>(features.cols());
}

}  // namespace

VectorXd closed_form_filter(const VectorXd& d, double noise) {
  require(d.size() > 0, "closed_form_filter: empty spectrum");
  require((d.array() > 0.0).all() && d.allFinite(), "closed_form_filter: spectrum must be positive");
  for (Index i = 1; i < d.size(); ++i) require(d(i) <= d(i - 1), "closed_form_filter: spectrum must be non-increasing");
  require(noise > 0.0 && std::isfinite(noise), "closed_form_filter: noise term must be positive");
  return (d.array() / (d.array() + noise)).sqrt().matrix();
}

FilterVariants filter_variants(const VectorXd& d, double sigma2) {
  require(sigma2 > 0.0, "filter_variants: sigma2 must be positive");
  return {closed_form_filter(d, std::sqrt(sigma2)), closed_form_filter(d, sigma2)};
}

void LinearSetting::validate() const {
  require(n >= 1 && k >= 1 && k <= n, "LinearSetting: need 1 <= k <= n");
  require(d.size() == n, "LinearSetting: d must have n entries");
  require((d.array() > 0.0).all(), "LinearSetting: d must be positive");
  for (Index i = 1; i < n; ++i) require(d(i) <= d(i - 1), "LinearSetting: d must be non-increasing");
  require(sigma2 > 0.0 && std::isfinite(sigma2), "LinearSetting: sigma2 must be positive");
  require(w_f.rows() == k && w_f.cols() == n, "LinearSetting: W_f must be k x n");
  require(w.rows() == k && w.cols() == k, "LinearSetting: W must be k x k");
  require(lr >= 0.0 && std::isfinite(lr), "LinearSetting: learning rate must be non-negative");
}

LinearSetting linear_setting(Index n, Index k, double sigma2, std::uint64_t seed) {
  require(n >= 1 && k >= 1 && k <= n, "linear_setting: need 1 <= k <= n");
  LinearSetting s;
  s.n = n;
  s.k = k;
  s.sigma2 = sigma2;
  s.seed = seed;
  s.d.resize(s.n);
  for (Index i = 0; i < s.n; ++i) s.d(i) = 8.0 / std::pow(2.0, static_cast<double>(i));
  Rng rng(seed ^ 0x5eedf00dULL);
  const VectorXd u = gaussian(s.k, 1, rng);
  const VectorXd v = gaussian(s.n, 1, rng);
  const double rn = std::sqrt(static_cast<double>(s.n));
  s.w_f = u * v.transpose() / rn + 0.3 * gaussian(s.k, s.n, rng) / rn;
  s.w = MatrixXd::Identity(s.k, s.k);
  s.validate();
  return s;
}

LinearSetting canonical_setting(std::uint64_t seed) { return linear_setting(8, 4, 1.0, seed); }

std::vector<LinearStep> run_linear_experiment(const LinearSetting& setting, long steps, Index batch,
                                              Index eval_batch) {
  setting.validate();
  require(steps >= 0, "run_linear_experiment: negative step count");
  require(batch >= 1, "run_linear_experiment: batch must be positive");
  require(eval_batch >= 4096, "run_linear_experiment: evaluation batch must be at least 4096");
  Rng rng(setting.seed);
  const double sigma = std::sqrt(setting.sigma2);
  const MatrixXd eval_x = sample_clean(setting.d, eval_batch, rng) + sigma * gaussian(setting.n, eval_batch, rng);

  MatrixXd w_f = setting.w_f, w = setting.w;
  auto record = [&](long step, double loss) {
    const MatrixXd c = correlation(w * w_f * eval_x);
    if (!c.allFinite())
      throw InternalError("run_linear_experiment: features overflowed at step " + std::to_string(step));
    const auto rep = erank(c);
    return LinearStep{step, rep.erank, loss, rep.eigenvalues};
  };
  std::vector<LinearStep> out{record(0, std::numeric_limits<double>::quiet_NaN())};
  const double norm = 1.0 / static_cast<double>(batch * setting.k);
  for (long t = 1; t <= steps; ++t) {
    const MatrixXd clean = sample_clean(setting.d, batch, rng);
    const MatrixXd x1 = clean + sigma * gaussian(setting.n, batch, rng);
    const MatrixXd x2 = clean + sigma * gaussian(setting.n, batch, rng);
    const MatrixXd h1 = w_f * x1;
    const MatrixXd err = w * h1 - w_f * x2;
    const double loss = err.squaredNorm() * norm;
    if (!std::isfinite(loss))
      throw InternalError("run_linear_experiment: non-finite loss at step " + std::to_string(t));
    const MatrixXd g_out = 2.0 * norm * err;
    const MatrixXd grad_w = g_out * h1.transpose();
    const MatrixXd grad_wf = w.transpose() * g_out * x1.transpose();
    w -= setting.lr * grad_w;
    w_f -= setting.lr * grad_wf;
    if (!w.allFinite() || !w_f.allFinite())
      throw InternalError("run_linear_experiment: weights became non-finite at step " + std::to_string(t));
    out.push_back(record(t, loss));
  }
  return out;
}

long increasing_prefix(const std::vector<LinearStep>& series) {
  long count = 0;
  for (std::size_t i = 1; i < series.size() && series[i].erank > series[i - 1].erank; ++i) ++count;
  return count;
}

FilterReport verify_filter_convergence(const LinearSetting& setting, long steps, Index batch, double lr,
                                       double tol) {
  setting.validate();
  require(steps >= 2, "verify_filter_convergence: need at least 2 steps");
  const Index n = setting.n, k = setting.k;
  MatrixXd w_f = MatrixXd::Zero(k, n);
  w_f.leftCols(k).setIdentity();
  MatrixXd w = setting.w;

  Rng rng(setting.seed ^ 0xf11e7ULL);
  const double sigma = std::sqrt(setting.sigma2);
  const double norm = 1.0 / static_cast<double>(batch * k);
  MatrixXd w_avg = MatrixXd::Zero(k, k);
  long averaged = 0;
  for (long t = 0; t < steps; ++t) {
    const MatrixXd clean = sample_clean(setting.d, batch, rng);
    const MatrixXd h1 = w_f * (clean + sigma * gaussian(n, batch, rng));
    const MatrixXd h2 = w_f * (clean + sigma * gaussian(n, batch, rng));
    const MatrixXd err = w * h1 - h2;
    w -= lr * 2.0 * norm * err * h1.transpose();
    if (!w.allFinite()) throw ConvergenceError("verify_filter_convergence: predictor diverged", INFINITY, t);
    if (t >= steps / 2) {
      w_avg += w;
      ++averaged;
    }
  }
  w_avg /= static_cast<double>(averaged);

  // Population moments in feature space.
  const MatrixXd cov_clean = w_f * setting.d.asDiagonal() * w_f.transpose();
  const MatrixXd cov_noisy = cov_clean + setting.sigma2 * w_f * w_f.transpose();
  FilterReport rep;
  rep.iterations = steps;
  rep.residual = (2.0 / static_cast<double>(k) * (w_avg * cov_noisy - cov_clean)).norm();
  if (!(rep.residual <= tol))
    throw ConvergenceError("verify_filter_convergence: population gradient " + std::to_string(rep.residual) +
                               " above tolerance",
                           rep.residual, steps);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov_clean);
  const MatrixXd v = es.eigenvectors().rowwise().reverse();
  const VectorXd dk = es.eigenvalues().reverse();
  rep.learned = (v.transpose() * w_avg * v).diagonal();
  const auto variants = filter_variants(dk, setting.sigma2);
  rep.sigma_variant = variants.sigma;
  rep.variance_variant = variants.variance;
  rep.wiener = (dk.array() / (dk.array() + setting.sigma2)).matrix();
  rep.deviation_sigma = (rep.learned - rep.sigma_variant).cwiseAbs().maxCoeff();
  rep.deviation_variance = (rep.learned - rep.variance_variant).cwiseAbs().maxCoeff();
  rep.deviation_wiener = (rep.learned - rep.wiener).cwiseAbs().maxCoeff();
  rep.matched = rep.deviation_sigma <= rep.deviation_variance ? "sigma" : "variance";
  rep.deviation = std::min(rep.deviation_sigma, rep.deviation_variance);
  return rep;
}

void write_erank_csv(const std::filesystem::path& path, const std::vector<LinearStep>& series) {
  std::ofstream f(path);
  if (!f) throw InvalidInput("write_erank_csv: cannot open " + path.string());
  const Index k = series.empty() ? 0 : series.front().eigenvalues.size();
  f << "step,erank,loss";
  for (Index i = 1; i <= k; ++i) f << ",eig_" << i;
  f << '\n' << std::setprecision(17);
  for (const auto& s : series) {
    f << s.step << ',' << s.erank << ',' << s.loss;
    for (Index i = 0; i < k; ++i) f << ',' << s.eigenvalues(i);
    f << '\n';
  }
}

}  // namespace bisimlab::erank_lab
