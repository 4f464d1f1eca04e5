#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bisimlab/common.hpp"

namespace bisimlab::erank_lab {

struct ErankReport {
  VectorXd eigenvalues;  // non-increasing
  VectorXd normalized;   // eigenvalues / sum
  double erank = 0.0;    // natural-log Shannon entropy of `normalized`
};

/// Effective rank of a symmetric PSD matrix. Asymmetry below 1e-10
/// (relative to the largest entry) is symmetrized away; larger asymmetry,
/// eigenvalues below -1e-8 or a zero spectrum are rejected.
template <typename Derived>
ErankReport erank(const Eigen::MatrixBase<Derived>& c_in) {
  const MatrixXd c = c_in.template cast<double>();
  require(c.rows() == c.cols() && c.rows() > 0, "erank: matrix must be square and non-empty");
  require(c.allFinite(), "erank: non-finite entry");
  const double scale = std::max(1.0, c.cwiseAbs().maxCoeff());
  require((c - c.transpose()).cwiseAbs().maxCoeff() < 1e-10 * scale, "erank: matrix is not symmetric");
  const MatrixXd sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  ErankReport out;
  out.eigenvalues = es.eigenvalues().reverse();
  if (out.eigenvalues.minCoeff() < -1e-8 * scale)
    throw InvalidInput("erank: negative eigenvalue " + std::to_string(out.eigenvalues.minCoeff()));
  out.eigenvalues = out.eigenvalues.cwiseMax(0.0);
  const double total = out.eigenvalues.sum();
  require(total > 0.0, "erank: zero spectrum");
  out.normalized = out.eigenvalues / total;
  for (Index i = 0; i < out.normalized.size(); ++i) {
    const double p = out.normalized(i);
    if (p > 0.0) out.erank -= p * std::log(p);
  }
  return out;
}

/// s_i = sqrt(d_i / (d_i + noise)). The noise term is used as supplied.
VectorXd closed_form_filter(const VectorXd& d, double noise);

/// The two readings of the denominator given a noise variance sigma2:
/// `sigma` adds sqrt(sigma2), `variance` adds sigma2.
struct FilterVariants {
  VectorXd sigma;
  VectorXd variance;
};
FilterVariants filter_variants(const VectorXd& d, double sigma2);

struct LinearSetting {
  Index n = 8;
  Index k = 4;
  VectorXd d;        // diagonal of the data covariance, non-increasing, > 0
  double sigma2 = 1.0;
  MatrixXd w_f;      // encoder, k x n
  MatrixXd w;        // predictor, k x k
  double lr = 0.002;
  std::uint64_t seed = 0;

  void validate() const;
};

/// n = 8, k = 4, d = (8, 4, ..., 1/16), sigma2 = 1, lr = 0.002. The encoder
/// starts near rank one (a random outer product plus a 0.3-scaled Gaussian
/// part); the predictor starts at the identity, so it shares the encoder's
/// eigenbasis from step 0.
LinearSetting canonical_setting(std::uint64_t seed);

/// The same construction for other sizes and noise levels:
/// d_i = 8 / 2^i for i < n.
LinearSetting linear_setting(Index n, Index k, double sigma2, std::uint64_t seed);

struct LinearStep {
  long step = 0;
  double erank = 0.0;
  double loss = 0.0;        // training loss of the step that produced this state; NaN at step 0
  VectorXd eigenvalues;     // spectrum of the evaluation correlation matrix
};

/// SGD on the reconstruction loss mean ||W W_f x1 - sg(W_f x2)||^2 / k with
/// x1, x2 independent noisy views of the same clean sample. Both W and W_f
/// move. Entry 0 is the initialization; entry t the state after t steps.
/// The evaluation batch is drawn once and reused.
std::vector<LinearStep> run_linear_experiment(const LinearSetting& setting, long steps, Index batch = 4096,
                                              Index eval_batch = 4096);

/// Length of the strictly increasing prefix of the erank series (number of
/// consecutive steps t >= 1 with erank_t > erank_{t-1}).
long increasing_prefix(const std::vector<LinearStep>& series);

struct FilterReport {
  VectorXd learned;           // predictor spectrum in the encoder eigenbasis
  VectorXd sigma_variant;
  VectorXd variance_variant;
  VectorXd wiener;            // population least-squares optimum d / (d + sigma2)
  double deviation_sigma = 0.0;
  double deviation_variance = 0.0;
  double deviation_wiener = 0.0;
  std::string matched;        // "sigma" or "variance", whichever deviates less
  double deviation = 0.0;     // min of the two printed-formula deviations
  double residual = 0.0;      // population gradient norm at the averaged predictor
  long iterations = 0;
};

/// Freeze W_f to the top-k coordinate directions of D and train W alone
/// with minibatch SGD; the last half of the iterates is averaged.
/// Throws ConvergenceError if the population gradient at the averaged
/// predictor stays above `tol`.
FilterReport verify_filter_convergence(const LinearSetting& setting, long steps, Index batch = 1024,
                                       double lr = 0.05, double tol = 1e-2);

/// CSV columns: step, erank, loss, eig_1 .. eig_k.
void write_erank_csv(const std::filesystem::path& path, const std::vector<LinearStep>& series);

}  // namespace bisimlab::erank_lab
