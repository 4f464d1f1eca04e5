#pragma once

#include <vector>

#include "bisimlab/common.hpp"

namespace bisimlab::metric {

/// A probability vector restricted to its support.
struct SparseDistribution {
  std::vector<Index> support;
  std::vector<double> mass;
};

/// Drops zero entries. Throws InvalidInput unless `p` is non-negative and sums
/// to 1 within 1e-9; the kept masses are rescaled to sum to exactly 1.
SparseDistribution sparsify(const Eigen::Ref<const VectorXd>& p);

/// Exact minimum-cost transport between two distributions on the states of
/// `ground`. Solved as a min-cost flow with successive shortest paths, so the
/// returned value is the LP optimum, not an entropic approximation.
double transport_cost(const SparseDistribution& mu, const SparseDistribution& nu,
                      const Eigen::Ref<const MatrixXd>& ground);

/// Wasserstein-1 distance under the ground cost `ground` (a pseudometric or
/// any non-negative cost table).
double wasserstein1(const Eigen::Ref<const VectorXd>& mu, const Eigen::Ref<const VectorXd>& nu,
                    const Eigen::Ref<const MatrixXd>& ground);

}  // namespace bisimlab::metric
