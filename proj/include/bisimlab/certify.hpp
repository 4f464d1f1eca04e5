#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bisimlab/common.hpp"

namespace bisimlab::certify {

/// Outcome of one certifier over its grid of cases. `worst` is the largest
/// observed value of the certified quantity and `limit` the value it must
/// not exceed.
struct Certificate {
  std::string name;
  long cases = 0;
  long failures = 0;
  long allowed_failures = 0;
  double worst = 0.0;
  double limit = 0.0;
  std::string detail;

  bool passed() const { return failures <= allowed_failures; }
};

nlohmann::json to_json(const Certificate& c);

/// Worst observed contraction ratio minus gamma over 50 random MDPs for each
/// gamma in {0.5, 0.9, 0.99}; limit 1e-9.
Certificate contraction(std::uint64_t seed);

/// Worst fixed-point diameter minus the reward-range bound on the same grid;
/// limit 1e-9.
Certificate diameter(std::uint64_t seed);

/// Worst gap_observed minus 2 e_p / (1 - gamma) over 5 base MDPs with 20
/// perturbations each; limit 1e-9.
Certificate gap(std::uint64_t seed);

/// Largest fixed-point entry of zero-reward MDPs solved with at most two
/// iterations; limit 1e-9.
Certificate collapse(std::uint64_t seed);

/// Seeds of the canonical linear setting whose erank does not increase
/// strictly over the first 10 steps; at most one of 10 may fail.
Certificate erank_improvement(std::uint64_t seed);

/// Deviation of the learned filter from the closed form, best of the two
/// noise readings; limit 5e-2.
Certificate low_pass_filter(std::uint64_t seed);

/// Every certifier above, in order.
std::vector<Certificate> all(std::uint64_t seed);

}  // namespace bisimlab::certify
