#include "bisimlab/objective.hpp"

namespace bisimlab::objective {

Weighting parse_weighting(const std::string& name) {
  if (name == "beta-on-behavior") return Weighting::BetaOnBehavior;
  if (name == "beta-on-reconstruction") return Weighting::BetaOnReconstruction;
  throw InvalidInput("unknown loss weighting '" + name + "' (expected beta-on-behavior or beta-on-reconstruction)");
}

std::string to_string(Weighting w) { return w == Weighting::BetaOnBehavior ? "beta-on-behavior" : "beta-on-reconstruction"; }

Terms parse_terms(const std::string& name) {
  if (name == "full") return Terms::Full;
  if (name == "behavior_only") return Terms::BehaviorOnly;
  if (name == "reconstruction_only") return Terms::ReconstructionOnly;
  throw InvalidInput("unknown objective terms '" + name + "' (expected full, behavior_only or reconstruction_only)");
}

std::string to_string(Terms t) {
  switch (t) {
    case Terms::Full:
      return "full";
    case Terms::BehaviorOnly:
      return "behavior_only";
    case Terms::ReconstructionOnly:
      return "reconstruction_only";
  }
  return "full";
}

double combine(double l_behavior, double l_reconstruction, double beta, Weighting w, Terms t) {
  require(beta >= 0.0, "combine: beta must be non-negative");
  require(l_behavior >= 0.0 && l_reconstruction >= 0.0, "combine: loss components must be non-negative");
  switch (t) {
    case Terms::BehaviorOnly:
      return l_behavior;
    case Terms::ReconstructionOnly:
      return l_reconstruction;
    case Terms::Full:
      break;
  }
  return w == Weighting::BetaOnBehavior ? l_reconstruction + beta * l_behavior : l_behavior + beta * l_reconstruction;
}

nlohmann::json to_json(const LossBreakdown& b) {
  return {{"l_behavior", b.l_behavior},
          {"l_reconstruction", b.l_reconstruction},
          {"beta", b.beta},
          {"l_total", b.l_total},
          {"weighting", to_string(b.weighting)},
          {"terms", to_string(b.terms)}};
}

std::vector<std::vector<Index>> sample_pairing(Index batch, Index steps, Rng& rng) {
  require(batch >= 2, "sample_pairing: need a batch of at least 2");
  require(steps >= 0, "sample_pairing: negative step count");
  std::vector<std::vector<Index>> out;
  for (Index t = 0; t < steps; ++t) {
    std::vector<Index> perm(static_cast<std::size_t>(batch));
    // Rejection sampling of a uniform derangement; about e tries on average.
    for (;;) {
      for (Index b = 0; b < batch; ++b) perm[static_cast<std::size_t>(b)] = b;
      for (Index b = batch - 1; b > 0; --b)
        std::swap(perm[static_cast<std::size_t>(b)], perm[rng.below(static_cast<std::uint64_t>(b + 1))]);
      bool ok = true;
      for (Index b = 0; b < batch && ok; ++b) ok = perm[static_cast<std::size_t>(b)] != b;
      if (ok) break;
    }
    out.push_back(std::move(perm));
  }
  return out;
}

}  // namespace bisimlab::objective
