#include "bisimlab/certify.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "bisimlab/erank.hpp"
#include "bisimlab/metric.hpp"

namespace bisimlab::certify {

namespace {

constexpr double kSlack = 1e-9;
constexpr std::array<double, 3> kGammas{0.5, 0.9, 0.99};
constexpr long kMdpsPerGamma = 50;

struct GridCase {
  mdp::TabularMDP mdp;
  mdp::Policy policy;
};

// Small random MDPs with 3 to 7 states and 2 or 3 actions.
std::vector<GridCase> random_grid(std::uint64_t seed, std::pair<double, double> rewards) {
  Rng rng(seed);
  std::vector<GridCase> out;
  for (const double gamma : kGammas)
    for (long i = 0; i < kMdpsPerGamma; ++i) {
      const auto n = static_cast<Index>(3 + rng.below(5));
      const auto na = static_cast<Index>(2 + rng.below(2));
      auto m = mdp::make_random_mdp(n, na, rewards, gamma, rng.next_u64());
      out.push_back({std::move(m), mdp::Policy::uniform(n, na)});
    }
  return out;
}

void record(Certificate& c, double value) {
  ++c.cases;
  c.worst = c.cases == 1 ? value : std::max(c.worst, value);
  if (!(value <= c.limit)) ++c.failures;
}

}  // namespace

nlohmann::json to_json(const Certificate& c) {
  return {{"name", c.name},         {"passed", c.passed()}, {"cases", c.cases},
          {"failures", c.failures}, {"worst", c.worst},     {"limit", c.limit},
          {"detail", c.detail}};
}

Certificate contraction(std::uint64_t seed) {
  Certificate c{"contraction", 0, 0, 0, 0.0, kSlack, "max observed ratio minus gamma"};
  for (const auto& g : random_grid(seed, {-1.0, 1.0}))
    record(c, metric::certify_contraction(g.mdp, g.policy, 20, seed) - g.mdp.gamma());
  return c;
}

Certificate diameter(std::uint64_t seed) {
  Certificate c{"diameter", 0, 0, 0, 0.0, kSlack, "fixed-point diameter minus (r_max - r_min) / (1 - gamma)"};
  for (const auto& g : random_grid(seed, {-1.0, 1.0})) {
    const auto rep = metric::solve_fixed_point(g.mdp, g.policy, 1e-6, 100000);
    record(c, rep.diameter - rep.diameter_bound);
  }
  return c;
}

Certificate gap(std::uint64_t seed) {
  Certificate c{"gap", 0, 0, 0, 0.0, kSlack, "gap_observed minus 2 e_p / (1 - gamma)"};
  constexpr std::array<double, 5> scales{0.01, 0.05, 0.1, 0.2, 0.5};
  Rng rng(seed);
  for (int base = 0; base < 5; ++base) {
    const auto m = mdp::make_random_mdp(6, 2, {0.0, 1.0}, 0.9, rng.next_u64());
    const auto policy = mdp::Policy::uniform(6, 2);
    for (int trial = 0; trial < 20; ++trial) {
      const auto rep = metric::certify_gap_bound(m, policy, scales[static_cast<std::size_t>(trial % 5)], 1e-10,
                                                 rng.next_u64());
      record(c, rep.gap_observed - rep.gap_bound);
    }
  }
  return c;
}

Certificate collapse(std::uint64_t seed) {
  Certificate c{"collapse", 0, 0, 0, 0.0, kSlack, "largest fixed-point entry with zero rewards, two iterations"};
  auto cases = random_grid(seed, {0.0, 0.0});
  for (const auto& g : cases) {
    try {
      record(c, metric::solve_fixed_point(g.mdp, g.policy, kSlack, 2).diameter);
    } catch (const ConvergenceError& e) {
      record(c, e.residual());
    }
  }
  return c;
}

Certificate erank_improvement(std::uint64_t seed) {
  constexpr long kHorizon = 10;
  Certificate c{"erank_improvement", 0, 0, 1, 0.0, 0.0, "seeds whose erank is not strictly increasing for 10 steps"};
  long shortest = kHorizon;
  for (std::uint64_t s = seed; s < seed + 10; ++s) {
    const long prefix =
        erank_lab::increasing_prefix(erank_lab::run_linear_experiment(erank_lab::canonical_setting(s), kHorizon));
    ++c.cases;
    if (prefix < kHorizon) ++c.failures;
    shortest = std::min(shortest, prefix);
  }
  c.worst = static_cast<double>(c.failures);
  c.limit = static_cast<double>(c.allowed_failures);
  c.detail += "; shortest increasing prefix " + std::to_string(shortest);
  return c;
}

Certificate low_pass_filter(std::uint64_t seed) {
  Certificate c{"low_pass_filter", 0, 0, 0, 0.0, 5e-2, "max |learned - closed form|, best noise reading"};
  try {
    const auto rep = erank_lab::verify_filter_convergence(erank_lab::canonical_setting(seed), 4000);
    record(c, rep.deviation);
    std::ostringstream d;
    d << "; sigma reading " << rep.deviation_sigma << ", variance reading " << rep.deviation_variance
      << ", least-squares filter d/(d+sigma2) " << rep.deviation_wiener;
    c.detail += d.str();
  } catch (const ConvergenceError& e) {
    ++c.cases;
    ++c.failures;
    c.worst = e.residual();
    c.detail += std::string("; ") + e.what();
  }
  return c;
}

std::vector<Certificate> all(std::uint64_t seed) {
  return {contraction(seed), diameter(seed),         gap(seed),
          collapse(seed),    erank_improvement(seed), low_pass_filter(seed)};
}

}  // namespace bisimlab::certify
