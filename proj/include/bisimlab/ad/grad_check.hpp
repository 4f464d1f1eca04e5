#pragma once

#include <algorithm>
#include <functional>

#include "bisimlab/ad/params.hpp"

namespace bisimlab::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  long coordinates_checked = 0;
  std::string worst_parameter;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds the scalar loss on a fresh graph from bound parameters.
using LossBuilder = std::function<Var<double>(Graph<double>&, const std::map<std::string, Var<double>>&)>;

/// Compares reverse-mode gradients with central differences on a random
/// subsample of at least `min_coords` coordinates (all of them if fewer
/// exist). Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const LossBuilder& f, const ParameterSet<double>& params, double step,
                                  long min_coords = 64, std::uint64_t seed = 0, double floor = 1e-6) {
  if (!(step > 0.0)) throw InvalidInput("grad_check: step must be positive");
  std::map<std::string, Tensor<double>> analytic;
  {
    Graph<double> g(seed);
    const auto loss = f(g, params.bind(g));
    g.backward(loss);
    analytic = g.leaf_grads();
  }
  std::vector<std::pair<std::string, Index>> coords;
  for (const auto& [name, t] : params.tensors())
    for (Index i = 0; i < t.size(); ++i) coords.emplace_back(name, i);
  Rng rng(seed);
  if (static_cast<long>(coords.size()) > min_coords) {
    for (long k = 0; k < min_coords; ++k) {
      const auto pick = k + static_cast<long>(rng.below(coords.size() - static_cast<std::size_t>(k)));
      std::swap(coords[static_cast<std::size_t>(k)], coords[static_cast<std::size_t>(pick)]);
    }
    coords.resize(static_cast<std::size_t>(min_coords));
  }

  auto eval = [&](const ParameterSet<double>& p) {
    Graph<double> g(seed);
    return f(g, p.bind(g)).value().item();
  };
  GradCheckReport report;
  ParameterSet<double> probe = params;
  for (const auto& [name, i] : coords) {
    double& x = probe.at(name).data(i);
    const double x0 = x;
    x = x0 + step;
    const double up = eval(probe);
    x = x0 - step;
    const double down = eval(probe);
    x = x0;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.at(name).data(i);
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    ++report.coordinates_checked;
    if (err > report.max_rel_error || report.worst_index < 0) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      report.worst_parameter = name;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace bisimlab::ad
