#include "bisimlab/transport.hpp"

#include <algorithm>
#include <limits>

namespace bisimlab::metric {

namespace {

constexpr double kMassEps = 1e-15;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Workspace for the dense successive-shortest-path solver. Node layout:
// 0 = source, [1, m] = supply, [m+1, m+n] = demand, m+n+1 = sink.
struct FlowWorkspace {
  std::vector<double> flow;  // m x n, row-major
  std::vector<double> supply_left;
  std::vector<double> demand_left;
  std::vector<double> potential;
  std::vector<double> dist;
  std::vector<Index> parent;
  std::vector<char> done;
};

double solve_transport(const SparseDistribution& mu, const SparseDistribution& nu,
                       const Eigen::Ref<const MatrixXd>& ground) {
  const Index m = static_cast<Index>(mu.support.size());
  const Index n = static_cast<Index>(nu.support.size());
  const Index nodes = m + n + 2;
  const Index source = 0;
  const Index sink = m + n + 1;

  thread_local FlowWorkspace ws;
  ws.flow.assign(static_cast<std::size_t>(m * n), 0.0);
  ws.supply_left.assign(mu.mass.begin(), mu.mass.end());
  ws.demand_left.assign(nu.mass.begin(), nu.mass.end());
  ws.potential.assign(static_cast<std::size_t>(nodes), 0.0);
  ws.dist.resize(static_cast<std::size_t>(nodes));
  ws.parent.resize(static_cast<std::size_t>(nodes));
  ws.done.resize(static_cast<std::size_t>(nodes));

  auto cost = [&](Index i, Index j) { return ground(mu.support[static_cast<std::size_t>(i)], nu.support[static_cast<std::size_t>(j)]); };
  auto flow = [&](Index i, Index j) -> double& { return ws.flow[static_cast<std::size_t>(i * n + j)]; };
  auto supply_open = [&] {
    return std::any_of(ws.supply_left.begin(), ws.supply_left.end(), [](double v) { return v > kMassEps; });
  };
  auto demand_open = [&] {
    return std::any_of(ws.demand_left.begin(), ws.demand_left.end(), [](double v) { return v > kMassEps; });
  };

  // Each augmentation either exhausts a supply, a demand, or a reverse edge;
  // the bound only guards against a logic error.
  const long max_augment = 4L * (m + 1) * (n + 1) + 16;
  long augmentations = 0;
  while (supply_open() && demand_open()) {
    if (++augmentations > max_augment) throw InternalError("transport: augmentation budget exceeded");
    auto pot = [&](Index v) { return ws.potential[static_cast<std::size_t>(v)]; };
    std::fill(ws.dist.begin(), ws.dist.end(), kInf);
    std::fill(ws.parent.begin(), ws.parent.end(), Index{-1});
    std::fill(ws.done.begin(), ws.done.end(), char{0});
    ws.dist[static_cast<std::size_t>(source)] = 0.0;

    auto relax = [&](Index u, Index v, double c) {
      const double reduced = std::max(0.0, c + pot(u) - pot(v));
      const double cand = ws.dist[static_cast<std::size_t>(u)] + reduced;
      if (cand < ws.dist[static_cast<std::size_t>(v)]) {
        ws.dist[static_cast<std::size_t>(v)] = cand;
        ws.parent[static_cast<std::size_t>(v)] = u;
      }
    };

    for (;;) {
      Index u = -1;
      double best = kInf;
      for (Index v = 0; v < nodes; ++v) {
        if (!ws.done[static_cast<std::size_t>(v)] && ws.dist[static_cast<std::size_t>(v)] < best) {
          best = ws.dist[static_cast<std::size_t>(v)];
          u = v;
        }
      }
      if (u < 0) break;
      ws.done[static_cast<std::size_t>(u)] = 1;
      if (u == sink) break;
      if (u == source) {
        for (Index i = 0; i < m; ++i)
          if (ws.supply_left[static_cast<std::size_t>(i)] > kMassEps) relax(source, 1 + i, 0.0);
      } else if (u <= m) {
        const Index i = u - 1;
        for (Index j = 0; j < n; ++j) relax(u, 1 + m + j, cost(i, j));
      } else {
        const Index j = u - 1 - m;
        for (Index i = 0; i < m; ++i)
          if (flow(i, j) > kMassEps) relax(u, 1 + i, -cost(i, j));
        if (ws.demand_left[static_cast<std::size_t>(j)] > kMassEps) relax(u, sink, 0.0);
      }
    }
    if (!std::isfinite(ws.dist[static_cast<std::size_t>(sink)]))
      throw InternalError("transport: no augmenting path although mass remains");

    const double sink_dist = ws.dist[static_cast<std::size_t>(sink)];
    for (Index v = 0; v < nodes; ++v)
      ws.potential[static_cast<std::size_t>(v)] += std::min(ws.dist[static_cast<std::size_t>(v)], sink_dist);

    // Bottleneck along the path sink <- j <- i <- ... <- i0 <- source.
    double push = kInf;
    for (Index v = sink; v != source;) {
      const Index u = ws.parent[static_cast<std::size_t>(v)];
      if (u == source) {
        push = std::min(push, ws.supply_left[static_cast<std::size_t>(v - 1)]);
      } else if (v == sink) {
        push = std::min(push, ws.demand_left[static_cast<std::size_t>(u - 1 - m)]);
      } else if (u > m) {
        push = std::min(push, flow(v - 1, u - 1 - m));  // reverse edge j -> i
      }
      v = u;
    }
    for (Index v = sink; v != source;) {
      const Index u = ws.parent[static_cast<std::size_t>(v)];
      if (u == source) {
        ws.supply_left[static_cast<std::size_t>(v - 1)] -= push;
      } else if (v == sink) {
        ws.demand_left[static_cast<std::size_t>(u - 1 - m)] -= push;
      } else if (u > m) {
        flow(v - 1, u - 1 - m) -= push;
      } else {
        flow(u - 1, v - 1 - m) += push;
      }
      v = u;
    }
  }

  double total = 0.0;
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      const double f = flow(i, j);
      if (f > 0.0) total += f * cost(i, j);
    }
  return total;
}

}  // namespace

SparseDistribution sparsify(const Eigen::Ref<const VectorXd>& p) {
  if (!p.allFinite()) throw InvalidInput("distribution has non-finite entries");
  if ((p.array() < 0.0).any()) throw InvalidInput("distribution has negative entries");
  const double total = p.sum();
  if (std::abs(total - 1.0) > 1e-9)
    throw InvalidInput("distribution sums to " + std::to_string(total) + ", expected 1");
  SparseDistribution out;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) {
      out.support.push_back(i);
      out.mass.push_back(p(i) / total);
    }
  }
  return out;
}

double transport_cost(const SparseDistribution& mu, const SparseDistribution& nu,
                      const Eigen::Ref<const MatrixXd>& ground) {
  if (mu.support.empty() || nu.support.empty()) throw InvalidInput("transport: empty support");
  if (mu.support == nu.support && mu.mass == nu.mass) {
    bool zero_diag = true;
    for (Index s : mu.support) zero_diag = zero_diag && ground(s, s) == 0.0;
    if (zero_diag) return 0.0;
  }
  // A point mass admits a single coupling.
  if (mu.support.size() == 1) {
    double total = 0.0;
    for (std::size_t j = 0; j < nu.support.size(); ++j) total += nu.mass[j] * ground(mu.support[0], nu.support[j]);
    return total;
  }
  if (nu.support.size() == 1) {
    double total = 0.0;
    for (std::size_t i = 0; i < mu.support.size(); ++i) total += mu.mass[i] * ground(mu.support[i], nu.support[0]);
    return total;
  }
  return solve_transport(mu, nu, ground);
}

double wasserstein1(const Eigen::Ref<const VectorXd>& mu, const Eigen::Ref<const VectorXd>& nu,
                    const Eigen::Ref<const MatrixXd>& ground) {
  if (ground.rows() != ground.cols()) throw InvalidInput("wasserstein1: ground metric must be square");
  if (mu.size() != ground.rows() || nu.size() != ground.rows())
    throw InvalidInput("wasserstein1: distributions have length " + std::to_string(mu.size()) + " and " +
                       std::to_string(nu.size()) + " but ground metric is " + std::to_string(ground.rows()) +
                       "x" + std::to_string(ground.cols()));
  if ((ground.array() < 0.0).any() || !ground.allFinite())
    throw InvalidInput("wasserstein1: ground costs must be finite and non-negative");
  return transport_cost(sparsify(mu), sparsify(nu), ground);
}

}  // namespace bisimlab::metric
