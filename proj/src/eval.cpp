#include "bisimlab/eval.hpp"

#include <algorithm>
#include <numeric>

namespace bisimlab::eval {

double pearson(const VectorXd& x, const VectorXd& y) {
  require(x.size() == y.size() && x.size() >= 2, "pearson: need two equal-length samples of size >= 2");
  const VectorXd a = x.array() - x.mean();
  const VectorXd b = y.array() - y.mean();
  const double den = a.norm() * b.norm();
  require(den > 0.0, "pearson: constant sample");
  return a.dot(b) / den;
}

VectorXd ranks(const VectorXd& x) {
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return x(i) < x(j); });
  VectorXd r(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && x(order[static_cast<std::size_t>(j + 1)]) == x(order[static_cast<std::size_t>(i)])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) r(order[static_cast<std::size_t>(k)]) = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const VectorXd& x, const VectorXd& y) { return pearson(ranks(x), ranks(y)); }

namespace {

void shuffle(VectorXd& v, Rng& rng) {
  for (Index i = v.size() - 1; i > 0; --i)
    std::swap(v(i), v(static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)))));
}

}  // namespace

PermutationResult spearman_permutation_test(const VectorXd& x, const VectorXd& y, long permutations,
                                            std::uint64_t seed) {
  require(permutations >= 1, "spearman_permutation_test: need at least one permutation");
  const VectorXd rx = ranks(x);
  VectorXd ry = ranks(y);
  PermutationResult out;
  out.statistic = pearson(rx, ry);
  out.permutations = permutations;
  Rng rng(seed);
  long extreme = 0;
  for (long p = 0; p < permutations; ++p) {
    shuffle(ry, rng);
    if (std::abs(pearson(rx, ry)) >= std::abs(out.statistic) - 1e-12) ++extreme;
  }
  out.p_value = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
  return out;
}

PermutationResult paired_spearman_test(const VectorXd& reference, const VectorXd& a, const VectorXd& b,
                                       long permutations, std::uint64_t seed) {
  require(permutations >= 1, "paired_spearman_test: need at least one permutation");
  require(reference.size() == a.size() && a.size() == b.size(), "paired_spearman_test: length mismatch");
  const VectorXd rr = ranks(reference);
  const VectorXd ra = ranks(a), rb = ranks(b);
  PermutationResult out;
  out.statistic = pearson(rr, ra) - pearson(rr, rb);
  out.permutations = permutations;
  Rng rng(seed);
  long extreme = 0;
  VectorXd pa(ra.size()), pb(rb.size());
  for (long p = 0; p < permutations; ++p) {
    for (Index i = 0; i < ra.size(); ++i) {
      const bool swap = (rng.next_u64() >> 63) != 0;
      pa(i) = swap ? rb(i) : ra(i);
      pb(i) = swap ? ra(i) : rb(i);
    }
    if (pearson(rr, pa) - pearson(rr, pb) >= out.statistic - 1e-12) ++extreme;
  }
  out.p_value = static_cast<double>(extreme + 1) / static_cast<double>(permutations + 1);
  return out;
}

RunConfig find_run_config(const std::filesystem::path& checkpoint) {
  const auto dir = checkpoint.parent_path();
  for (const auto& candidate : {dir / "config.json", dir.parent_path() / "config.json"})
    if (std::filesystem::exists(candidate)) return load_run_config(candidate);
  throw InvalidInput("no config.json next to checkpoint " + checkpoint.string());
}

Encoder load_encoder(const std::filesystem::path& checkpoint) {
  const RunConfig cfg = find_run_config(checkpoint);
  Encoder e{cfg.encoder_config(), train::encoder_params(ad::load_checkpoint(checkpoint))};
  return e;
}

Encoder initial_encoder(const RunConfig& cfg) {
  ad::TensorMap all = train::initial_model(cfg).tensors();
  return Encoder{cfg.encoder_config(), train::encoder_params(all)};
}

std::vector<std::pair<Index, Index>> sample_state_pairs(Index n_states, Index n_pairs, std::uint64_t seed) {
  require(n_states >= 2, "sample_state_pairs: need at least two states");
  require(n_pairs >= 0, "sample_state_pairs: negative pair count");
  Rng rng(seed);
  std::vector<std::pair<Index, Index>> out;
  out.reserve(static_cast<std::size_t>(n_pairs));
  const auto n = static_cast<std::uint64_t>(n_states);
  while (static_cast<Index>(out.size()) < n_pairs) {
    const auto i = static_cast<Index>(rng.below(n)), j = static_cast<Index>(rng.below(n));
    if (i != j) out.emplace_back(std::min(i, j), std::max(i, j));
  }
  return out;
}

metric::FixedPointReport exact_metric(const envs::PixelGridEnv& env, double tol, long max_iter) {
  const auto& m = env.mdp();
  return metric::solve_fixed_point(m, mdp::Policy::uniform(m.n_states(), m.n_actions()), tol, max_iter);
}

nlohmann::json to_json(const AlignmentReport& r) {
  return {{"n_pairs", r.n_pairs}, {"spearman", r.spearman}, {"pearson", r.pearson}, {"p_value_zero", r.p_value_zero}};
}

AlignmentReport evaluate_metric_alignment(const Encoder& encoder, const envs::PixelGridEnv& env,
                                          const metric::MetricMatrix& exact,
                                          const std::vector<std::pair<Index, Index>>& pairs, long permutations,
                                          std::uint64_t seed) {
  const Index n = env.mdp().n_states();
  require(exact.size() == n, "evaluate_metric_alignment: metric does not match the env");
  require(pairs.size() >= 2, "evaluate_metric_alignment: need at least two pairs");
  std::vector<envs::Observation> renders;
  renders.reserve(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; ++s) renders.push_back(env.canonical_observation(s));
  std::vector<const envs::Observation*> ptrs;
  for (const auto& o : renders) ptrs.push_back(&o);
  const MatrixXd z = encoder.encode(ptrs);

  AlignmentReport r;
  r.n_pairs = static_cast<Index>(pairs.size());
  r.learned.resize(r.n_pairs);
  r.exact.resize(r.n_pairs);
  for (Index p = 0; p < r.n_pairs; ++p) {
    const auto [i, j] = pairs[static_cast<std::size_t>(p)];
    require(i >= 0 && i < n && j >= 0 && j < n, "evaluate_metric_alignment: state out of range");
    r.learned(p) = metric::cosine_distance(z.row(i).transpose(), z.row(j).transpose());
    r.exact(p) = exact(i, j);
  }
  const auto test = spearman_permutation_test(r.exact, r.learned, permutations, seed);
  r.spearman = test.statistic;
  r.p_value_zero = test.p_value;
  r.pearson = pearson(r.exact, r.learned);
  return r;
}

nlohmann::json to_json(const InvarianceReport& r) {
  return {{"n_states", r.n_states},
          {"mean_distance", r.mean_distance},
          {"baseline_mean_distance", r.baseline_mean_distance}};
}

InvarianceReport evaluate_distractor_invariance(const Encoder& trained, const Encoder& baseline,
                                                const envs::PixelGridEnv& clean,
                                                const envs::PixelGridEnv& distracted, Index n_states,
                                                std::uint64_t seed) {
  require(n_states >= 1, "evaluate_distractor_invariance: need at least one state");
  const Index n = clean.mdp().n_states();
  require(distracted.mdp().n_states() == n, "evaluate_distractor_invariance: environments differ in size");
  Rng rng(seed);
  std::vector<envs::Observation> a, b;
  for (Index k = 0; k < n_states; ++k) {
    const auto s = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
    const auto phase = static_cast<long>(rng.below(1u << 20));
    a.push_back(clean.canonical_observation(s));
    b.push_back(distracted.canonical_observation(s, phase));
  }
  std::vector<const envs::Observation*> pa, pb;
  for (Index k = 0; k < n_states; ++k) {
    pa.push_back(&a[static_cast<std::size_t>(k)]);
    pb.push_back(&b[static_cast<std::size_t>(k)]);
  }
  const auto mean_dist = [&](const Encoder& e) {
    const MatrixXd za = e.encode(pa), zb = e.encode(pb);
    double sum = 0.0;
    for (Index k = 0; k < n_states; ++k) sum += metric::cosine_distance(za.row(k).transpose(), zb.row(k).transpose());
    return sum / static_cast<double>(n_states);
  };
  InvarianceReport r;
  r.n_states = n_states;
  r.mean_distance = mean_dist(trained);
  r.baseline_mean_distance = mean_dist(baseline);
  return r;
}

}  // namespace bisimlab::eval
