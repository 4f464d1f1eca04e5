#include <doctest.h>

#include <set>

#include "bisimlab/dynamics.hpp"
#include "bisimlab/objective.hpp"
#include "bisimlab/perception.hpp"

using namespace bisimlab;
using namespace bisimlab::objective;
using T = ad::Tensor<double>;

namespace {

T from(ad::Shape s, std::vector<double> v) {
  return T(std::move(s), Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size())));
}

double behavior_value(const T& latents, const T& predicted, const Eigen::MatrixXd& rewards, double gamma,
                      const std::vector<std::vector<Index>>& pairing) {
  ad::Graph<double> g;
  return behavior_loss(g.constant(latents), g.constant(predicted), rewards, gamma, pairing).value().item();
}

}  // namespace

TEST_CASE("identical states with equal rewards contribute nothing") {
  const T z = from({2, 2, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(2, 2, 0.3);
  CHECK(behavior_value(z, z, r, 0.9, {{1, 0}}) <= 1e-30);
}

TEST_CASE("hand-evaluated behavior loss") {
  Eigen::MatrixXd r(2, 2);
  r << 0, 0, 1, 0;
  // Successors (t = 1) identical, so their distance is 0 and the target is |0 - 1| = 1.
  const T pred = from({2, 2, 2}, {5, 5, 1, 1, 5, 5, 1, 1});
  const T far = from({2, 2, 2}, {1, 0, 9, 9, 0, 1, 9, 9});   // current distance 1
  const T near = from({2, 2, 2}, {1, 0, 9, 9, 1, 0, 9, 9});  // current distance 0
  CHECK(behavior_value(far, pred, r, 0.9, {{1, 0}}) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(behavior_value(near, pred, r, 0.9, {{1, 0}}) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("zero rewards and equal latents sit at the collapse fixed point") {
  const T z({3, 4, 5}, 0.7);
  Rng rng(1);
  CHECK(behavior_value(z, z, Eigen::MatrixXd::Zero(3, 4), 0.99, sample_pairing(3, 3, rng)) <= 1e-30);
}

TEST_CASE("behavior loss is invariant to global positive rescaling") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    T z({4, 5, 3}), p({4, 5, 3});
    for (Index i = 0; i < z.size(); ++i) {
      z.data(i) = rng.normal();
      p.data(i) = rng.normal();
    }
    Eigen::MatrixXd r = Eigen::MatrixXd::NullaryExpr(4, 5, [&] { return rng.uniform(); });
    const auto pairing = sample_pairing(4, 4, rng);
    const double a = std::exp(rng.uniform(-4, 4));
    T zs = z, ps = p;
    zs.data *= a;
    ps.data *= a;
    CHECK(std::abs(behavior_value(z, p, r, 0.9, pairing) - behavior_value(zs, ps, r, 0.9, pairing)) <= 1e-9);
  }
}

TEST_CASE("behavior loss sends no gradient through its target") {
  Rng rng(3);
  T z({2, 3, 2}), p({2, 3, 2});
  for (Index i = 0; i < z.size(); ++i) {
    z.data(i) = rng.normal();
    p.data(i) = rng.normal();
  }
  ad::Graph<double> g;
  const auto zl = g.leaf("z", z);
  const auto pl = g.leaf("p", p);
  g.backward(behavior_loss(zl, pl, Eigen::MatrixXd::Ones(2, 3), 0.9, sample_pairing(2, 2, rng)));
  CHECK(g.leaf_grads().at("p").data.isZero(0.0));
  CHECK_FALSE(g.leaf_grads().at("z").data.isZero(0.0));
}

TEST_CASE("behavior loss alone collapses a linear encoder under zero reward") {
  // Six states on a deterministic cycle, one-hot observations, z = x W.
  // Each window starts at a different state, so every state is seen at
  // several offsets. Predicted successors are the encoder's own next latents.
  const Index n = 6, B = 6, K = 4, d = 3;
  T x({B * K, n});
  for (Index b = 0; b < B; ++b)
    for (Index t = 0; t < K; ++t) x.data((b * K + t) * n + (b + t) % n) = 1.0;
  Rng rng(4);
  ad::ParameterSet<double> params;
  T w({n, d});
  for (Index i = 0; i < w.size(); ++i) w.data(i) = rng.normal();
  params.add("w", w);
  auto mean_pairwise = [&] {
    const auto z = params.at("w").matrix(n, d);
    double total = 0;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) total += 1.0 - z.row(i).dot(z.row(j)) / (z.row(i).norm() * z.row(j).norm());
    return total / static_cast<double>(n * (n - 1) / 2);
  };
  // Partner offsets 1, 2, 3 at t = 0, 1, 2 cover every unordered pair of states.
  std::vector<std::vector<Index>> pairing;
  for (Index t = 0; t + 1 < K; ++t) {
    pairing.emplace_back();
    for (Index b = 0; b < B; ++b) pairing.back().push_back((b + t + 1) % B);
  }
  const double lr = 0.3;
  std::vector<double> trace{mean_pairwise()};
  for (int step = 0; step < 4000; ++step) {
    ad::Graph<double> g;
    const auto vars = params.bind(g);
    const auto z = ad::reshape(ad::matmul(g.constant(x), vars.at("w")), {B, K, d});
    g.backward(behavior_loss(z, ad::stop_gradient(z), Eigen::MatrixXd::Zero(B, K), 0.9, pairing));
    params.at("w").data -= lr * g.leaf_grads().at("w").data;
    trace.push_back(mean_pairwise());
  }
  std::size_t increases = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) increases += trace[i] > trace[i - 1] + 1e-12;
  MESSAGE("initial " << trace.front() << " final " << trace.back() << " increases " << increases);
  CHECK(increases == 0);
  CHECK(trace.back() < 0.01);
}

TEST_CASE("reconstruction loss examples") {
  ad::Graph<double> g;
  const auto t0 = g.constant(T({1, 1, 2}, 0.0));
  const auto p1 = g.leaf("p", T({1, 1, 2}, 1.0));
  CHECK(reconstruction_loss(t0, p1).value().item() == 1.0);
  CHECK(reconstruction_loss(g.constant(T({1, 1, 2}, 1.0)), p1).value().item() == 0.0);
  CHECK_THROWS_AS(reconstruction_loss(p1, p1), InvalidInput);
  CHECK_THROWS_AS(reconstruction_loss(g.constant(T({1, 2, 2})), p1), InvalidInput);
}

TEST_CASE("gradients reach the online encoder and transformer but never the momentum encoder") {
  perception::EncoderConfig ecfg;
  ecfg.frame_size = 20;
  ecfg.channels = {8, 8, 8};
  ecfg.kernels = {4, 3, 3};
  ecfg.strides = {2, 2, 1};
  ecfg.latent_dim = 4;
  dynamics::TransformerConfig tcfg;
  tcfg.seq_len = 3;
  tcfg.d_model = 4;
  tcfg.ff_width = 8;
  const perception::SiameseEncoderPair<double> pair(ecfg, 1, 0.95);
  const auto dyn = dynamics::init_dynamics<double>(tcfg, 2);
  Rng rng(3);
  T frames({2 * 3, 3, 20, 20});
  for (Index i = 0; i < frames.size(); ++i) frames.data(i) = rng.uniform();

  ad::Graph<double> g;
  auto online = pair.online().bind(g);
  const auto momentum = pair.momentum().bind(g);
  for (auto& kv : dyn.bind(g)) online.insert(kv);
  const auto x = g.constant(frames);
  const auto z = ad::reshape(perception::encoder_forward(ecfg, online, x), {2, 3, 4});
  const auto target = ad::reshape(perception::encoder_forward(ecfg, momentum, x), {2, 3, 4});
  const auto pred = dynamics::forward_dynamics(tcfg, online, z, {0, 1, 2, 3, 0, 1});
  const auto beh = behavior_loss(z, pred, Eigen::MatrixXd::Zero(2, 3), 0.99, sample_pairing(2, 2, rng));
  const auto [total, parts] = total_loss(beh, reconstruction_loss(target, pred), 0.5, Weighting::BetaOnBehavior);
  g.backward(total);
  std::set<std::string> expected;
  for (const auto& [name, t] : pair.online().tensors()) expected.insert(name);
  for (const auto& [name, t] : dyn.tensors()) expected.insert(name);
  const auto names = g.leaf_names();
  CHECK(std::set<std::string>(names.begin(), names.end()) == expected);
  for (const auto& [name, v] : momentum) CHECK(g.grad(v) == nullptr);
  CHECK(parts.l_behavior >= 0.0);
  CHECK(parts.l_reconstruction >= 0.0);
  CHECK(parts.l_total == doctest::Approx(parts.l_reconstruction + 0.5 * parts.l_behavior).epsilon(1e-14));
}

TEST_CASE("loss weighting conventions") {
  CHECK(combine(1.0, 2.0, 0.0, Weighting::BetaOnReconstruction) == 1.0);
  CHECK(combine(1.0, 2.0, 0.5, Weighting::BetaOnReconstruction) == 2.0);
  CHECK(combine(1.0, 2.0, 0.5, Weighting::BetaOnBehavior) == 2.5);
  CHECK(combine(1.0, 2.0, 0.5, Weighting::BetaOnBehavior, Terms::BehaviorOnly) == 1.0);
  CHECK(combine(1.0, 2.0, 0.5, Weighting::BetaOnBehavior, Terms::ReconstructionOnly) == 2.0);
  CHECK_THROWS_AS(combine(1.0, 2.0, -0.1, Weighting::BetaOnReconstruction), InvalidInput);

  ad::Graph<double> g;
  const auto beh = g.constant(T::scalar(1.0));
  const auto rec = g.constant(T::scalar(2.0));
  const auto [v7, b7] = total_loss(beh, rec, 0.5, Weighting::BetaOnReconstruction);
  CHECK(v7.value().item() == 2.0);
  CHECK(std::abs(b7.l_total - (b7.l_behavior + b7.beta * b7.l_reconstruction)) <= 1e-12);
  const auto [v1, b1] = total_loss(beh, rec, 0.5, Weighting::BetaOnBehavior);
  CHECK(v1.value().item() == 2.5);
  CHECK(b1.l_total == 2.5);
  CHECK(parse_weighting("beta-on-reconstruction") == Weighting::BetaOnReconstruction);
  CHECK_THROWS_AS(parse_weighting("eq7"), InvalidInput);
  CHECK(parse_terms(to_string(Terms::BehaviorOnly)) == Terms::BehaviorOnly);
}

TEST_CASE("pairings are derangements and reproducible") {
  Rng a(9), b(9);
  const auto pa = sample_pairing(5, 30, a);
  CHECK(pa == sample_pairing(5, 30, b));
  for (const auto& row : pa) {
    std::set<Index> seen(row.begin(), row.end());
    CHECK(seen.size() == 5);
    for (Index i = 0; i < 5; ++i) CHECK(row[static_cast<std::size_t>(i)] != i);
  }
  Rng c(1);
  CHECK_THROWS_AS(sample_pairing(1, 3, c), InvalidInput);
}

TEST_CASE("reward normalizer") {
  const RewardNormalizer n{-1.0, 3.0};
  CHECK(n(-1.0) == 0.0);
  CHECK(n(3.0) == 1.0);
  CHECK(n(1.0) == 0.5);
  CHECK(RewardNormalizer{2.0, 2.0}(2.0) == 0.0);
}
