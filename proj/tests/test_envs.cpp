#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bisimlab/config.hpp"
#include "bisimlab/replay.hpp"

using namespace bisimlab;
using namespace bisimlab::envs;

namespace {

EnvSpec small_spec(Distractor d = Distractor::None) {
  EnvSpec s;
  s.grid.width = 4;
  s.grid.height = 3;
  s.frame_size = 16;
  s.stack = 2;
  s.time_limit = 7;
  s.distractor = d;
  s.seed = 5;
  return s;
}

Transition tr(long episode, bool done) {
  Transition t;
  t.obs = {static_cast<std::uint8_t>(episode)};
  t.episode = episode;
  t.done = done;
  return t;
}

// Windows [i, i + K) that lie inside one episode, found by brute force.
std::vector<Index> oracle_windows(const std::vector<long>& episode_of, Index K) {
  std::vector<Index> out;
  for (Index i = 0; i + K <= static_cast<Index>(episode_of.size()); ++i) {
    bool same = true;
    for (Index j = i; j < i + K; ++j) same = same && episode_of[static_cast<std::size_t>(j)] == episode_of[static_cast<std::size_t>(i)];
    if (same) out.push_back(i);
  }
  return out;
}

}  // namespace

TEST_CASE("rendering is deterministic without distractors") {
  PixelGridEnv env(small_spec());
  for (Index s = 0; s < env.mdp().n_states(); ++s) {
    CHECK(env.render(s, 0) == env.render(s, 17));
    CHECK(env.canonical_observation(s) == env.canonical_observation(s, 3));
  }
  CHECK(env.render(0, 0) != env.render(1, 0));
  CHECK(env.cell_size() == 4);
}

TEST_CASE("drifting noise changes only background pixels") {
  PixelGridEnv env(small_spec(Distractor::DriftingNoise));
  long differing = 0;
  for (Index s = 0; s < env.mdp().n_states(); ++s) {
    const auto fg = env.foreground_mask(s);
    const auto a = env.render(s, 2), b = env.render(s, 9);
    for (std::size_t p = 0; p < a.size(); ++p) {
      if (fg[p]) CHECK(a[p] == b[p]);
      differing += a[p] != b[p];
    }
  }
  CHECK(differing > 0);

  PixelGridEnv fixed(small_spec(Distractor::StaticNoise));
  CHECK(fixed.render(3, 0) == fixed.render(3, 11));
  CHECK(fixed.render(3, 0) != PixelGridEnv(small_spec()).render(3, 0));
}

TEST_CASE("zero-reward gridworld pays nothing and episodes end at the time limit") {
  auto spec = small_spec();
  spec.grid.reward = mdp::RewardSpec::Zero;
  PixelGridEnv env(spec);
  env.reset();
  Rng rng(1);
  for (long t = 1; t <= spec.time_limit; ++t) {
    const auto r = env.step(static_cast<Index>(rng.below(4)));
    CHECK(r.reward == 0.0);
    CHECK(r.done == (t == spec.time_limit));
    CHECK(static_cast<Index>(r.obs.size()) == spec.stack * spec.frame_size * spec.frame_size);
  }
  CHECK(env.needs_reset());
  CHECK_THROWS_AS(env.step(0), InvalidInput);
}

TEST_CASE("invalid actions and specs are rejected") {
  PixelGridEnv env(small_spec());
  CHECK_THROWS_AS(env.step(0), InvalidInput);  // before reset
  env.reset();
  CHECK_THROWS_AS(env.step(4), InvalidInput);
  CHECK_THROWS_AS(env.step(-1), InvalidInput);
  auto bad = small_spec();
  bad.frame_size = 3;
  CHECK_THROWS_AS(PixelGridEnv{bad}, InvalidInput);
  CHECK_THROWS_AS(parse_distractor("video"), InvalidInput);
}

TEST_CASE("env spec json round trip") {
  const auto s = small_spec(Distractor::DriftingNoise);
  const auto back = env_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
}

TEST_CASE("collect with zero steps leaves the buffer unchanged") {
  PixelGridEnv env(small_spec());
  ReplayBuffer buf(10);
  Rng rng(0);
  collect(env, 3, buf, rng);
  const auto before = buf.size();
  const auto added = buf.total_added();
  collect(env, 0, buf, rng);
  CHECK(buf.size() == before);
  CHECK(buf.total_added() == added);
}

TEST_CASE("ring buffer evicts the oldest transitions") {
  PixelGridEnv env(small_spec());
  ReplayBuffer buf(100);
  Rng rng(2);
  collect(env, 150, buf, rng);
  CHECK(buf.size() == 100);
  CHECK(buf.total_added() == 150);

  PixelGridEnv env2(small_spec());
  ReplayBuffer all(200);
  Rng rng2(2);
  collect(env2, 150, all, rng2);
  for (Index i = 0; i < 100; ++i) {
    CHECK(buf.at(i).obs == all.at(i + 50).obs);
    CHECK(buf.at(i).action == all.at(i + 50).action);
    CHECK(buf.at(i).episode == all.at(i + 50).episode);
  }
}

TEST_CASE("seeded collection is reproducible") {
  auto run = [] {
    PixelGridEnv env(small_spec(Distractor::DriftingNoise));
    ReplayBuffer buf(64);
    Rng rng(9);
    collect(env, 40, buf, rng);
    return buf;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  for (Index i = 0; i < a.size(); ++i) {
    CHECK(a.at(i).obs == b.at(i).obs);
    CHECK(a.at(i).action == b.at(i).action);
    CHECK(a.at(i).reward == b.at(i).reward);
    CHECK(a.at(i).done == b.at(i).done);
    CHECK(a.at(i).state == b.at(i).state);
  }
}

TEST_CASE("windows never cross episode boundaries") {
  const Index K = 4;
  for (const std::vector<Index>& lengths :
       {std::vector<Index>{1, K - 1, K, K + 1}, std::vector<Index>{K + 1, K, K - 1, 1},
        std::vector<Index>{K, 1, 1, K + 1, K - 1, K}, std::vector<Index>{1, 1, 1}}) {
    ReplayBuffer buf(100);
    std::vector<long> episode_of;
    long ep = 0;
    for (const Index len : lengths) {
      for (Index t = 0; t < len; ++t) {
        buf.add(tr(ep, t + 1 == len));
        episode_of.push_back(ep);
      }
      ++ep;
    }
    CHECK(buf.valid_starts(K) == oracle_windows(episode_of, K));
    if (!buf.valid_starts(K).empty()) {
      Rng rng(3);
      for (const Index s : buf.sample_starts(50, K, rng))
        for (Index j = s; j < s + K; ++j) CHECK(buf.at(j).episode == buf.at(s).episode);
    } else {
      Rng rng(3);
      CHECK_THROWS_AS(buf.sample_starts(1, K, rng), InvalidInput);
    }
  }
}

TEST_CASE("windows of collected data stay inside episodes") {
  PixelGridEnv env(small_spec());
  ReplayBuffer buf(53);
  Rng rng(4);
  collect(env, 120, buf, rng);
  std::vector<long> episode_of;
  for (Index i = 0; i < buf.size(); ++i) episode_of.push_back(buf.at(i).episode);
  for (Index K = 1; K <= 8; ++K) CHECK(buf.valid_starts(K) == oracle_windows(episode_of, K));
}

TEST_CASE("run config round trip and unknown keys") {
  RunConfig c;
  c.seed = 42;
  c.env = small_spec(Distractor::StaticNoise);
  c.seq_len = 6;
  c.cube = {3, 4, 4};
  c.conv_channels = {4, 8};
  c.conv_kernels = {4, 3};
  c.conv_strides = {2, 1};
  c.latent_dim = 8;
  c.adam.lr = 3e-4;
  c.weighting = objective::Weighting::BetaOnReconstruction;
  c.terms = objective::Terms::BehaviorOnly;
  c.steps = 7;
  const auto back = run_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  const auto dir = std::filesystem::temp_directory_path() / "bisimlab_test_config";
  std::filesystem::create_directories(dir);
  save_run_config(dir / "c.json", c);
  CHECK(to_json(load_run_config(dir / "c.json")) == to_json(c));

  auto doc = to_json(c);
  doc["learning_rate"] = 0.1;
  CHECK_THROWS_AS(run_config_from_json(doc), InvalidInput);
  auto partial = nlohmann::json{{"seed", 3}};
  CHECK(run_config_from_json(partial).seq_len == RunConfig{}.seq_len);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"mask_ratio", 1.5}}), InvalidInput);
  CHECK_THROWS_AS(run_config_from_json(nlohmann::json{{"terms", "everything"}}), InvalidInput);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), InvalidInput);
}
