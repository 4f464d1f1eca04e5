#include <doctest.h>

#include "bisimlab/mdp.hpp"

using namespace bisimlab;
using namespace bisimlab::mdp;

namespace {

TabularMDP two_state_two_action() {
  MatrixXd p(4, 2);
  p << 1, 0,  // s0 a0
      0, 1,   // s0 a1
      0.5, 0.5,
      0, 1;
  MatrixXd r(2, 2);
  r << 0, 1, 1, 0;
  return TabularMDP(p, r, 0.9, VectorXd::Constant(2, 0.5));
}

void check_rows_sum_to_one(const MatrixXd& m) {
  for (Index r = 0; r < m.rows(); ++r) CHECK(m.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((m.array() >= 0.0).all());
}

}  // namespace

TEST_CASE("policy_dynamics with a one-hot policy selects the action slice") {
  const auto mdp = make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 4);
  const auto dyn = policy_dynamics(mdp, Policy::deterministic(5, 3, 0));
  for (Index s = 0; s < 5; ++s) {
    CHECK(dyn.p_pi.row(s) == mdp.transition(s, 0));
    CHECK(dyn.r_pi(s) == mdp.reward(s, 0));
  }
}

TEST_CASE("uniform policy averages rewards") {
  const auto dyn = policy_dynamics(two_state_two_action(), Policy::uniform(2, 2));
  CHECK(dyn.r_pi(0) == 0.5);
  CHECK(dyn.r_pi(1) == 0.5);
}

TEST_CASE("policy_dynamics rows are distributions for a seeded random MDP") {
  const auto mdp = make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 7);
  check_rows_sum_to_one(policy_dynamics(mdp, Policy::uniform(5, 3)).p_pi);
}

TEST_CASE("policy_dynamics rejects mismatched policies") {
  const auto mdp = make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 7);
  CHECK_THROWS_AS(policy_dynamics(mdp, Policy::uniform(4, 3)), InvalidInput);
  CHECK_THROWS_AS(policy_dynamics(mdp, Policy::uniform(5, 2)), InvalidInput);
}

TEST_CASE("policy_dynamics is linear in the policy") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mdp = make_random_mdp(6, 3, {-1.0, 1.0}, 0.9, 100 + static_cast<std::uint64_t>(trial));
    auto random_policy = [&] {
      MatrixXd p(6, 3);
      for (Index s = 0; s < 6; ++s) {
        for (Index a = 0; a < 3; ++a) p(s, a) = rng.uniform() + 1e-3;
        p.row(s) /= p.row(s).sum();
      }
      return Policy(p);
    };
    const Policy p1 = random_policy();
    const Policy p2 = random_policy();
    const double lambda = rng.uniform();
    const Policy mix(lambda * p1.probs() + (1.0 - lambda) * p2.probs());
    const auto d1 = policy_dynamics(mdp, p1);
    const auto d2 = policy_dynamics(mdp, p2);
    const auto dm = policy_dynamics(mdp, mix);
    CHECK((dm.p_pi - (lambda * d1.p_pi + (1 - lambda) * d2.p_pi)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((dm.r_pi - (lambda * d1.r_pi + (1 - lambda) * d2.r_pi)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("make_random_mdp is deterministic in its seed") {
  CHECK(make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 1) == make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 1));
  CHECK_FALSE(make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 1) == make_random_mdp(5, 3, {0.0, 1.0}, 0.9, 2));
}

TEST_CASE("degenerate reward range gives zero rewards") {
  const auto mdp = make_random_mdp(2, 1, {0.0, 0.0}, 0.9, 2);
  CHECK(mdp.reward().isZero(0.0));
}

TEST_CASE("random MDP transition rows are distributions") {
  const auto mdp = make_random_mdp(8, 4, {-1.0, 1.0}, 0.99, 3);
  check_rows_sum_to_one(mdp.transition());
  CHECK(mdp.reward().minCoeff() >= -1.0);
  CHECK(mdp.reward().maxCoeff() <= 1.0);
}

TEST_CASE("generators satisfy the MDP invariants over many seeds") {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    const Index n = 2 + static_cast<Index>(seed % 7);
    const auto mdp = make_random_mdp(n, 1 + static_cast<Index>(seed % 4), {-0.5, 2.0}, 0.5 + 0.004 * static_cast<double>(seed), seed);
    check_rows_sum_to_one(mdp.transition());
    GridSpec g;
    g.width = 2 + static_cast<Index>(seed % 5);
    g.height = 1 + static_cast<Index>(seed % 3);
    g.slip_prob = static_cast<double>(seed % 11) / 10.0;
    g.reward = static_cast<RewardSpec>(seed % 3);
    const auto grid = make_gridworld(g);
    check_rows_sum_to_one(grid.transition());
    CHECK(grid.reward().minCoeff() >= grid.r_min());
    CHECK(grid.reward().maxCoeff() <= grid.r_max());
  }
  CHECK_THROWS_AS(make_random_mdp(1, 2, {0, 1}, 0.9, 0), InvalidInput);
  CHECK_THROWS_AS(make_random_mdp(3, 0, {0, 1}, 0.9, 0), InvalidInput);
  CHECK_THROWS_AS(make_random_mdp(3, 2, {1, 0}, 0.9, 0), InvalidInput);
  CHECK_THROWS_AS(make_random_mdp(3, 2, {0, 1}, 1.0, 0), InvalidInput);
}

TEST_CASE("sparse-goal gridworld pays reward on entry into the goal") {
  GridSpec g;
  g.width = 3;
  g.height = 3;
  g.goal_x = 2;
  g.goal_y = 2;
  g.slip_prob = 0.0;
  const auto mdp = make_gridworld(g);
  // Enumerate: (1,2) right, (2,1) down, and the goal's two wall-bumping moves.
  long nonzero = 0;
  for (Index s = 0; s < mdp.n_states(); ++s)
    for (Index a = 0; a < mdp.n_actions(); ++a) nonzero += mdp.reward(s, a) != 0.0;
  CHECK(nonzero == 4);
  CHECK(mdp.reward(grid_state(g, 1, 2), static_cast<Index>(Move::Right)) == 1.0);
  CHECK(mdp.reward(grid_state(g, 2, 1), static_cast<Index>(Move::Down)) == 1.0);
  CHECK(mdp.reward(grid_state(g, 2, 2), static_cast<Index>(Move::Right)) == 1.0);
  CHECK(mdp.reward(grid_state(g, 2, 2), static_cast<Index>(Move::Down)) == 1.0);
}

TEST_CASE("zero-reward gridworld and deterministic moves") {
  GridSpec g;
  g.width = 3;
  g.height = 3;
  g.reward = RewardSpec::Zero;
  const auto mdp = make_gridworld(g);
  CHECK(mdp.reward().isZero(0.0));
  const auto row = mdp.transition(grid_state(g, 0, 0), static_cast<Index>(Move::Right));
  CHECK(row(grid_state(g, 1, 0)) == 1.0);
  CHECK(row.sum() == 1.0);
}

TEST_CASE("slip mass goes to the unintended moves") {
  GridSpec g;
  g.width = 3;
  g.height = 3;
  g.slip_prob = 0.3;
  const auto mdp = make_gridworld(g);
  const auto row = mdp.transition(grid_state(g, 1, 1), static_cast<Index>(Move::Right));
  CHECK(row(grid_state(g, 2, 1)) == doctest::Approx(0.7));
  CHECK(row(grid_state(g, 0, 1)) == doctest::Approx(0.1));
  CHECK(row(grid_state(g, 1, 0)) == doctest::Approx(0.1));
  CHECK(row(grid_state(g, 1, 2)) == doctest::Approx(0.1));
}

TEST_CASE("gridworld input validation") {
  GridSpec g;
  g.width = 3;
  g.height = 3;
  g.goal_x = 3;
  CHECK_THROWS_AS(make_gridworld(g), InvalidInput);
  g.goal_x = 0;
  g.slip_prob = 1.5;
  CHECK_THROWS_AS(make_gridworld(g), InvalidInput);
  g.slip_prob = 0;
  g.width = 21;
  g.height = 20;
  CHECK_THROWS_AS(make_gridworld(g), InvalidInput);
  CHECK_THROWS_AS(parse_reward_spec("shaped"), InvalidInput);
}

TEST_CASE("TabularMDP rejects broken invariants") {
  MatrixXd p(2, 2);
  p << 0.5, 0.5, 0.2, 0.7;
  MatrixXd r = MatrixXd::Zero(2, 1);
  CHECK_THROWS_AS(TabularMDP(p, r, 0.9, VectorXd::Constant(2, 0.5)), InvalidInput);
  p << 0.5, 0.5, 1.1, -0.1;
  CHECK_THROWS_AS(TabularMDP(p, r, 0.9, VectorXd::Constant(2, 0.5)), InvalidInput);
  p << 0.5, 0.5, 0.5, 0.5;
  CHECK_THROWS_AS(TabularMDP(p, r, 0.0, VectorXd::Constant(2, 0.5)), InvalidInput);
  CHECK_THROWS_AS(TabularMDP(p, r, 0.9, VectorXd::Constant(2, 0.4)), InvalidInput);
  CHECK_THROWS_AS(TabularMDP(p, MatrixXd::Constant(2, 1, 2.0), 0.9, VectorXd::Constant(2, 0.5), {0.0, 1.0}),
                  InvalidInput);
}

TEST_CASE("MDP json round-trips bit-exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto mdp = make_random_mdp(4, 3, {-1.0, 1.0}, 0.97, seed);
    const std::string text = to_json(mdp).dump();
    CHECK(mdp_from_json(nlohmann::json::parse(text)) == mdp);
  }
  CHECK_THROWS_AS(mdp_from_json(nlohmann::json{{"n_states", 2}}), InvalidInput);
}

TEST_CASE("policy json round-trips") {
  const Policy p = Policy::uniform(3, 4);
  CHECK(policy_from_json(to_json(p)).probs() == p.probs());
}
