#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bisimlab/common.hpp"

namespace bisimlab::mdp {

/// Finite MDP with stochastic transitions and deterministic state-action
/// rewards. Transition rows are stored flattened: row `s * n_actions + a`
/// holds P(. | s, a). Immutable once constructed.
class TabularMDP {
 public:
  /// Validates every invariant. `reward_range` is the declared [r_min, r_max]
  /// and must contain every reward entry.
  TabularMDP(MatrixXd transition, MatrixXd reward, double gamma, VectorXd initial_dist,
             std::pair<double, double> reward_range);

  /// Same, with the reward range taken from the reward table itself.
  TabularMDP(MatrixXd transition, MatrixXd reward, double gamma, VectorXd initial_dist);

  Index n_states() const { return reward_.rows(); }
  Index n_actions() const { return reward_.cols(); }
  double gamma() const { return gamma_; }
  double r_min() const { return r_min_; }
  double r_max() const { return r_max_; }

  /// (n_states * n_actions) x n_states.
  const MatrixXd& transition() const { return transition_; }
  auto transition(Index s, Index a) const { return transition_.row(s * n_actions() + a); }
  const MatrixXd& reward() const { return reward_; }
  double reward(Index s, Index a) const { return reward_(s, a); }
  const VectorXd& initial_dist() const { return initial_dist_; }

  TabularMDP with_gamma(double gamma) const;
  TabularMDP with_transition(MatrixXd transition) const;

  /// Exact equality of every field.
  friend bool operator==(const TabularMDP& a, const TabularMDP& b);

 private:
  void validate() const;

  MatrixXd transition_;
  MatrixXd reward_;
  double gamma_;
  VectorXd initial_dist_;
  double r_min_;
  double r_max_;
};

/// Stochastic policy, rows indexed by state.
class Policy {
 public:
  explicit Policy(MatrixXd probs);

  static Policy uniform(Index n_states, Index n_actions);
  static Policy deterministic(Index n_states, Index n_actions, Index action);

  const MatrixXd& probs() const { return probs_; }
  Index n_states() const { return probs_.rows(); }
  Index n_actions() const { return probs_.cols(); }

 private:
  MatrixXd probs_;
};

/// Policy-averaged dynamics: p_pi = sum_a pi(a|s) P(.|s,a), r_pi likewise.
struct PolicyDynamics {
  MatrixXd p_pi;
  VectorXd r_pi;
};

PolicyDynamics policy_dynamics(const TabularMDP& mdp, const Policy& policy);

/// Transitions drawn from a symmetric Dirichlet(`concentration`) per (s, a);
/// rewards uniform on `reward_range`.
TabularMDP make_random_mdp(Index n_states, Index n_actions, std::pair<double, double> reward_range,
                           double gamma, std::uint64_t seed, double concentration = 1.0);

enum class RewardSpec { DenseDistance, SparseGoal, Zero };

RewardSpec parse_reward_spec(const std::string& name);
std::string to_string(RewardSpec spec);

enum class Move : Index { Up = 0, Down = 1, Left = 2, Right = 3 };

struct GridSpec {
  Index width = 5;
  Index height = 5;
  RewardSpec reward = RewardSpec::SparseGoal;
  double slip_prob = 0.0;
  double gamma = 0.99;
  /// Defaults to the bottom-right cell when negative.
  Index goal_x = -1;
  Index goal_y = -1;
};

/// Cells are states (`y * width + x`), four move actions; moving off the grid
/// leaves the agent in place. `slip_prob` is spread evenly over the three
/// unintended moves. Rewards are paid on entry: r(s, a) is the expected
/// reward of the successor, so sparse-goal pays P(goal | s, a) and
/// dense-distance pays 1 - E[manhattan(s', goal)] / max_distance.
TabularMDP make_gridworld(const GridSpec& spec);

inline Index grid_state(const GridSpec& spec, Index x, Index y) { return y * spec.width + x; }

nlohmann::json to_json(const TabularMDP& mdp);
TabularMDP mdp_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const Policy& policy);
Policy policy_from_json(const nlohmann::json& doc);

}  // namespace bisimlab::mdp
