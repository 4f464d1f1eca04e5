#include "bisimlab/mdp.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>

namespace bisimlab::mdp {

namespace {

constexpr double kSumTol = 1e-9;

void check_stochastic_rows(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
  if ((m.array() < 0.0).any()) throw InvalidInput(std::string(what) + ": negative probability");
  for (Index r = 0; r < m.rows(); ++r) {
    if (std::abs(m.row(r).sum() - 1.0) > kSumTol)
      throw InvalidInput(std::string(what) + ": row " + std::to_string(r) + " does not sum to 1");
  }
}

// Dirichlet sampling drifts from 1 by a few ulps; renormalize only when the
// drift is visible at 1e-12.
void renormalize_rows(MatrixXd& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    const double s = m.row(r).sum();
    if (std::abs(s - 1.0) > 1e-12) m.row(r) /= s;
  }
}

}  // namespace

TabularMDP::TabularMDP(MatrixXd transition, MatrixXd reward, double gamma, VectorXd initial_dist,
                       std::pair<double, double> reward_range)
    : transition_(std::move(transition)),
      reward_(std::move(reward)),
      gamma_(gamma),
      initial_dist_(std::move(initial_dist)),
      r_min_(reward_range.first),
      r_max_(reward_range.second) {
  validate();
}

TabularMDP::TabularMDP(MatrixXd transition, MatrixXd reward, double gamma, VectorXd initial_dist)
    : TabularMDP(std::move(transition), reward, gamma, std::move(initial_dist),
                 reward.size() > 0 ? std::make_pair(reward.minCoeff(), reward.maxCoeff())
                                   : std::make_pair(0.0, 0.0)) {}

void TabularMDP::validate() const {
  const Index s = reward_.rows();
  const Index a = reward_.cols();
  require(s >= 1 && a >= 1, "TabularMDP: need at least one state and one action");
  require(transition_.rows() == s * a && transition_.cols() == s,
          "TabularMDP: transition must be (n_states*n_actions) x n_states");
  require(initial_dist_.size() == s, "TabularMDP: initial_dist length must equal n_states");
  require(gamma_ > 0.0 && gamma_ < 1.0, "TabularMDP: gamma must lie in (0, 1)");
  require(std::isfinite(r_min_) && std::isfinite(r_max_) && r_min_ <= r_max_,
          "TabularMDP: invalid reward range");
  require(reward_.allFinite(), "TabularMDP: non-finite reward");
  require(reward_.minCoeff() >= r_min_ && reward_.maxCoeff() <= r_max_,
          "TabularMDP: reward outside declared range");
  check_stochastic_rows(transition_, "TabularMDP transition");
  check_stochastic_rows(initial_dist_.transpose(), "TabularMDP initial_dist");
}

TabularMDP TabularMDP::with_gamma(double gamma) const {
  return TabularMDP(transition_, reward_, gamma, initial_dist_, {r_min_, r_max_});
}

TabularMDP TabularMDP::with_transition(MatrixXd transition) const {
  return TabularMDP(std::move(transition), reward_, gamma_, initial_dist_, {r_min_, r_max_});
}

bool operator==(const TabularMDP& a, const TabularMDP& b) {
  return a.transition_ == b.transition_ && a.reward_ == b.reward_ && a.gamma_ == b.gamma_ &&
         a.initial_dist_ == b.initial_dist_ && a.r_min_ == b.r_min_ && a.r_max_ == b.r_max_;
}

Policy::Policy(MatrixXd probs) : probs_(std::move(probs)) {
  require(probs_.rows() >= 1 && probs_.cols() >= 1, "Policy: empty table");
  check_stochastic_rows(probs_, "Policy");
}

Policy Policy::uniform(Index n_states, Index n_actions) {
  require(n_states >= 1 && n_actions >= 1, "Policy::uniform: invalid sizes");
  return Policy(MatrixXd::Constant(n_states, n_actions, 1.0 / static_cast<double>(n_actions)));
}

Policy Policy::deterministic(Index n_states, Index n_actions, Index action) {
  require(action >= 0 && action < n_actions, "Policy::deterministic: action out of range");
  MatrixXd p = MatrixXd::Zero(n_states, n_actions);
  p.col(action).setOnes();
  return Policy(std::move(p));
}

PolicyDynamics policy_dynamics(const TabularMDP& mdp, const Policy& policy) {
  if (policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions()) {
    throw InvalidInput("policy_dynamics: policy is " + std::to_string(policy.n_states()) + "x" +
                       std::to_string(policy.n_actions()) + " but MDP has " +
                       std::to_string(mdp.n_states()) + " states and " +
                       std::to_string(mdp.n_actions()) + " actions");
  }
  const Index ns = mdp.n_states();
  const Index na = mdp.n_actions();
  PolicyDynamics out{MatrixXd::Zero(ns, ns), VectorXd::Zero(ns)};
  for (Index s = 0; s < ns; ++s) {
    for (Index a = 0; a < na; ++a) {
      const double w = policy.probs()(s, a);
      if (w == 0.0) continue;
      out.p_pi.row(s).noalias() += w * mdp.transition(s, a);
      out.r_pi(s) += w * mdp.reward(s, a);
    }
  }
  return out;
}

TabularMDP make_random_mdp(Index n_states, Index n_actions, std::pair<double, double> reward_range,
                           double gamma, std::uint64_t seed, double concentration) {
  require(n_states >= 2, "make_random_mdp: need at least 2 states");
  require(n_actions >= 1, "make_random_mdp: need at least 1 action");
  require(reward_range.first <= reward_range.second, "make_random_mdp: empty reward range");
  require(gamma > 0.0 && gamma < 1.0, "make_random_mdp: gamma must lie in (0, 1)");
  require(concentration > 0.0, "make_random_mdp: concentration must be positive");

  Rng rng(seed);
  MatrixXd transition(n_states * n_actions, n_states);
  for (Index r = 0; r < transition.rows(); ++r) {
    double total = 0.0;
    for (Index c = 0; c < n_states; ++c) {
      transition(r, c) = rng.gamma(concentration);
      total += transition(r, c);
    }
    transition.row(r) /= total;
  }
  renormalize_rows(transition);

  MatrixXd reward(n_states, n_actions);
  for (Index s = 0; s < n_states; ++s)
    for (Index a = 0; a < n_actions; ++a)
      reward(s, a) = reward_range.first == reward_range.second
                         ? reward_range.first
                         : rng.uniform(reward_range.first, reward_range.second);

  VectorXd init = VectorXd::Constant(n_states, 1.0 / static_cast<double>(n_states));
  return TabularMDP(std::move(transition), std::move(reward), gamma, std::move(init), reward_range);
}

RewardSpec parse_reward_spec(const std::string& name) {
  if (name == "dense-distance") return RewardSpec::DenseDistance;
  if (name == "sparse-goal") return RewardSpec::SparseGoal;
  if (name == "zero") return RewardSpec::Zero;
  throw InvalidInput("unknown reward spec '" + name + "'");
}

std::string to_string(RewardSpec spec) {
  switch (spec) {
    case RewardSpec::DenseDistance: return "dense-distance";
    case RewardSpec::SparseGoal: return "sparse-goal";
    case RewardSpec::Zero: return "zero";
  }
  return "zero";
}

TabularMDP make_gridworld(const GridSpec& spec) {
  const Index w = spec.width;
  const Index h = spec.height;
  require(w >= 1 && h >= 1, "make_gridworld: grid must be non-empty");
  require(w * h >= 2, "make_gridworld: need at least 2 cells");
  require(w * h <= 400, "make_gridworld: at most 400 cells");
  require(spec.slip_prob >= 0.0 && spec.slip_prob <= 1.0, "make_gridworld: slip_prob outside [0,1]");
  const Index gx = spec.goal_x < 0 ? w - 1 : spec.goal_x;
  const Index gy = spec.goal_y < 0 ? h - 1 : spec.goal_y;
  if (gx >= w || gy >= h)
    throw InvalidInput("make_gridworld: goal (" + std::to_string(gx) + "," + std::to_string(gy) +
                       ") outside " + std::to_string(w) + "x" + std::to_string(h) + " grid");

  constexpr std::array<Index, 4> dx{0, 0, -1, 1};
  constexpr std::array<Index, 4> dy{-1, 1, 0, 0};
  const Index ns = w * h;
  const Index na = 4;
  auto successor = [&](Index s, Index move) {
    const Index x = s % w;
    const Index y = s / w;
    const Index nx = x + dx[static_cast<std::size_t>(move)];
    const Index ny = y + dy[static_cast<std::size_t>(move)];
    if (nx < 0 || nx >= w || ny < 0 || ny >= h) return s;
    return ny * w + nx;
  };

  MatrixXd transition = MatrixXd::Zero(ns * na, ns);
  for (Index s = 0; s < ns; ++s) {
    for (Index a = 0; a < na; ++a) {
      for (Index m = 0; m < na; ++m) {
        const double p = m == a ? 1.0 - spec.slip_prob : spec.slip_prob / 3.0;
        if (p > 0.0) transition(s * na + a, successor(s, m)) += p;
      }
    }
  }
  renormalize_rows(transition);

  const Index goal = gy * w + gx;
  const double max_dist = static_cast<double>((w - 1) + (h - 1));
  VectorXd cell_value = VectorXd::Zero(ns);
  std::pair<double, double> range{0.0, 0.0};
  switch (spec.reward) {
    case RewardSpec::SparseGoal:
      cell_value(goal) = 1.0;
      range = {0.0, 1.0};
      break;
    case RewardSpec::DenseDistance:
      for (Index s = 0; s < ns; ++s) {
        const double d = static_cast<double>(std::abs(s % w - gx) + std::abs(s / w - gy));
        cell_value(s) = 1.0 - d / max_dist;
      }
      range = {0.0, 1.0};
      break;
    case RewardSpec::Zero:
      break;
  }
  MatrixXd reward(ns, na);
  for (Index s = 0; s < ns; ++s)
    for (Index a = 0; a < na; ++a) reward(s, a) = transition.row(s * na + a).dot(cell_value);
  // Expected rewards can land an ulp outside [0, 1].
  reward = reward.cwiseMax(range.first).cwiseMin(range.second);

  VectorXd init = VectorXd::Constant(ns, 1.0 / static_cast<double>(ns));
  return TabularMDP(std::move(transition), std::move(reward), spec.gamma, std::move(init), range);
}

nlohmann::json to_json(const TabularMDP& mdp) {
  using nlohmann::json;
  const Index ns = mdp.n_states();
  const Index na = mdp.n_actions();
  json transition = json::array();
  json reward = json::array();
  for (Index s = 0; s < ns; ++s) {
    json per_action = json::array();
    json rrow = json::array();
    for (Index a = 0; a < na; ++a) {
      json row = json::array();
      for (Index t = 0; t < ns; ++t) row.push_back(mdp.transition()(s * na + a, t));
      per_action.push_back(std::move(row));
      rrow.push_back(mdp.reward(s, a));
    }
    transition.push_back(std::move(per_action));
    reward.push_back(std::move(rrow));
  }
  json init = json::array();
  for (Index s = 0; s < ns; ++s) init.push_back(mdp.initial_dist()(s));
  return json{{"n_states", ns},
              {"n_actions", na},
              {"gamma", mdp.gamma()},
              {"transition", std::move(transition)},
              {"reward", std::move(reward)},
              {"initial_dist", std::move(init)},
              {"reward_range", json::array({mdp.r_min(), mdp.r_max()})}};
}

TabularMDP mdp_from_json(const nlohmann::json& doc) {
  try {
    const Index ns = doc.at("n_states").get<Index>();
    const Index na = doc.at("n_actions").get<Index>();
    require(ns >= 1 && na >= 1, "MDP json: invalid sizes");
    const auto& tr = doc.at("transition");
    const auto& rw = doc.at("reward");
    const auto& init = doc.at("initial_dist");
    require(tr.is_array() && static_cast<Index>(tr.size()) == ns, "MDP json: transition has wrong state count");
    require(rw.is_array() && static_cast<Index>(rw.size()) == ns, "MDP json: reward has wrong state count");
    require(init.is_array() && static_cast<Index>(init.size()) == ns, "MDP json: initial_dist has wrong length");
    MatrixXd transition(ns * na, ns);
    MatrixXd reward(ns, na);
    VectorXd initial(ns);
    for (Index s = 0; s < ns; ++s) {
      const auto& per_action = tr[static_cast<std::size_t>(s)];
      require(static_cast<Index>(per_action.size()) == na, "MDP json: transition has wrong action count");
      require(static_cast<Index>(rw[static_cast<std::size_t>(s)].size()) == na,
              "MDP json: reward has wrong action count");
      for (Index a = 0; a < na; ++a) {
        const auto& row = per_action[static_cast<std::size_t>(a)];
        require(static_cast<Index>(row.size()) == ns, "MDP json: transition row has wrong length");
        for (Index t = 0; t < ns; ++t) transition(s * na + a, t) = row[static_cast<std::size_t>(t)].get<double>();
        reward(s, a) = rw[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)].get<double>();
      }
      initial(s) = init[static_cast<std::size_t>(s)].get<double>();
    }
    const double gamma = doc.at("gamma").get<double>();
    if (doc.contains("reward_range")) {
      const auto& rr = doc.at("reward_range");
      require(rr.is_array() && rr.size() == 2, "MDP json: reward_range must be [min, max]");
      return TabularMDP(std::move(transition), std::move(reward), gamma, std::move(initial),
                        {rr[0].get<double>(), rr[1].get<double>()});
    }
    return TabularMDP(std::move(transition), std::move(reward), gamma, std::move(initial));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("MDP json: ") + e.what());
  }
}

nlohmann::json to_json(const Policy& policy) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index s = 0; s < policy.n_states(); ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (Index a = 0; a < policy.n_actions(); ++a) row.push_back(policy.probs()(s, a));
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"probs", std::move(rows)}};
}

Policy policy_from_json(const nlohmann::json& doc) {
  try {
    const auto& rows = doc.at("probs");
    require(rows.is_array() && !rows.empty(), "Policy json: probs must be a non-empty array");
    const Index ns = static_cast<Index>(rows.size());
    const Index na = static_cast<Index>(rows[0].size());
    MatrixXd p(ns, na);
    for (Index s = 0; s < ns; ++s) {
      require(static_cast<Index>(rows[static_cast<std::size_t>(s)].size()) == na, "Policy json: ragged rows");
      for (Index a = 0; a < na; ++a)
        p(s, a) = rows[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)].get<double>();
    }
    return Policy(std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("Policy json: ") + e.what());
  }
}

}  // namespace bisimlab::mdp
