#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "bisimlab/ad/tensor.hpp"
#include "bisimlab/mdp.hpp"

namespace bisimlab::envs {

enum class Distractor { None, StaticNoise, DriftingNoise };

Distractor parse_distractor(const std::string& name);
std::string to_string(Distractor d);

struct EnvSpec {
  mdp::GridSpec grid;
  Index frame_size = 48;
  Index stack = 3;
  Index time_limit = 50;
  Distractor distractor = Distractor::None;
  double noise_amplitude = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const EnvSpec& spec);
EnvSpec env_spec_from_json(const nlohmann::json& doc);

/// Pixel intensities before quantization.
inline constexpr double kBackground = 0.1;
inline constexpr double kGoal = 0.5;
inline constexpr double kAgent = 1.0;

/// [stack][S][S] bytes, oldest frame first.
using Observation = std::vector<std::uint8_t>;

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  Index state = 0;
};

/// Gridworld rendered to square grayscale frames. Each cell is a
/// `cell_size()` square block anchored at the top-left; pixels outside the
/// agent and goal cells are background, which is where distractors live.
/// Episodes end after `time_limit` steps; the goal is not absorbing.
class PixelGridEnv {
 public:
  explicit PixelGridEnv(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  const mdp::TabularMDP& mdp() const { return mdp_; }
  Index n_actions() const { return mdp_.n_actions(); }
  Index cell_size() const { return cell_; }
  Index frame_pixels() const { return spec_.frame_size * spec_.frame_size; }
  Index goal_state() const;

  /// Deterministic in (state, phase, spec.seed).
  std::vector<std::uint8_t> render(Index state, long phase) const;

  /// True on pixels covered by the agent sprite at `state` or by the goal.
  std::vector<bool> foreground_mask(Index state) const;

  /// A stack of identical frames of `state` at `phase`.
  Observation canonical_observation(Index state, long phase = 0) const;

  /// Samples the start state from the initial distribution.
  StepResult reset();
  StepResult step(Index action);

  /// The stacked observation the next action will be taken from.
  const Observation& current_observation() const { return stack_; }
  bool needs_reset() const { return needs_reset_; }
  Index state() const { return state_; }
  long episode() const { return episode_; }
  long phase() const { return phase_; }

 private:
  double background(Index x, Index y, long phase) const;
  void push_frame();

  EnvSpec spec_;
  mdp::TabularMDP mdp_;
  Index cell_;
  Rng rng_;
  Index state_ = 0;
  long t_ = 0;
  long phase_ = 0;
  long episode_ = -1;
  bool needs_reset_ = true;
  Observation stack_;
};

/// Observations to a [N, stack, S, S] tensor scaled to [0, 1].
ad::Tensor<double> to_tensor(const std::vector<const Observation*>& obs, Index stack, Index frame_size);

}  // namespace bisimlab::envs
