#include "bisimlab/env.hpp"

#include <algorithm>

namespace bisimlab::envs {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double hash_unit(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t h = splitmix(seed ^ splitmix(a ^ splitmix(b + 0x51ed2701ULL)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

constexpr double kLattice = 6.0;
constexpr double kDriftX = 0.75;
constexpr double kDriftY = 0.5;

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Distractor parse_distractor(const std::string& name) {
  if (name == "none") return Distractor::None;
  if (name == "static-noise") return Distractor::StaticNoise;
  if (name == "drifting-noise") return Distractor::DriftingNoise;
  throw InvalidInput("unknown distractor '" + name + "' (expected none, static-noise or drifting-noise)");
}

std::string to_string(Distractor d) {
  switch (d) {
    case Distractor::None:
      return "none";
    case Distractor::StaticNoise:
      return "static-noise";
    case Distractor::DriftingNoise:
      return "drifting-noise";
  }
  return "none";
}

void EnvSpec::validate() const {
  require(grid.width >= 1 && grid.height >= 1, "EnvSpec: empty grid");
  require(frame_size >= std::max(grid.width, grid.height), "EnvSpec: frame too small for one pixel per cell");
  require(stack >= 1, "EnvSpec: stack must be positive");
  require(time_limit >= 1, "EnvSpec: time_limit must be positive");
  require(noise_amplitude >= 0.0 && kBackground + noise_amplitude < kGoal,
          "EnvSpec: noise amplitude must keep the background below the goal intensity");
}

nlohmann::json to_json(const EnvSpec& s) {
  return {{"grid",
           {{"width", s.grid.width},
            {"height", s.grid.height},
            {"reward", mdp::to_string(s.grid.reward)},
            {"slip_prob", s.grid.slip_prob},
            {"gamma", s.grid.gamma},
            {"goal_x", s.grid.goal_x},
            {"goal_y", s.grid.goal_y}}},
          {"frame_size", s.frame_size},
          {"stack", s.stack},
          {"time_limit", s.time_limit},
          {"distractor", to_string(s.distractor)},
          {"noise_amplitude", s.noise_amplitude},
          {"seed", s.seed}};
}

EnvSpec env_spec_from_json(const nlohmann::json& doc) {
  EnvSpec s;
  try {
    if (doc.contains("grid")) {
      const auto& g = doc.at("grid");
      s.grid.width = g.value("width", s.grid.width);
      s.grid.height = g.value("height", s.grid.height);
      if (g.contains("reward")) s.grid.reward = mdp::parse_reward_spec(g.at("reward").get<std::string>());
      s.grid.slip_prob = g.value("slip_prob", s.grid.slip_prob);
      s.grid.gamma = g.value("gamma", s.grid.gamma);
      s.grid.goal_x = g.value("goal_x", s.grid.goal_x);
      s.grid.goal_y = g.value("goal_y", s.grid.goal_y);
    }
    s.frame_size = doc.value("frame_size", s.frame_size);
    s.stack = doc.value("stack", s.stack);
    s.time_limit = doc.value("time_limit", s.time_limit);
    if (doc.contains("distractor")) s.distractor = parse_distractor(doc.at("distractor").get<std::string>());
    s.noise_amplitude = doc.value("noise_amplitude", s.noise_amplitude);
    s.seed = doc.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("EnvSpec: ") + e.what());
  }
  s.validate();
  return s;
}

PixelGridEnv::PixelGridEnv(EnvSpec spec)
    : spec_((spec.validate(), std::move(spec))),
      mdp_(mdp::make_gridworld(spec_.grid)),
      cell_(spec_.frame_size / std::max(spec_.grid.width, spec_.grid.height)),
      rng_(spec_.seed) {}

Index PixelGridEnv::goal_state() const {
  const Index gx = spec_.grid.goal_x < 0 ? spec_.grid.width - 1 : spec_.grid.goal_x;
  const Index gy = spec_.grid.goal_y < 0 ? spec_.grid.height - 1 : spec_.grid.goal_y;
  return mdp::grid_state(spec_.grid, gx, gy);
}

double PixelGridEnv::background(Index x, Index y, long phase) const {
  switch (spec_.distractor) {
    case Distractor::None:
      return kBackground;
    case Distractor::StaticNoise:
      return kBackground + spec_.noise_amplitude * hash_unit(spec_.seed, static_cast<std::uint64_t>(x),
                                                             static_cast<std::uint64_t>(y));
    case Distractor::DriftingNoise: {
      // Bilinear value noise on a coarse lattice, translated every step.
      const double fx = (static_cast<double>(x) + kDriftX * static_cast<double>(phase)) / kLattice;
      const double fy = (static_cast<double>(y) + kDriftY * static_cast<double>(phase)) / kLattice;
      const double ix = std::floor(fx), iy = std::floor(fy);
      const double tx = smoothstep(fx - ix), ty = smoothstep(fy - iy);
      const auto lat = [&](double a, double b) {
        return hash_unit(spec_.seed ^ 0xd81f7ULL, static_cast<std::uint64_t>(a), static_cast<std::uint64_t>(b));
      };
      const double top = lat(ix, iy) * (1 - tx) + lat(ix + 1, iy) * tx;
      const double bottom = lat(ix, iy + 1) * (1 - tx) + lat(ix + 1, iy + 1) * tx;
      return kBackground + spec_.noise_amplitude * (top * (1 - ty) + bottom * ty);
    }
  }
  return kBackground;
}

std::vector<bool> PixelGridEnv::foreground_mask(Index state) const {
  require(state >= 0 && state < mdp_.n_states(), "PixelGridEnv: state out of range");
  const Index S = spec_.frame_size;
  std::vector<bool> mask(static_cast<std::size_t>(S * S), false);
  for (Index cell : {state, goal_state()}) {
    const Index cx = cell % spec_.grid.width, cy = cell / spec_.grid.width;
    for (Index y = cy * cell_; y < (cy + 1) * cell_; ++y)
      for (Index x = cx * cell_; x < (cx + 1) * cell_; ++x) mask[static_cast<std::size_t>(y * S + x)] = true;
  }
  return mask;
}

std::vector<std::uint8_t> PixelGridEnv::render(Index state, long phase) const {
  require(state >= 0 && state < mdp_.n_states(), "PixelGridEnv: state out of range");
  const Index S = spec_.frame_size;
  std::vector<std::uint8_t> frame(static_cast<std::size_t>(S * S));
  for (Index y = 0; y < S; ++y)
    for (Index x = 0; x < S; ++x) frame[static_cast<std::size_t>(y * S + x)] = quantize(background(x, y, phase));
  auto paint = [&](Index cell, double value) {
    const Index cx = cell % spec_.grid.width, cy = cell / spec_.grid.width;
    for (Index y = cy * cell_; y < (cy + 1) * cell_; ++y)
      for (Index x = cx * cell_; x < (cx + 1) * cell_; ++x) frame[static_cast<std::size_t>(y * S + x)] = quantize(value);
  };
  paint(goal_state(), kGoal);
  paint(state, kAgent);
  return frame;
}

Observation PixelGridEnv::canonical_observation(Index state, long phase) const {
  const auto frame = render(state, phase);
  Observation obs;
  obs.reserve(static_cast<std::size_t>(spec_.stack * frame_pixels()));
  for (Index k = 0; k < spec_.stack; ++k) obs.insert(obs.end(), frame.begin(), frame.end());
  return obs;
}

void PixelGridEnv::push_frame() {
  const auto frame = render(state_, phase_);
  const auto n = static_cast<std::ptrdiff_t>(frame.size());
  if (stack_.empty()) {
    stack_ = canonical_observation(state_, phase_);
    return;
  }
  std::copy(stack_.begin() + n, stack_.end(), stack_.begin());
  std::copy(frame.begin(), frame.end(), stack_.end() - n);
}

StepResult PixelGridEnv::reset() {
  const VectorXd& init = mdp_.initial_dist();
  double u = rng_.uniform(), acc = 0.0;
  state_ = init.size() - 1;
  for (Index s = 0; s < init.size(); ++s) {
    acc += init(s);
    if (u < acc) {
      state_ = s;
      break;
    }
  }
  t_ = 0;
  ++episode_;
  needs_reset_ = false;
  stack_.clear();
  push_frame();
  return {stack_, 0.0, false, state_};
}

StepResult PixelGridEnv::step(Index action) {
  if (needs_reset_) throw InvalidInput("PixelGridEnv::step: episode finished, call reset()");
  if (action < 0 || action >= n_actions())
    throw InvalidInput("PixelGridEnv::step: action " + std::to_string(action) + " out of range");
  const double reward = mdp_.reward(state_, action);
  const auto row = mdp_.transition(state_, action);
  double u = rng_.uniform(), acc = 0.0;
  Index next = -1;
  for (Index s = 0; s < row.size(); ++s) {
    if (row(s) <= 0.0) continue;
    next = s;
    acc += row(s);
    if (u < acc) break;
  }
  state_ = next;
  ++t_;
  ++phase_;
  push_frame();
  needs_reset_ = t_ >= spec_.time_limit;
  return {stack_, reward, needs_reset_, state_};
}

ad::Tensor<double> to_tensor(const std::vector<const Observation*>& obs, Index stack, Index frame_size) {
  const Index per = stack * frame_size * frame_size;
  ad::Tensor<double> out({static_cast<Index>(obs.size()), stack, frame_size, frame_size});
  for (std::size_t n = 0; n < obs.size(); ++n) {
    if (static_cast<Index>(obs[n]->size()) != per) throw InvalidInput("to_tensor: observation size mismatch");
    for (Index i = 0; i < per; ++i)
      out.data(static_cast<Index>(n) * per + i) = static_cast<double>((*obs[n])[static_cast<std::size_t>(i)]) / 255.0;
  }
  return out;
}

}  // namespace bisimlab::envs
