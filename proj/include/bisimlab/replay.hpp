#pragma once

#include <deque>
#include <vector>

#include "bisimlab/env.hpp"

namespace bisimlab::envs {

/// One environment step: the observation the action was taken from, the
/// action, its reward and whether the episode ended with it. `state` is the
/// underlying cell, kept for oracle evaluation only.
struct Transition {
  Observation obs;
  Index action = 0;
  double reward = 0.0;
  bool done = false;
  Index state = 0;
  long episode = 0;
};

/// Fixed-capacity ring; the oldest transitions are evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(Index capacity);

  void add(Transition t);

  Index size() const { return static_cast<Index>(items_.size()); }
  Index capacity() const { return capacity_; }
  long total_added() const { return total_added_; }

  /// Chronological access, 0 = oldest.
  const Transition& at(Index i) const { return items_.at(static_cast<std::size_t>(i)); }

  /// Start indices of every length-K window inside a single episode.
  std::vector<Index> valid_starts(Index K) const;

  /// `batch` window starts drawn uniformly with replacement.
  std::vector<Index> sample_starts(Index batch, Index K, Rng& rng) const;

 private:
  Index capacity_;
  long total_added_ = 0;
  std::deque<Transition> items_;
};

/// Runs the uniform random behavior policy for `n_steps` steps, resetting
/// the environment whenever an episode ends.
void collect(PixelGridEnv& env, long n_steps, ReplayBuffer& buffer, Rng& rng);

}  // namespace bisimlab::envs
