#include "bisimlab/replay.hpp"

namespace bisimlab::envs {

ReplayBuffer::ReplayBuffer(Index capacity) : capacity_(capacity) {
  require(capacity >= 1, "ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
  if (size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
  ++total_added_;
}

std::vector<Index> ReplayBuffer::valid_starts(Index K) const {
  require(K >= 1, "ReplayBuffer: window length must be positive");
  std::vector<Index> out;
  for (Index i = 0; i + K <= size(); ++i) {
    // Episode ids are non-decreasing in insertion order, so equal ends
    // imply one episode throughout; a done flag may only close the window.
    const auto& first = at(i);
    const auto& last = at(i + K - 1);
    if (first.episode != last.episode) continue;
    bool ok = true;
    for (Index j = i; j + 1 < i + K && ok; ++j) ok = !at(j).done;
    if (ok) out.push_back(i);
  }
  return out;
}

std::vector<Index> ReplayBuffer::sample_starts(Index batch, Index K, Rng& rng) const {
  require(batch >= 1, "ReplayBuffer: batch must be positive");
  const auto starts = valid_starts(K);
  if (starts.empty())
    throw InvalidInput("ReplayBuffer: no window of length " + std::to_string(K) + " among " +
                       std::to_string(size()) + " transitions");
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) out.push_back(starts[rng.below(starts.size())]);
  return out;
}

void collect(PixelGridEnv& env, long n_steps, ReplayBuffer& buffer, Rng& rng) {
  for (long i = 0; i < n_steps; ++i) {
    if (env.needs_reset()) env.reset();
    Transition t;
    t.state = env.state();
    t.episode = env.episode();
    t.action = static_cast<Index>(rng.below(static_cast<std::uint64_t>(env.n_actions())));
    t.obs = env.current_observation();
    const auto r = env.step(t.action);
    t.reward = r.reward;
    t.done = r.done;
    buffer.add(std::move(t));
  }
}

}  // namespace bisimlab::envs
