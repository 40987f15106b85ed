#pragma once

// Episodic storage of raw sensor readings and normalized gait actions.
//
// Record t of an episode holds the observation after window t, the
// normalized action that was applied during that window, and the summed
// window reward. The first record of an episode is the reset observation
// paired with the zero action and zero reward.

#include "crawlrl/crawler.hpp"
#include "crawlrl/world_model.hpp"

#include <deque>
#include <filesystem>
#include <vector>

namespace crawlrl {

struct StepRecord {
  Observation obs;
  std::vector<double> action;  // normalized, in [-1, 1]
  double reward = 0.0;
  bool done = false;
  double t = 0.0;  // simulation time at the end of the window
};

using Sequence = std::vector<StepRecord>;

class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity = 1000000);

  /// Appends to the open episode, opening one if needed. A done record
  /// closes the episode. Evicts from the oldest episode when over capacity.
  void push(StepRecord record);

  size_t capacity() const { return capacity_; }
  size_t steps() const { return steps_; }
  size_t episodes() const { return episodes_.size(); }
  bool episode_open() const { return open_; }
  const std::deque<Sequence>& storage() const { return episodes_; }

  /// Number of (episode, offset) pairs admitting a length-L window.
  size_t count_windows(size_t length) const;
  bool can_sample(size_t length) const { return count_windows(length) > 0; }

  /// B windows of L consecutive records, uniform over valid (episode,
  /// offset) pairs. Throws std::runtime_error when none exist.
  std::vector<Sequence> sample_sequences(size_t batch, size_t length, Rng& rng) const;

  /// One row per record: episode,t,alpha1,alpha2,X1,X2,reward,done,a0..a{d-1}.
  void save_csv(const std::filesystem::path& path) const;
  static ReplayBuffer load_csv(const std::filesystem::path& path, size_t capacity = 1000000);

 private:
  void evict();

  size_t capacity_;
  size_t steps_ = 0;
  bool open_ = false;
  std::deque<Sequence> episodes_;
};

/// Time-major batch for the world model.
SequenceBatch to_batch(const std::vector<Sequence>& sequences);

}  // namespace crawlrl
