#pragma once

// Episode storage: the on-disk episode container and the replay memory that
// serves aligned training windows.

#include <torch/torch.h>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "dlc/race.hpp"
#include "dlc/worldmodel.hpp"

namespace dlc::replay {

using race::EpisodeRecord;

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned, zlib-compressed, lossless episode file. Written to a temporary
/// name and renamed into place.
void save_episode(const EpisodeRecord& episode, const std::filesystem::path& path);
EpisodeRecord load_episode(const std::filesystem::path& path);

struct Window {
  std::size_t episode = 0;  // index into the memory's current contents
  int offset = 0;
  bool operator==(const Window&) const = default;
};

class ReplayMemory {
 public:
  /// capacity 0 keeps every episode; otherwise the oldest are evicted first.
  explicit ReplayMemory(int capacity = 0) : capacity_(capacity) {}

  void add(std::shared_ptr<const EpisodeRecord> episode);
  std::size_t size() const { return episodes_.size(); }
  const EpisodeRecord& episode(std::size_t i) const { return *episodes_.at(i); }
  std::int64_t total_steps() const;
  std::int64_t evicted() const { return evicted_; }

  /// Number of windows of `length` steps that fit inside a single episode.
  std::int64_t valid_windows(int length) const;

  /// Uniform draws over every valid (episode, offset) pair.
  std::vector<Window> sample_windows(int count, int length, std::mt19937_64& rng) const;

  /// Index t of a window pairs o_t with the action and reward that led into it.
  worldmodel::SequenceBatch make_batch(const std::vector<Window>& windows, int length,
                                       const torch::TensorOptions& options) const;

 private:
  int capacity_;
  std::deque<std::shared_ptr<const EpisodeRecord>> episodes_;
  std::int64_t evicted_ = 0;
};

}  // namespace dlc::replay
