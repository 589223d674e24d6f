#pragma once

// Training loop: seed the memory with random races, then alternate one
// collected episode with S model/behaviour updates, checkpointing after each
// episode so an interrupted run resumes exactly.
//
// Run directory layout:
//   config.cfg            effective config
//   episodes/ep-NNNNNN.bin replay memory, one file per episode
//   episodes.jsonl        one row per collected training episode
//   train.jsonl           one row per training iteration
//   checkpoints/LATEST    name of the newest complete checkpoint directory
//   checkpoints/ckpt-NNNNNN/{config.cfg, params.bin, *.pt, state.json}

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "dlc/agent.hpp"
#include "dlc/behavior.hpp"
#include "dlc/replay.hpp"

namespace dlc::trainer {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IterationMetrics {
  int iteration = 0;
  int episode = 0;
  double model_loss = 0.0;  // -(weighted J_M)
  double image_ll = 0.0;
  double reward_ll = 0.0;
  double divergence = 0.0;
  double model_grad_norm = 0.0;
  behavior::BehaviorStats behavior;
};

struct EpisodeMetrics {
  int episode = 0;
  std::int64_t env_steps = 0;
  int steps = 0;
  std::array<double, 2> returns{};
  double mean_model_loss = 0.0;
  double mean_actor_loss = 0.0;
  double mean_critic_loss = 0.0;
};

std::string to_json_line(const IterationMetrics& m);
std::string to_json_line(const EpisodeMetrics& m);

/// Directory of the newest checkpoint below a run directory, or the path
/// itself when it already is a checkpoint directory.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);

class Trainer {
 public:
  /// Opens (or creates) a run directory. An existing run must have the same config.
  Trainer(VariantConfig config, std::filesystem::path run_dir);

  const VariantConfig& config() const { return config_; }
  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  replay::ReplayMemory& memory() { return memory_; }
  nn::Sampler& sampler() { return sampler_; }
  std::mt19937_64& replay_rng() { return replay_rng_; }
  behavior::BehaviorLearner& learner() { return *learner_; }
  torch::optim::Adam& model_optimizer() { return *model_opt_; }
  int episodes_done() const { return episodes_done_; }
  int iterations_done() const { return iterations_done_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }

  /// Random-policy races added to the memory.
  void seed_memory(int n_episodes);

  /// One exploring race of the current agent against itself; not added to memory.
  race::EpisodeRecord collect_episode(std::uint64_t env_seed, race::AccessLog* log = nullptr) const;

  /// Samples a batch and runs one model update and one behaviour update.
  IterationMetrics train_iteration();
  /// The same on a given batch. Non-finite losses or gradients throw before any parameter changes.
  IterationMetrics train_on_batch(const worldmodel::SequenceBatch& batch);

  /// Runs (or resumes) the schedule up to config.episodes episodes.
  void run(const std::function<void(const EpisodeMetrics&)>& on_episode = {});

  /// Writes a complete checkpoint atomically and points LATEST at it.
  std::filesystem::path save_checkpoint();
  /// Restores the newest checkpoint; false when the run has none.
  bool resume();

 private:
  void add_episode(race::EpisodeRecord episode, const std::string& file_name);
  void append_metrics(const std::filesystem::path& file, const std::string& line);

  VariantConfig config_;
  std::filesystem::path run_dir_;
  Agent agent_;
  std::unique_ptr<torch::optim::Adam> model_opt_;
  std::unique_ptr<behavior::BehaviorLearner> learner_;
  replay::ReplayMemory memory_;
  std::vector<std::string> episode_files_;
  nn::Sampler sampler_;
  std::mt19937_64 replay_rng_;
  int episodes_done_ = 0;
  int iterations_done_ = 0;
  std::int64_t env_steps_ = 0;  // control steps of collected training episodes
};

}  // namespace dlc::trainer
