#pragma once

// Running races between drivers, with every read a driver makes of the race
// streams recorded so that information flow can be audited.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dlc/config.hpp"
#include "dlc/env.hpp"

namespace dlc::race {

using PolicyAction = std::array<float, env::kActionDim>;

/// Maps a policy-space action in [-1, 1]^3 to the environment; gas and brake
/// are clamped into [0, 1] by the environment.
env::EnvAction to_env_action(const PolicyAction& a);

enum class Stream { observation, action, reward, state };
std::string to_string(Stream s);

struct AccessRecord {
  int reader = 0;
  Stream stream = Stream::observation;
  int owner = 0;  // -1 for the privileged simulator state
  int step = 0;
};

class AccessLog {
 public:
  void record(const AccessRecord& r) { records_.push_back(r); }
  const std::vector<AccessRecord>& records() const { return records_; }
  /// Reads by `reader` of any stream owned by someone else (including the simulator state).
  std::vector<AccessRecord> foreign_reads(int reader) const;
  std::size_t count(int reader, Stream stream, int owner) const;
  void clear() { records_.clear(); }

 private:
  std::vector<AccessRecord> records_;
};

/// Per-step race data shared by both drivers. Observations render on first use.
class RaceFrame {
 public:
  RaceFrame(const EnvConfig& config, const env::EnvState& state, int step, std::array<PolicyAction, 2> last_actions,
            std::array<double, 2> last_rewards, std::array<std::optional<env::Observation>, 2> observations = {});

  const env::Observation& observation(int agent) const;
  const PolicyAction& last_action(int agent) const { return last_actions_.at(agent); }
  double last_reward(int agent) const { return last_rewards_.at(agent); }
  const env::EnvState& state() const { return *state_; }
  const EnvConfig& config() const { return *config_; }
  int step() const { return step_; }

 private:
  const EnvConfig* config_;
  const env::EnvState* state_;
  int step_;
  std::array<PolicyAction, 2> last_actions_;
  std::array<double, 2> last_rewards_;
  mutable std::array<std::optional<env::Observation>, 2> observations_;
};

/// What one driver may look at. Every accessor logs the read.
class StepView {
 public:
  StepView(const RaceFrame& frame, int self, AccessLog* log) : frame_(&frame), self_(self), log_(log) {}

  int self() const { return self_; }
  int step() const { return frame_->step(); }
  const EnvConfig& config() const { return frame_->config(); }

  const env::Observation& observation(int agent) const;
  const PolicyAction& last_action(int agent) const;
  double last_reward(int agent) const;
  /// Privileged simulator state, for scripted drivers only.
  const env::EnvState& env_state() const;

 private:
  void log(Stream s, int owner) const;
  const RaceFrame* frame_;
  int self_;
  AccessLog* log_;
};

class Driver {
 public:
  virtual ~Driver() = default;
  /// Called before each race; `seed` pins any internal randomness.
  virtual void begin(int self, std::uint64_t seed) = 0;
  virtual PolicyAction act(const StepView& view) = 0;
  virtual std::string name() const = 0;
};

/// Uniform actions in [-1, 1]^3.
class RandomDriver final : public Driver {
 public:
  void begin(int self, std::uint64_t seed) override;
  PolicyAction act(const StepView& view) override;
  std::string name() const override { return "random"; }

 private:
  std::mt19937_64 rng_;
};

/// Track follower with a curvature speed limit and an overtaking offset.
/// Reads the simulator state directly.
class ScriptedDriver final : public Driver {
 public:
  explicit ScriptedDriver(double top_speed, std::string label);
  static std::unique_ptr<ScriptedDriver> fast();
  static std::unique_ptr<ScriptedDriver> slow();

  void begin(int, std::uint64_t) override {}
  PolicyAction act(const StepView& view) override;
  std::string name() const override { return label_; }

 private:
  double top_speed_;
  std::string label_;
};

/// Recorded race, step t holding o_t, the action taken at o_t, and the reward it earned.
struct EpisodeRecord {
  std::uint64_t env_seed = 0;
  int image_size = 0;
  std::array<std::vector<env::Observation>, 2> observations;
  std::array<std::vector<PolicyAction>, 2> actions;
  std::array<std::vector<double>, 2> rewards;

  int length() const { return static_cast<int>(rewards[0].size()); }
  double total_reward(int agent) const;
  bool operator==(const EpisodeRecord&) const = default;
};

struct RaceOptions {
  bool record = false;
  AccessLog* log = nullptr;
};

struct RaceResult {
  std::array<double, 2> scores{};
  std::array<int, 2> tiles{};
  int steps = 0;
  std::optional<EpisodeRecord> episode;
};

/// Runs one race to completion. `second` may be null when config.solo is set.
RaceResult run_race(const EnvConfig& config, std::uint64_t seed, Driver& first, Driver* second,
                    const RaceOptions& options = {});

}  // namespace dlc::race
