#pragma once

// Evaluation harness: round-robin tournaments, solo skill races and
// closed/open-loop prediction rollouts with image export.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dlc/agent.hpp"
#include "dlc/race.hpp"

namespace dlc::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One tournament entrant: a factory for fresh drivers and, for learned
/// agents, the environment it was trained on.
struct Contestant {
  std::string name;
  std::function<std::unique_ptr<race::Driver>()> make_driver;
  std::optional<EnvConfig> env;  // unset for scripted and random entrants
  std::shared_ptr<const Agent> agent;
};

/// "scripted:fast", "scripted:slow" or "random".
Contestant builtin_contestant(const std::string& spec);
/// Learned agent from a run or checkpoint directory, acting with mode actions.
Contestant checkpoint_contestant(const std::filesystem::path& path, const std::string& name = {});
/// Dispatches on the spec: built-in names, otherwise a checkpoint path.
Contestant make_contestant(const std::string& spec);

/// The environment shared by every learned contestant; `fallback` when none
/// has one. Throws EvalError when learned contestants disagree.
EnvConfig common_env(const std::vector<Contestant>& contestants, const EnvConfig& fallback);

struct RaceOutcome {
  std::uint64_t seed = 0;
  bool swapped = false;  // contestant b drove car 1
  double score_a = 0.0;
  double score_b = 0.0;
  int steps = 0;
};

/// Higher episode score wins; scores within this tolerance are a draw.
inline constexpr double kDrawTolerance = 1e-9;

struct PairingResult {
  std::string a;
  std::string b;
  int races = 0;
  int wins_a = 0;
  int wins_b = 0;
  int draws = 0;
  double mean_score_a = 0.0;
  double mean_score_b = 0.0;
  std::vector<RaceOutcome> outcomes;

  /// Draws count half.
  double win_ratio_a() const;
  double win_ratio_b() const { return 1.0 - win_ratio_a(); }
};

/// Wilson 95% interval for a proportion.
std::pair<double, double> binomial_interval(double successes, int trials, double z = 1.959963984540054);

struct TournamentResult {
  EnvConfig env;
  std::uint64_t seed = 0;
  std::vector<PairingResult> pairings;
};

/// Plays `races` seeded races; the car assignment is drawn per race.
PairingResult play_pairing(const Contestant& a, const Contestant& b, int races, std::uint64_t seed,
                           const EnvConfig& env);

/// Every unordered pairing of distinct contestants.
TournamentResult round_robin(const std::vector<Contestant>& contestants, int races_per_pairing, std::uint64_t seed,
                             const EnvConfig& fallback_env);

std::string to_json(const TournamentResult& result);
std::string to_table(const TournamentResult& result);

struct SoloResult {
  std::string name;
  std::vector<double> scores;
  std::vector<int> tiles;
  double mean() const;
};

/// Races with the opponent absent.
SoloResult single_agent_eval(const Contestant& c, int races, std::uint64_t seed, const EnvConfig& env);

/// Decoded image means for both viewpoints, aligned with ground truth frames.
struct PredictionRollout {
  int start = 0;
  int context = 0;
  int horizon = 0;
  std::vector<torch::Tensor> ego;       // [3, H, W] in model space, clamped to [0, 1]
  std::vector<torch::Tensor> opponent;  // empty for the individual variant
  std::vector<env::Observation> ego_truth;
  std::vector<env::Observation> opponent_truth;
  std::vector<double> ego_mse;
  std::vector<double> opponent_mse;
  std::vector<bool> opponent_in_view;  // detected in agent 1's true frame

  int frames() const { return static_cast<int>(ego.size()); }
};

/// `context` posterior steps from `start` on agent 1's stream, then `horizon`
/// prior steps with agent 1's recorded actions replayed and agent 2's actions
/// predicted by the policy. Every read of the episode by the filter is logged
/// in `log` with agent 1 as the reader.
PredictionRollout open_loop_prediction(const Agent& agent, const race::EpisodeRecord& episode, int start, int context,
                                       int horizon, race::AccessLog* log = nullptr);

/// Filters the full prefix up to and including step t, no imagination.
PredictionRollout closed_loop_prediction(const Agent& agent, const race::EpisodeRecord& episode, int t,
                                         race::AccessLog* log = nullptr);

/// Rows: ego prediction, ego truth, opponent prediction, opponent truth.
void write_prediction_grid(const PredictionRollout& rollout, const std::filesystem::path& png);

/// RGB8 image written losslessly.
void write_png(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int& width, int& height);

/// Centroid (row, col) of pixels whose color is far from every background
/// color (grass, road, kerbs), ignoring the ego car's footprint at the image
/// center; empty when fewer than `min_pixels` such pixels exist.
std::optional<std::pair<double, double>> opponent_car_centroid(const torch::Tensor& image, const EnvConfig& env,
                                                               int min_pixels = 3);

std::string to_json(const PredictionRollout& rollout);

}  // namespace dlc::eval
