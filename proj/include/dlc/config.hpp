#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlc {

/// Raised when a configuration document or override fails validation.
/// Carries every problem found, not just the first one.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

struct EnvConfig {
  int image_size = 96;
  double view_size_m = 40.0;  // edge of the square ego window, world meters
  int num_tiles = 100;
  double track_radius_m = 60.0;
  double track_half_width_m = 6.0;
  double track_roughness = 0.22;  // relative amplitude of the radial harmonics
  int track_retries = 32;
  double physics_dt = 1.0 / 50.0;
  int action_repeat = 2;  // physics steps per control decision
  int max_steps = 1000;   // T, counted in control steps
  double tire_friction = 1.0;
  double grass_friction_factor = 0.4;
  bool solo = false;  // second car absent (single-agent races)
  bool backward_penalty = false;
  double backward_penalty_value = 0.1;
};

enum class Variant { individual, joint, joint_observer };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

/// Everything needed to reproduce one training run.
struct VariantConfig {
  Variant variant = Variant::joint_observer;
  std::string preset = "paper";
  EnvConfig env;

  int episodes = 500;           // K
  int train_iterations = 200;   // S, per collected episode
  int seed_episodes = 5;
  int batch_size = 50;
  int sequence_length = 50;     // L
  int horizon = 15;             // H
  int replay_capacity = 0;      // 0 keeps every episode

  double gamma = 0.99;
  double lambda = 0.95;
  double beta = 1.0;
  double model_lr = 6e-4;
  double value_lr = 6e-4;
  double actor_lr = 8e-5;
  double grad_clip = 100.0;
  double adam_eps = 1e-7;
  double explore_noise = 0.3;
  double action_mean_scale = 5.0;
  double action_init_std = 5.0;
  double action_min_std = 1e-4;

  std::uint64_t seed = 0;
  bool double_precision = false;
  int eval_races = 5;

  int agents() const { return variant == Variant::individual ? 1 : 2; }
  bool observer() const { return variant == Variant::joint_observer; }
};

/// Applies the named preset's defaults ("paper", "desk", "tiny").
void apply_preset(VariantConfig& cfg, const std::string& preset);

/// Parses a flat `key = value` document. `preset` is applied first, then the
/// remaining keys in any order. Unknown keys and malformed values are errors.
VariantConfig parse_config(const std::string& text);
VariantConfig load_config(const std::string& path);

/// Applies `key=value` overrides on top of an existing config.
void apply_overrides(VariantConfig& cfg, const std::vector<std::string>& overrides);

/// Canonical serialization; parse_config(serialize_config(c)) == c.
std::string serialize_config(const VariantConfig& cfg);

/// Range and consistency checks; throws ConfigError listing every problem.
void validate(const VariantConfig& cfg);

/// Stable FNV-1a hash of the canonical serialization, as 16 hex digits.
std::string config_hash(const VariantConfig& cfg);
std::string env_config_hash(const EnvConfig& env);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace dlc
