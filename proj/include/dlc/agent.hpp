#pragma once

// A trained (or fresh) agent: world model, shared policy and critic for one
// variant, plus the driver that deploys it in a race.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dlc/behavior.hpp"
#include "dlc/config.hpp"
#include "dlc/race.hpp"
#include "dlc/worldmodel.hpp"

namespace dlc {

/// Independent stream seed derived from a root seed and a stream name.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

struct Agent {
  VariantConfig config;
  worldmodel::Architecture arch;
  worldmodel::WorldModel model{nullptr};
  behavior::ActionModel policy{nullptr};
  behavior::ValueModel value{nullptr};

  torch::TensorOptions options() const { return model->options(); }
};

/// Builds and initialises every network from the config's root seed.
Agent make_agent(const VariantConfig& config);

/// [3, H, W] intensities in [0, 1].
torch::Tensor observation_tensor(const env::Observation& obs, const torch::TensorOptions& options);

class ParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat named-tensor container: magic, version, config hash, then each tensor
/// with its name, dtype and shape. Readers verify every name and shape.
void save_parameters(const Agent& agent, const std::filesystem::path& path);
void load_parameters(Agent& agent, const std::filesystem::path& path);

/// Restores an agent from a checkpoint directory (config + parameters).
Agent load_agent(const std::filesystem::path& checkpoint_dir);

/// Deploys an agent in a race. Filtering depends on the variant:
///  - joint+observer: own observation only; the opponent's embedding comes
///    from the observer head and its previous action from the policy applied
///    to the predicted opponent state.
///  - joint: both agents' true observations and actions (centralised baseline).
///  - individual: own observation and action only, single-agent model.
class LatentDriver final : public race::Driver {
 public:
  LatentDriver(const Agent& agent, behavior::ActMode mode, double explore_noise, std::string label = {});

  void begin(int self, std::uint64_t seed) override;
  race::PolicyAction act(const race::StepView& view) override;
  std::string name() const override { return label_; }

  const worldmodel::JointLatent& state() const { return state_; }
  const race::PolicyAction& predicted_opponent_action() const { return predicted_opponent_; }

 private:
  torch::Tensor to_tensor(const race::PolicyAction& a) const;

  const Agent* agent_;
  behavior::ActMode mode_;
  double explore_noise_;
  std::string label_;
  int self_ = 0;
  nn::Sampler sampler_ = nn::Sampler::deterministic();
  worldmodel::JointLatent state_;
  race::PolicyAction own_last_{};
  race::PolicyAction predicted_opponent_{};
};

}  // namespace dlc
