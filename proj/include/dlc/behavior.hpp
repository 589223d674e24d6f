#pragma once

// Shared actor and critic over per-agent latent states, trained on imagined
// self-play rollouts of the world model.

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "dlc/nn.hpp"
#include "dlc/worldmodel.hpp"

namespace dlc::behavior {

struct ActionModelOptions {
  double mean_scale = 5.0;
  double init_std = 5.0;
  double min_std = 1e-4;
};

enum class ActMode { sample, mode };

/// Tanh-squashed Gaussian policy q(a | s) with a 4-layer dense trunk.
class ActionModelImpl : public torch::nn::Module {
 public:
  ActionModelImpl(const worldmodel::Architecture& arch, ActionModelOptions options = {});

  struct Distribution {
    torch::Tensor mean;    // pre-squash, rescaled
    torch::Tensor stddev;  // pre-squash
  };
  Distribution distribution(const torch::Tensor& features) const;

  /// Actions in (-1, 1)^3 for features [B, d + s]; differentiable in sample mode.
  torch::Tensor forward(const torch::Tensor& features, ActMode mode, nn::Sampler& sampler) const;

  /// Acting in the environment: optional additive exploration noise, then a
  /// clamp to the action box. No gradient.
  torch::Tensor act(const torch::Tensor& features, ActMode mode, double explore_noise, nn::Sampler& sampler) const;

  void set_trace(nn::LayerTrace* trace) const { trace_ = trace; }

 private:
  ActionModelOptions options_;
  double raw_init_std_;
  mutable nn::Mlp net_{nullptr};
  std::vector<std::pair<std::string, std::int64_t>> trace_inputs_;
  mutable nn::LayerTrace* trace_ = nullptr;
};
TORCH_MODULE(ActionModel);

/// v(s): 3-layer dense net to a scalar.
class ValueModelImpl : public torch::nn::Module {
 public:
  explicit ValueModelImpl(const worldmodel::Architecture& arch);
  torch::Tensor forward(const torch::Tensor& features) const;
  const torch::nn::Linear& output_layer() const { return net_->output_layer(); }
  void set_trace(nn::LayerTrace* trace) const { trace_ = trace; }

 private:
  mutable nn::Mlp net_{nullptr};
  std::vector<std::pair<std::string, std::int64_t>> trace_inputs_;
  mutable nn::LayerTrace* trace_ = nullptr;
};
TORCH_MODULE(ValueModel);

/// Imagined rollout from N start states over H steps.
struct ImaginedTrajectory {
  int agents = 2;
  std::vector<worldmodel::JointLatent> states;  // H + 1, [N, ...]
  torch::Tensor actions;                        // [H, N, agents, 3]
  torch::Tensor rewards;                        // [H, N, agents]; reward predicted for s_{tau+1}
  torch::Tensor values;                         // [H + 1, N, agents]

  int horizon() const { return static_cast<int>(states.size()) - 1; }
  /// Per-agent features of every state except the last: [H, N, agents, d + s].
  torch::Tensor start_features() const;
};

/// Rolls the joint prior forward; both agents act through the same policy.
ImaginedTrajectory imagine_trajectories(const worldmodel::WorldModelImpl& model, const ActionModelImpl& policy,
                                        const ValueModelImpl& value, const worldmodel::JointLatent& start, int horizon,
                                        nn::Sampler& sampler);

/// Lambda-returns along the first dimension: rewards [H, ...], values [H + 1, ...]
/// -> [H, ...], where entry tau mixes the k-step estimates truncated at the
/// horizon end.
torch::Tensor lambda_return(const torch::Tensor& rewards, const torch::Tensor& values, double gamma, double lambda);

/// -mean of V_lambda over tau, batch and agents.
torch::Tensor actor_objective(const ImaginedTrajectory& traj, double gamma, double lambda);

/// Mean squared error between v(s_tau) on detached states and frozen V_lambda targets.
torch::Tensor critic_objective(const ImaginedTrajectory& traj, const ValueModelImpl& value, double gamma,
                               double lambda);
/// Same regression on given per-agent features [H, N, agents, d + s] and targets [H, N, agents].
torch::Tensor critic_objective(const torch::Tensor& features, const torch::Tensor& targets,
                               const ValueModelImpl& value);

struct BehaviorOptions {
  int horizon = 15;
  double gamma = 0.99;
  double lambda = 0.95;
  double actor_lr = 8e-5;
  double value_lr = 6e-4;
  double adam_eps = 1e-7;
  double grad_clip = 100.0;
};

struct BehaviorStats {
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double mean_return = 0.0;
  double actor_grad_norm = 0.0;
  double value_grad_norm = 0.0;
};

/// Disables gradients of a module's parameters for its lifetime.
class FrozenParameters {
 public:
  explicit FrozenParameters(torch::nn::Module& module);
  ~FrozenParameters();
  FrozenParameters(const FrozenParameters&) = delete;
  FrozenParameters& operator=(const FrozenParameters&) = delete;

 private:
  std::vector<torch::Tensor> params_;
  std::vector<bool> previous_;
};

/// Finite check over every gradient; throws std::domain_error naming the parameter.
void require_finite_gradients(const torch::nn::Module& module, const char* owner);

/// Global L2 norm clip; returns the norm before clipping.
double clip_gradients(torch::nn::Module& module, double max_norm);

class BehaviorLearner {
 public:
  BehaviorLearner(ActionModel policy, ValueModel value, BehaviorOptions options);

  /// One Adam step each on the actor and critic objectives. Non-finite
  /// gradients throw before either optimiser steps.
  BehaviorStats update(worldmodel::WorldModelImpl& model, const worldmodel::JointLatent& start, nn::Sampler& sampler);

  /// The two halves of update(): fill and check gradients, then clip and step.
  /// Lets a caller hold back every optimiser until all gradients are known finite.
  BehaviorStats compute_gradients(worldmodel::WorldModelImpl& model, const worldmodel::JointLatent& start,
                                  nn::Sampler& sampler);
  void apply_gradients(BehaviorStats& stats);

  ActionModel& policy() { return policy_; }
  ValueModel& value() { return value_; }
  torch::optim::Adam& actor_optimizer() { return actor_opt_; }
  torch::optim::Adam& value_optimizer() { return value_opt_; }
  const BehaviorOptions& options() const { return options_; }

 private:
  ActionModel policy_;
  ValueModel value_;
  BehaviorOptions options_;
  torch::optim::Adam actor_opt_;
  torch::optim::Adam value_opt_;
};

}  // namespace dlc::behavior
