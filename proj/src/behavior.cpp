#include "dlc/behavior.hpp"

#include <cmath>
#include <stdexcept>

namespace dlc::behavior {

namespace F = torch::nn::functional;
using worldmodel::JointLatent;

ActionModelImpl::ActionModelImpl(const worldmodel::Architecture& arch, ActionModelOptions options)
    : options_(options), raw_init_std_(std::log(std::expm1(options.init_std))) {
  net_ = register_module("net", nn::Mlp(arch.feature_size(), arch.head_hidden, arch.action_layers,
                                        2 * worldmodel::kActionDim, nn::Activation::elu, arch.action_output));
  trace_inputs_ = {{"s_det", arch.deterministic}, {"s_stoch", arch.stochastic}};
}

ActionModelImpl::Distribution ActionModelImpl::distribution(const torch::Tensor& features) const {
  const auto raw = net_->forward(features, trace_, "action", trace_inputs_).chunk(2, -1);
  if (trace_) {
    trace_->back().outputs = {{"mu_a", {worldmodel::kActionDim}}, {"sigma_a", {worldmodel::kActionDim}}};
  }
  return {options_.mean_scale * torch::tanh(raw[0] / options_.mean_scale),
          F::softplus(raw[1] + raw_init_std_) + options_.min_std};
}

torch::Tensor ActionModelImpl::forward(const torch::Tensor& features, ActMode mode, nn::Sampler& sampler) const {
  const auto d = distribution(features);
  if (mode == ActMode::mode || sampler.is_deterministic()) return torch::tanh(d.mean);
  return torch::tanh(d.mean + d.stddev * sampler.normal(d.mean.sizes(), d.mean.options()));
}

torch::Tensor ActionModelImpl::act(const torch::Tensor& features, ActMode mode, double explore_noise,
                                   nn::Sampler& sampler) const {
  torch::NoGradGuard no_grad;
  torch::Tensor a = forward(features, mode, sampler);
  if (explore_noise > 0.0 && !sampler.is_deterministic())
    a = a + explore_noise * sampler.normal(a.sizes(), a.options());
  return a.clamp(-1.0, 1.0);
}

ValueModelImpl::ValueModelImpl(const worldmodel::Architecture& arch) {
  net_ = register_module("net", nn::Mlp(arch.feature_size(), arch.head_hidden, arch.value_layers, 1,
                                        nn::Activation::elu, arch.scalar_output));
  trace_inputs_ = {{"s_det", arch.deterministic}, {"s_stoch", arch.stochastic}};
}

torch::Tensor ValueModelImpl::forward(const torch::Tensor& features) const {
  return net_->forward(features, trace_, "value", trace_inputs_).squeeze(-1);
}

torch::Tensor ImaginedTrajectory::start_features() const {
  std::vector<torch::Tensor> per_step;
  for (int t = 0; t < horizon(); ++t) {
    std::vector<torch::Tensor> per_agent;
    for (int i = 0; i < agents; ++i) per_agent.push_back(states[t].agent(i).features());
    per_step.push_back(torch::stack(per_agent, 1));
  }
  return torch::stack(per_step);
}

ImaginedTrajectory imagine_trajectories(const worldmodel::WorldModelImpl& model, const ActionModelImpl& policy,
                                        const ValueModelImpl& value, const JointLatent& start, int horizon,
                                        nn::Sampler& sampler) {
  if (horizon < 1) throw std::invalid_argument("imagination horizon must be at least 1");
  const int n = model.agents();
  ImaginedTrajectory traj;
  traj.agents = n;
  traj.states.push_back(start);

  std::vector<torch::Tensor> actions, rewards, values;
  auto per_agent = [n](const JointLatent& s, auto&& head) {
    std::vector<torch::Tensor> out;
    for (int i = 0; i < n; ++i) out.push_back(head(s.agent(i).features()));
    return torch::stack(out, 1);
  };
  values.push_back(per_agent(start, [&](const torch::Tensor& f) { return value.forward(f); }));
  for (int t = 0; t < horizon; ++t) {
    // Each agent's action comes from the shared policy applied to its own slice.
    const auto a = per_agent(traj.states.back(),
                             [&](const torch::Tensor& f) { return policy.forward(f, ActMode::sample, sampler); });
    JointLatent next = model.imagine_step(traj.states.back(), a.flatten(1), sampler);
    rewards.push_back(per_agent(next, [&](const torch::Tensor& f) { return model.predict_reward(f); }));
    values.push_back(per_agent(next, [&](const torch::Tensor& f) { return value.forward(f); }));
    actions.push_back(a);
    traj.states.push_back(std::move(next));
  }
  traj.actions = torch::stack(actions);
  traj.rewards = torch::stack(rewards);
  traj.values = torch::stack(values);
  return traj;
}

torch::Tensor lambda_return(const torch::Tensor& rewards, const torch::Tensor& values, double gamma, double lambda) {
  if (rewards.dim() < 1 || values.dim() != rewards.dim() || values.size(0) != rewards.size(0) + 1)
    throw std::invalid_argument("lambda_return needs one more value than rewards along the first dimension");
  for (std::int64_t d = 1; d < rewards.dim(); ++d)
    if (rewards.size(d) != values.size(d)) throw std::invalid_argument("lambda_return: reward/value shapes differ");
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda_return: gamma and lambda must lie in [0, 1]");
  const std::int64_t h = rewards.size(0);
  std::vector<torch::Tensor> out(static_cast<std::size_t>(h));
  torch::Tensor next = values[h];
  for (std::int64_t t = h - 1; t >= 0; --t) {
    next = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * next);
    out[static_cast<std::size_t>(t)] = next;
  }
  return torch::stack(out);
}

torch::Tensor actor_objective(const ImaginedTrajectory& traj, double gamma, double lambda) {
  return -lambda_return(traj.rewards, traj.values, gamma, lambda).mean();
}

torch::Tensor critic_objective(const ImaginedTrajectory& traj, const ValueModelImpl& value, double gamma,
                               double lambda) {
  const auto targets = lambda_return(traj.rewards, traj.values, gamma, lambda);
  return critic_objective(traj.start_features(), targets, value);
}

torch::Tensor critic_objective(const torch::Tensor& features, const torch::Tensor& targets,
                               const ValueModelImpl& value) {
  const auto predicted = value.forward(features.detach());
  if (predicted.sizes() != targets.sizes()) throw std::invalid_argument("critic targets do not match the states");
  return (predicted - targets.detach()).pow(2).mean();
}

FrozenParameters::FrozenParameters(torch::nn::Module& module) {
  for (auto& p : module.parameters()) {
    params_.push_back(p);
    previous_.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
}

FrozenParameters::~FrozenParameters() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(previous_[i]);
}

void require_finite_gradients(const torch::nn::Module& module, const char* owner) {
  for (const auto& p : module.named_parameters()) {
    const auto& g = p.value().grad();
    if (g.defined() && !torch::isfinite(g).all().item<bool>())
      throw std::domain_error(std::string("non-finite gradient in ") + owner + "." + p.key());
  }
}

double clip_gradients(torch::nn::Module& module, double max_norm) {
  return torch::nn::utils::clip_grad_norm_(module.parameters(), max_norm);
}

BehaviorLearner::BehaviorLearner(ActionModel policy, ValueModel value, BehaviorOptions options)
    : policy_(std::move(policy)),
      value_(std::move(value)),
      options_(options),
      actor_opt_(policy_->parameters(), torch::optim::AdamOptions(options.actor_lr).eps(options.adam_eps)),
      value_opt_(value_->parameters(), torch::optim::AdamOptions(options.value_lr).eps(options.adam_eps)) {}

BehaviorStats BehaviorLearner::update(worldmodel::WorldModelImpl& model, const JointLatent& start,
                                      nn::Sampler& sampler) {
  BehaviorStats stats = compute_gradients(model, start, sampler);
  apply_gradients(stats);
  return stats;
}

BehaviorStats BehaviorLearner::compute_gradients(worldmodel::WorldModelImpl& model, const JointLatent& start,
                                                 nn::Sampler& sampler) {
  FrozenParameters frozen(model);
  const auto traj = imagine_trajectories(model, *policy_, *value_, start.detached(), options_.horizon, sampler);

  const auto actor_loss = actor_objective(traj, options_.gamma, options_.lambda);
  actor_opt_.zero_grad();
  actor_loss.backward();
  // The actor loss also reaches the critic through the bootstrap values;
  // those gradients are discarded before the critic's own backward pass.
  value_opt_.zero_grad();
  const auto critic_loss = critic_objective(traj, *value_, options_.gamma, options_.lambda);
  critic_loss.backward();

  require_finite_gradients(*policy_, "policy");
  require_finite_gradients(*value_, "value");
  BehaviorStats stats;
  stats.actor_loss = actor_loss.item<double>();
  stats.critic_loss = critic_loss.item<double>();
  stats.mean_return = -stats.actor_loss;
  return stats;
}

void BehaviorLearner::apply_gradients(BehaviorStats& stats) {
  stats.actor_grad_norm = clip_gradients(*policy_, options_.grad_clip);
  stats.value_grad_norm = clip_gradients(*value_, options_.grad_clip);
  actor_opt_.step();
  value_opt_.step();
}

}  // namespace dlc::behavior
