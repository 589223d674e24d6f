#include "dlc/worldmodel.hpp"

#include <stdexcept>

namespace dlc::worldmodel {

namespace F = torch::nn::functional;
using nn::Activation;

int Architecture::embedding_size() const {
  const auto sides = encoder_sides();
  return sides.back() * sides.back() * encoder.back().channels;
}

std::vector<int> Architecture::encoder_sides() const {
  std::vector<int> sides;
  int side = image_size;
  for (const auto& c : encoder) {
    side = (side - c.kernel) / c.stride + 1;
    sides.push_back(side);
  }
  return sides;
}

std::vector<int> Architecture::decoder_sides() const {
  std::vector<int> sides;
  int side = decoder_seed[0];
  for (const auto& d : decoder) {
    side = (side - 1) * d.stride + d.kernel + d.output_padding;
    sides.push_back(side);
  }
  return sides;
}

Architecture architecture_preset(const std::string& name) {
  Architecture a;
  a.name = name;
  if (name == "paper") {
    a.image_size = 96;
    a.encoder = {{32, 4, 3}, {64, 4, 2}, {128, 4, 2}, {256, 4, 2}};
    a.decoder_seed = {1, 1, 1024};
    // The third layer's "p=1" is an output padding: 13 -> 31 needs (13-1)*2+6+1.
    a.decoder = {{128, 5, 2, 0}, {64, 5, 2, 0}, {32, 6, 2, 1}, {3, 6, 3, 0}};
    a.deterministic = 200;
    a.stochastic = 30;
    a.transition_hidden = 300;
    a.head_hidden = 400;
    a.decoder_output = Activation::relu;
    a.scalar_output = Activation::elu;
    a.action_output = Activation::elu;
  } else if (name == "desk") {
    a.image_size = 64;
    a.encoder = {{16, 4, 2}, {32, 4, 2}, {16, 4, 3}};
    a.decoder_seed = {4, 4, 16};
    a.decoder = {{32, 5, 3, 0}, {16, 5, 2, 0}, {3, 4, 2, 0}};
    a.deterministic = 64;
    a.stochastic = 16;
    a.transition_hidden = 100;
    a.head_hidden = 128;
    a.decoder_output = Activation::none;
    a.scalar_output = Activation::none;
    a.action_output = Activation::none;
  } else if (name == "tiny") {
    a.image_size = 16;
    a.encoder = {{4, 4, 2}, {8, 3, 2}};
    a.decoder_seed = {3, 3, 8};
    a.decoder = {{4, 3, 2, 0}, {3, 4, 2, 0}};
    a.deterministic = 8;
    a.stochastic = 4;
    a.transition_hidden = 8;
    a.head_hidden = 16;
    a.decoder_output = Activation::none;
    a.scalar_output = Activation::none;
    a.action_output = Activation::none;
  } else {
    throw std::invalid_argument("unknown architecture preset '" + name + "'");
  }
  if (a.decoder_sides().back() != a.image_size)
    throw std::logic_error("decoder of preset '" + name + "' does not reproduce the image size");
  return a;
}

torch::Tensor flip_agents(const torch::Tensor& joint, int agents) {
  if (agents == 1) return joint;
  auto parts = joint.chunk(agents, -1);
  std::reverse(parts.begin(), parts.end());
  return torch::cat(parts, -1);
}

torch::Tensor join_agents(const std::vector<torch::Tensor>& parts) { return torch::cat(parts, -1); }

JointLatent JointLatent::zeros(std::int64_t batch, const Architecture& arch, int agents,
                               const torch::TensorOptions& opts) {
  JointLatent s;
  s.agents = agents;
  s.deterministic = torch::zeros({batch, agents * arch.deterministic}, opts);
  s.stochastic = torch::zeros({batch, agents * arch.stochastic}, opts);
  s.mean = torch::zeros({batch, agents * arch.stochastic}, opts);
  s.stddev = torch::ones({batch, agents * arch.stochastic}, opts);
  return s;
}

LatentState JointLatent::agent(int i) const {
  auto pick = [this, i](const torch::Tensor& t) { return t.chunk(agents, -1)[i]; };
  return {pick(deterministic), pick(stochastic), pick(mean), pick(stddev)};
}

JointLatent JointLatent::flipped() const {
  return {agents, flip_agents(deterministic, agents), flip_agents(stochastic, agents), flip_agents(mean, agents),
          flip_agents(stddev, agents)};
}

JointLatent JointLatent::detached() const {
  return {agents, deterministic.detach(), stochastic.detach(), mean.detach(), stddev.detach()};
}

WorldModelImpl::WorldModelImpl(Architecture arch, int agents, bool observer)
    : arch_(std::move(arch)), agents_(agents), observer_(observer) {
  if (agents_ != 1 && agents_ != 2) throw std::invalid_argument("world model supports 1 or 2 agents");
  if (observer_ && agents_ != 2) throw std::invalid_argument("the observer head needs two agents");

  auto build_encoder = [this](const std::string& prefix) {
    std::vector<torch::nn::Conv2d> convs;
    int in = 3;
    for (std::size_t i = 0; i < arch_.encoder.size(); ++i) {
      const auto& c = arch_.encoder[i];
      convs.push_back(register_module(prefix + std::to_string(i),
                                      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, c.channels, c.kernel).stride(c.stride))));
      in = c.channels;
    }
    return convs;
  };
  ego_convs_ = build_encoder("ego_conv");
  if (observer_) opponent_convs_ = build_encoder("opponent_conv");

  const int n = agents_;
  const int stoch = n * arch_.stochastic;
  const int det = n * arch_.deterministic;
  const int hidden = n * arch_.transition_hidden;
  img_in_ = register_module("img_in", torch::nn::Linear(stoch + n * kActionDim, hidden));
  cell_ = register_module("cell", torch::nn::GRUCell(hidden, det));
  img_hidden_ = register_module("img_hidden", torch::nn::Linear(det, hidden));
  img_out_ = register_module("img_out", torch::nn::Linear(hidden, 2 * stoch));
  obs_hidden_ = register_module("obs_hidden", torch::nn::Linear(det + n * arch_.embedding_size(), hidden));
  obs_out_ = register_module("obs_out", torch::nn::Linear(hidden, 2 * stoch));

  const auto& seed = arch_.decoder_seed;
  decoder_in_ = register_module("decoder_in", torch::nn::Linear(arch_.feature_size(), seed[0] * seed[1] * seed[2]));
  int in = seed[2];
  for (std::size_t i = 0; i < arch_.decoder.size(); ++i) {
    const auto& d = arch_.decoder[i];
    deconvs_.push_back(register_module(
        "deconv" + std::to_string(i),
        torch::nn::ConvTranspose2d(
            torch::nn::ConvTranspose2dOptions(in, d.channels, d.kernel).stride(d.stride).output_padding(d.output_padding))));
    in = d.channels;
  }
  reward_ = register_module("reward", nn::Mlp(arch_.feature_size(), arch_.head_hidden, arch_.reward_layers, 1,
                                              Activation::elu, arch_.scalar_output));
}

torch::TensorOptions WorldModelImpl::options() const {
  return torch::TensorOptions().dtype(img_in_->weight.dtype());
}

torch::Tensor WorldModelImpl::encode_head(std::vector<torch::nn::Conv2d>& convs, const torch::Tensor& images,
                                          const std::string& name) const {
  torch::Tensor h = images - 0.5;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    torch::Tensor out = torch::relu(convs[i]->forward(h));
    if (trace_) {
      nn::LayerRecord r{name, "Conv2D", {{i == 0 ? "obs" : "cv" + std::to_string(i), nn::sample_dims(h)}},
                        {{"cv" + std::to_string(i + 1), nn::sample_dims(out)}}, Activation::relu,
                        arch_.encoder[i].kernel, arch_.encoder[i].stride, 0};
      trace_->push_back(std::move(r));
    }
    h = out;
  }
  return h.flatten(1);
}

Embedding WorldModelImpl::encode(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != arch_.image_size ||
      images.size(3) != arch_.image_size)
    throw std::invalid_argument("encode expects [B, 3, " + std::to_string(arch_.image_size) + ", " +
                                std::to_string(arch_.image_size) + "] images");
  Embedding e;
  e.ego = encode_head(ego_convs_, images, "encoder");
  if (observer_) e.opponent = encode_head(opponent_convs_, images, "encoder_opponent");
  return e;
}

TransitionOutput WorldModelImpl::transition_pass(const torch::Tensor& prev_stochastic,
                                                 const torch::Tensor& prev_deterministic,
                                                 const torch::Tensor& actions) const {
  const torch::Tensor x = torch::elu(img_in_->forward(torch::cat({prev_stochastic, actions}, -1)));
  const torch::Tensor det = cell_->forward(x, prev_deterministic);
  const torch::Tensor y = torch::elu(img_hidden_->forward(det));
  const auto stats = img_out_->forward(y).chunk(2, -1);
  TransitionOutput out{det, stats[0], F::softplus(stats[1]) + kMinStddev};
  if (trace_) {
    const std::int64_t s = prev_stochastic.size(-1), a = actions.size(-1);
    trace_->push_back({"transition_imagine", "Dense", {{"s_prev_stoch", {s}}, {"a_prev", {a}}},
                       {{"fc_img_1", nn::sample_dims(x)}}, Activation::elu});
    trace_->push_back({"transition_imagine", "GRU",
                       {{"fc_img_1", nn::sample_dims(x)}, {"s_prev_det", nn::sample_dims(prev_deterministic)}},
                       {{"rs", nn::sample_dims(det)}, {"s_det", nn::sample_dims(det)}}, Activation::tanh});
    trace_->push_back({"transition_imagine", "Dense", {{"rs", nn::sample_dims(det)}},
                       {{"fc_img_2", nn::sample_dims(y)}}, Activation::elu});
    trace_->push_back({"transition_imagine", "Dense", {{"fc_img_2", nn::sample_dims(y)}},
                       {{"prior_mean", nn::sample_dims(out.mean)}, {"prior_std", nn::sample_dims(out.stddev)}},
                       Activation::none});
  }
  return out;
}

GaussianParams WorldModelImpl::posterior_pass(const torch::Tensor& deterministic, const torch::Tensor& embedding) const {
  const torch::Tensor x = torch::elu(obs_hidden_->forward(torch::cat({deterministic, embedding}, -1)));
  const auto stats = obs_out_->forward(x).chunk(2, -1);
  GaussianParams out{stats[0], F::softplus(stats[1]) + kMinStddev};
  if (trace_) {
    trace_->push_back({"transition_observe", "Dense",
                       {{"s_det", nn::sample_dims(deterministic)}, {"z", nn::sample_dims(embedding)}},
                       {{"fc_obs_1", nn::sample_dims(x)}}, Activation::elu});
    trace_->push_back({"transition_observe", "Dense", {{"fc_obs_1", nn::sample_dims(x)}},
                       {{"post_mean", nn::sample_dims(out.mean)}, {"post_std", nn::sample_dims(out.stddev)}},
                       Activation::none});
  }
  return out;
}

TransitionOutput WorldModelImpl::symmetrized_transition(const JointLatent& prev, const torch::Tensor& actions) const {
  TransitionOutput forward = transition_pass(prev.stochastic, prev.deterministic, actions);
  if (agents_ == 1) return forward;
  nn::LayerTrace* saved = trace_;
  trace_ = nullptr;
  TransitionOutput reversed = transition_pass(flip_agents(prev.stochastic, agents_),
                                              flip_agents(prev.deterministic, agents_), flip_agents(actions, agents_));
  trace_ = saved;
  auto average = [this](const torch::Tensor& a, const torch::Tensor& b_flipped) {
    return (a + flip_agents(b_flipped, agents_)) * 0.5;
  };
  return {average(forward.deterministic, reversed.deterministic), average(forward.mean, reversed.mean),
          average(forward.stddev, reversed.stddev)};
}

GaussianParams WorldModelImpl::symmetrized_posterior(const torch::Tensor& deterministic,
                                                     const torch::Tensor& embedding) const {
  GaussianParams forward = posterior_pass(deterministic, embedding);
  if (agents_ == 1) return forward;
  nn::LayerTrace* saved = trace_;
  trace_ = nullptr;
  GaussianParams reversed = posterior_pass(flip_agents(deterministic, agents_), flip_agents(embedding, agents_));
  trace_ = saved;
  return {(forward.mean + flip_agents(reversed.mean, agents_)) * 0.5,
          (forward.stddev + flip_agents(reversed.stddev, agents_)) * 0.5};
}

JointLatent WorldModelImpl::sample(const torch::Tensor& deterministic, const GaussianParams& params,
                                   nn::Sampler& sampler) const {
  JointLatent s;
  s.agents = agents_;
  s.deterministic = deterministic;
  s.mean = params.mean;
  s.stddev = params.stddev;
  s.stochastic = sampler.is_deterministic()
                     ? params.mean
                     : params.mean + params.stddev * sampler.normal(params.mean.sizes(), params.mean.options());
  return s;
}

namespace {
void require_finite(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>()) throw std::domain_error(std::string("non-finite ") + what);
}
}  // namespace

JointLatent WorldModelImpl::imagine_step(const JointLatent& prev, const torch::Tensor& actions,
                                         nn::Sampler& sampler) const {
  require_finite(actions, "actions in imagine_step");
  const TransitionOutput prior = symmetrized_transition(prev, actions);
  return sample(prior.deterministic, {prior.mean, prior.stddev}, sampler);
}

WorldModelImpl::ObserveResult WorldModelImpl::observe_step(const JointLatent& prev, const torch::Tensor& actions,
                                                           const torch::Tensor& embedding, nn::Sampler& sampler) const {
  if (embedding.size(-1) != agents_ * arch_.embedding_size())
    throw std::invalid_argument("joint embedding has length " + std::to_string(embedding.size(-1)) + ", expected " +
                                std::to_string(agents_ * arch_.embedding_size()));
  require_finite(actions, "actions in observe_step");
  require_finite(embedding, "embedding in observe_step");
  const TransitionOutput prior = symmetrized_transition(prev, actions);
  const GaussianParams post = symmetrized_posterior(prior.deterministic, embedding);
  return {sample(prior.deterministic, post, sampler), {prior.mean, prior.stddev}};
}

torch::Tensor WorldModelImpl::decode(const torch::Tensor& features) const {
  const auto& seed = arch_.decoder_seed;
  torch::Tensor flat = decoder_in_->forward(features);
  torch::Tensor h = flat.view({features.size(0), seed[2], seed[0], seed[1]});
  if (trace_) {
    trace_->push_back({"observation", "Dense",
                       {{"s_det", {arch_.deterministic}}, {"s_stoch", {arch_.stochastic}}},
                       {{"fc_o_1", nn::sample_dims(h)}}, Activation::none});
  }
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    const bool last = i + 1 == deconvs_.size();
    torch::Tensor out = nn::activate(deconvs_[i]->forward(h), last ? arch_.decoder_output : Activation::relu);
    if (trace_) {
      const auto& d = arch_.decoder[i];
      trace_->push_back({"observation", "Deconv2D", {{i == 0 ? "fc_o_1" : "dc" + std::to_string(i), nn::sample_dims(h)}},
                         {{"dc" + std::to_string(i + 1), nn::sample_dims(out)}},
                         last ? arch_.decoder_output : Activation::relu, d.kernel, d.stride, d.output_padding});
    }
    h = out;
  }
  return h;
}

torch::Tensor WorldModelImpl::predict_reward(const torch::Tensor& features) const {
  return reward_->forward(features, trace_, "reward",
                          {{"s_det", arch_.deterministic}, {"s_stoch", arch_.stochastic}})
      .squeeze(-1);
}

SequenceBatch SequenceBatch::to(const torch::TensorOptions& opts) const {
  SequenceBatch b;
  for (int i = 0; i < 2; ++i) {
    b.observations[i] = observations[i].to(opts.dtype());
    b.prev_actions[i] = prev_actions[i].to(opts.dtype());
    b.rewards[i] = rewards[i].to(opts.dtype());
  }
  b.is_first = is_first;
  return b;
}

JointLatent SourceRollout::flattened(int agents) const {
  auto flat = [](const torch::Tensor& t) { return t.reshape({-1, t.size(-1)}); };
  return {agents, flat(deterministic), flat(stochastic), flat(post_mean), flat(post_stddev)};
}

std::vector<StateSource> state_sources(const WorldModelImpl& model) {
  if (model.observer())
    return {{"s1,s2", 2.0, {false, false}}, {"s1,~s2", 1.0, {false, true}}, {"~s1,s2", 1.0, {true, false}}};
  return {{"s1,s2", 1.0, {false, false}}};
}

namespace {

SourceRollout filter(const WorldModelImpl& model, const StateSource& source, const torch::Tensor& embeddings,
                     const torch::Tensor& actions, std::int64_t batch, nn::Sampler& sampler) {
  const std::int64_t steps = embeddings.size(0);
  JointLatent state = JointLatent::zeros(batch, model.architecture(), model.agents(), model.options());
  std::vector<torch::Tensor> det, stoch, pm, ps, qm, qs;
  for (std::int64_t t = 0; t < steps; ++t) {
    auto r = model.observe_step(state, actions[t], embeddings[t], sampler);
    state = r.posterior;
    det.push_back(state.deterministic);
    stoch.push_back(state.stochastic);
    pm.push_back(state.mean);
    ps.push_back(state.stddev);
    qm.push_back(r.prior.mean);
    qs.push_back(r.prior.stddev);
  }
  return {source,
          torch::stack(det),
          torch::stack(stoch),
          torch::stack(pm),
          torch::stack(ps),
          torch::stack(qm),
          torch::stack(qs)};
}

}  // namespace

PosteriorRollout posterior_rollout(const WorldModelImpl& model, const SequenceBatch& batch, nn::Sampler& sampler) {
  const std::int64_t L = batch.length(), B = batch.batch();
  if (L < 1) throw std::invalid_argument("posterior_rollout needs at least one step");
  if (batch.is_first.defined() && L > 1 && batch.is_first.slice(0, 1).any().item<bool>())
    throw std::invalid_argument("training window crosses an episode boundary");

  std::array<Embedding, 2> emb;
  for (int i = 0; i < 2; ++i) {
    const auto& obs = batch.observations[i];
    Embedding e = model.encode(obs.reshape({L * B, 3, obs.size(3), obs.size(4)}));
    e.ego = e.ego.view({L, B, -1});
    if (e.opponent.defined()) e.opponent = e.opponent.view({L, B, -1});
    emb[i] = e;
  }

  PosteriorRollout out;
  if (model.agents() == 1) {
    const auto embeddings = torch::cat({emb[0].ego, emb[1].ego}, 1);
    const auto actions = torch::cat({batch.prev_actions[0], batch.prev_actions[1]}, 1);
    out.sources.push_back(filter(model, state_sources(model)[0], embeddings, actions, 2 * B, sampler));
    return out;
  }
  const auto actions = torch::cat({batch.prev_actions[0], batch.prev_actions[1]}, -1);
  for (const auto& source : state_sources(model)) {
    // Slot 1 uses z~1 predicted from o2; slot 2 uses z~2 predicted from o1.
    const auto slot0 = source.predicted[0] ? emb[1].opponent : emb[0].ego;
    const auto slot1 = source.predicted[1] ? emb[0].opponent : emb[1].ego;
    out.sources.push_back(filter(model, source, torch::cat({slot0, slot1}, -1), actions, B, sampler));
  }
  return out;
}

torch::Tensor gaussian_kl(const torch::Tensor& mean_q, const torch::Tensor& std_q, const torch::Tensor& mean_p,
                          const torch::Tensor& std_p) {
  const auto var_q = std_q.pow(2);
  const auto var_p = std_p.pow(2);
  return (torch::log(std_p / std_q) + (var_q + (mean_q - mean_p).pow(2)) / (2.0 * var_p) - 0.5).sum(-1);
}

ModelLossBreakdown representation_loss(const WorldModelImpl& model, const SequenceBatch& batch,
                                       const PosteriorRollout& rollout, double beta) {
  const std::int64_t L = batch.length(), B = batch.batch();
  const int n = model.agents();
  const auto& arch = model.architecture();

  ModelLossBreakdown out;
  torch::Tensor objective = torch::zeros({}, model.options());
  for (const auto& src : rollout.sources) {
    // Per-agent features and targets, arranged as [L, B, agents, ...].
    std::vector<torch::Tensor> feats;
    if (n == 2) {
      for (int i = 0; i < 2; ++i)
        feats.push_back(torch::cat({src.deterministic.chunk(2, -1)[i], src.stochastic.chunk(2, -1)[i]}, -1));
    } else {
      const auto f = torch::cat({src.deterministic, src.stochastic}, -1);  // [L, 2B, d+s]
      feats = {f.slice(1, 0, B), f.slice(1, B, 2 * B)};
    }
    torch::Tensor image_ll = torch::zeros({L, B}, model.options());
    torch::Tensor reward_ll = torch::zeros({L, B}, model.options());
    for (int i = 0; i < 2; ++i) {
      const auto flat = feats[i].reshape({L * B, arch.feature_size()});
      const auto recon = model.decode(flat).view({L, B, 3, arch.image_size, arch.image_size});
      image_ll = image_ll - 0.5 * (batch.observations[i] - recon).pow(2).sum({2, 3, 4});
      const auto r_hat = model.predict_reward(flat).view({L, B});
      reward_ll = reward_ll - 0.5 * (batch.rewards[i] - r_hat).pow(2);
    }
    torch::Tensor kl = gaussian_kl(src.post_mean, src.post_stddev, src.prior_mean, src.prior_stddev);
    if (n == 1) kl = kl.slice(1, 0, B) + kl.slice(1, B, 2 * B);

    const auto j_o = image_ll.mean();
    const auto j_r = reward_ll.mean();
    const auto j_d = -beta * kl.mean();
    SourceTerms terms{src.source.name, src.source.weight, j_o.item<double>(), j_r.item<double>(), j_d.item<double>()};
    for (auto [value, label] : {std::pair{terms.image_ll, "J_O"}, {terms.reward_ll, "J_R"}, {terms.divergence, "J_D"}})
      if (!std::isfinite(value))
        throw std::domain_error(std::string("non-finite ") + label + " for state source " + src.source.name);
    objective = objective + src.source.weight * (j_o + j_r + j_d);
    out.image_ll += terms.weight * terms.image_ll;
    out.reward_ll += terms.weight * terms.reward_ll;
    out.divergence += terms.weight * terms.divergence;
    out.sources.push_back(terms);
  }
  out.loss = -objective;
  out.total = objective.item<double>();
  return out;
}

}  // namespace dlc::worldmodel
