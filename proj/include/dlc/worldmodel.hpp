#pragma once

// Joint recurrent state-space world model for two agents.
//
// Joint tensors are laid out agent-major: for n agents with per-agent width d
// the joint vector is [agent_1 (d) | ... | agent_n (d)]. This holds for the
// deterministic state, the stochastic state, the Gaussian parameters, the
// actions and the embeddings fed to the posterior.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dlc/nn.hpp"

namespace dlc::worldmodel {

inline constexpr double kMinStddev = 0.1;
inline constexpr int kActionDim = 3;

struct ConvLayer {
  int channels;
  int kernel;
  int stride;
};

struct DeconvLayer {
  int channels;
  int kernel;
  int stride;
  int output_padding;
};

/// Per-agent network dimensions for one named preset.
struct Architecture {
  std::string name;
  int image_size = 96;
  std::vector<ConvLayer> encoder;
  std::array<int, 3> decoder_seed{1, 1, 1024};  // (H, W, C) produced by the decoder's dense layer
  std::vector<DeconvLayer> decoder;
  int deterministic = 200;
  int stochastic = 30;
  int transition_hidden = 300;  // joint width = agents * transition_hidden
  int head_hidden = 400;
  int reward_layers = 2;
  int value_layers = 3;
  int action_layers = 4;
  nn::Activation decoder_output = nn::Activation::relu;
  nn::Activation scalar_output = nn::Activation::elu;
  nn::Activation action_output = nn::Activation::elu;

  int feature_size() const { return deterministic + stochastic; }
  /// Flattened length of one encoder head, from convolution arithmetic.
  int embedding_size() const;
  /// Spatial side after each encoder layer.
  std::vector<int> encoder_sides() const;
  std::vector<int> decoder_sides() const;
};

/// "paper" (96x96), "desk" (64x64), "tiny" (16x16).
Architecture architecture_preset(const std::string& name);

/// One agent's slice of a joint state. Tensors are [B, width].
struct LatentState {
  torch::Tensor deterministic;
  torch::Tensor stochastic;
  torch::Tensor mean;
  torch::Tensor stddev;

  torch::Tensor features() const { return torch::cat({deterministic, stochastic}, -1); }
};

struct GaussianParams {
  torch::Tensor mean;
  torch::Tensor stddev;
};

struct JointLatent {
  int agents = 2;
  torch::Tensor deterministic;  // [B, agents * d]
  torch::Tensor stochastic;     // [B, agents * s]
  torch::Tensor mean;
  torch::Tensor stddev;

  static JointLatent zeros(std::int64_t batch, const Architecture& arch, int agents, const torch::TensorOptions& opts);
  LatentState agent(int i) const;
  /// Agent order reversed; identity for a single agent.
  JointLatent flipped() const;
  JointLatent detached() const;
  GaussianParams params() const { return {mean, stddev}; }
  std::int64_t batch() const { return deterministic.size(0); }
};

/// Reverses the agent blocks of a joint [..., agents * width] tensor.
torch::Tensor flip_agents(const torch::Tensor& joint, int agents);
/// Concatenates per-agent [B, w] tensors into the joint layout.
torch::Tensor join_agents(const std::vector<torch::Tensor>& parts);

struct Embedding {
  torch::Tensor ego;       // [B, E]
  torch::Tensor opponent;  // [B, E]; undefined without the observer head
};

/// One pass of the learned prior transition for a fixed agent order.
struct TransitionOutput {
  torch::Tensor deterministic;
  torch::Tensor mean;
  torch::Tensor stddev;
};

class WorldModelImpl : public torch::nn::Module {
 public:
  WorldModelImpl(Architecture arch, int agents, bool observer);

  const Architecture& architecture() const { return arch_; }
  int agents() const { return agents_; }
  bool observer() const { return observer_; }
  torch::TensorOptions options() const;

  /// images: [B, 3, H, W] intensities in [0, 1].
  Embedding encode(const torch::Tensor& images) const;

  TransitionOutput transition_pass(const torch::Tensor& prev_stochastic, const torch::Tensor& prev_deterministic,
                                   const torch::Tensor& actions) const;
  GaussianParams posterior_pass(const torch::Tensor& deterministic, const torch::Tensor& embedding) const;

  /// Order-independent prior: pass over (1, 2) and over (2, 1), un-flip, average.
  TransitionOutput symmetrized_transition(const JointLatent& prev, const torch::Tensor& actions) const;
  GaussianParams symmetrized_posterior(const torch::Tensor& deterministic, const torch::Tensor& embedding) const;

  /// Prior step; the returned state carries the sampled stochastic part.
  JointLatent imagine_step(const JointLatent& prev, const torch::Tensor& actions, nn::Sampler& sampler) const;

  struct ObserveResult {
    JointLatent posterior;
    GaussianParams prior;
  };
  /// Posterior step given the joint embedding [B, agents * E].
  ObserveResult observe_step(const JointLatent& prev, const torch::Tensor& actions, const torch::Tensor& embedding,
                             nn::Sampler& sampler) const;

  /// Image mean [B, 3, H, W] for per-agent features [B, d + s].
  torch::Tensor decode(const torch::Tensor& features) const;
  torch::Tensor decode(const LatentState& state) const { return decode(state.features()); }
  torch::Tensor predict_reward(const torch::Tensor& features) const;
  torch::Tensor predict_reward(const LatentState& state) const { return predict_reward(state.features()); }

  void set_trace(nn::LayerTrace* trace) const { trace_ = trace; }

 private:
  torch::Tensor encode_head(std::vector<torch::nn::Conv2d>& convs, const torch::Tensor& images,
                            const std::string& name) const;
  JointLatent sample(const torch::Tensor& deterministic, const GaussianParams& params, nn::Sampler& sampler) const;

  Architecture arch_;
  int agents_;
  bool observer_;

  // Submodules are mutable so that inference can be const.
  mutable std::vector<torch::nn::Conv2d> ego_convs_;
  mutable std::vector<torch::nn::Conv2d> opponent_convs_;
  mutable torch::nn::Linear img_in_{nullptr};
  mutable torch::nn::GRUCell cell_{nullptr};
  mutable torch::nn::Linear img_hidden_{nullptr};
  mutable torch::nn::Linear img_out_{nullptr};
  mutable torch::nn::Linear obs_hidden_{nullptr};
  mutable torch::nn::Linear obs_out_{nullptr};
  mutable torch::nn::Linear decoder_in_{nullptr};
  mutable std::vector<torch::nn::ConvTranspose2d> deconvs_;
  mutable nn::Mlp reward_{nullptr};

  mutable nn::LayerTrace* trace_ = nullptr;
};
TORCH_MODULE(WorldModel);

/// Aligned training windows. Index t pairs observation o_t with the action
/// and reward that led into it (zeros at an episode start).
struct SequenceBatch {
  std::array<torch::Tensor, 2> observations;  // [L, B, 3, H, W] in [0, 1]
  std::array<torch::Tensor, 2> prev_actions;  // [L, B, 3]
  std::array<torch::Tensor, 2> rewards;       // [L, B]
  torch::Tensor is_first;                     // [L, B] bool

  std::int64_t length() const { return observations[0].size(0); }
  std::int64_t batch() const { return observations[0].size(1); }
  SequenceBatch to(const torch::TensorOptions& opts) const;
};

/// Which embedding feeds each agent slot: the agent's own ego head, or the
/// opponent head applied to the other agent's observation.
struct StateSource {
  std::string name;
  double weight = 1.0;
  std::array<bool, 2> predicted{false, false};
};

/// Stacked posterior filtering results for one state source, all [L, B', ...].
struct SourceRollout {
  StateSource source;
  torch::Tensor deterministic;
  torch::Tensor stochastic;
  torch::Tensor post_mean;
  torch::Tensor post_stddev;
  torch::Tensor prior_mean;
  torch::Tensor prior_stddev;

  /// Posterior joint state at every (t, b), flattened to [L * B', ...].
  JointLatent flattened(int agents) const;
};

struct PosteriorRollout {
  std::vector<SourceRollout> sources;
};

/// Sources optimised for a model: (s1, s2) weighted 2, (s1, ~s2) and (~s1, s2)
/// weighted 1 with the observer; only (s1, s2) without it.
std::vector<StateSource> state_sources(const WorldModelImpl& model);

/// Filters every window from a zero state. With a single-agent model, the two
/// agents' streams are filtered independently as 2B sequences.
PosteriorRollout posterior_rollout(const WorldModelImpl& model, const SequenceBatch& batch, nn::Sampler& sampler);

struct SourceTerms {
  std::string name;
  double weight = 1.0;
  double image_ll = 0.0;    // J_O
  double reward_ll = 0.0;   // J_R
  double divergence = 0.0;  // J_D = -beta KL
  double objective() const { return image_ll + reward_ll + divergence; }
};

struct ModelLossBreakdown {
  torch::Tensor loss;  // -(sum_c w_c J_M,c), differentiable
  double image_ll = 0.0;
  double reward_ll = 0.0;
  double divergence = 0.0;
  double total = 0.0;  // sum_c w_c J_M,c
  std::vector<SourceTerms> sources;
};

/// Unit-variance Gaussian log-likelihoods without the normalising constant;
/// expectation taken as the mean over (t, b), sums over pixels, dims and agents.
ModelLossBreakdown representation_loss(const WorldModelImpl& model, const SequenceBatch& batch,
                                       const PosteriorRollout& rollout, double beta);

/// KL(N(mq, sq) || N(mp, sp)) summed over the last dimension.
torch::Tensor gaussian_kl(const torch::Tensor& mean_q, const torch::Tensor& std_q, const torch::Tensor& mean_p,
                          const torch::Tensor& std_p);

}  // namespace dlc::worldmodel
