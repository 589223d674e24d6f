#pragma once

// Small libtorch building blocks shared by the world model and the
// actor/critic, plus the layer trace used to check the architecture tables.

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dlc::nn {

enum class Activation { none, relu, elu, tanh };

std::string to_string(Activation a);
torch::Tensor activate(const torch::Tensor& x, Activation a);

/// One executed layer: what went in, what came out (channels-last dims for
/// images), and the activation actually applied.
struct LayerRecord {
  std::string model;
  std::string layer;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> inputs;
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> outputs;
  Activation activation = Activation::none;
  int kernel = 0;
  int stride = 0;
  int padding = 0;
};

using LayerTrace = std::vector<LayerRecord>;

/// Per-sample dims of a batched tensor; [B, C, H, W] is reported as (H, W, C).
std::vector<std::int64_t> sample_dims(const torch::Tensor& t);

/// Dense stack: `hidden_layers` layers of width `hidden` with `hidden_act`,
/// then a linear map to `out` followed by `out_act`.
class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(std::int64_t in, std::int64_t hidden, int hidden_layers, std::int64_t out, Activation hidden_act,
          Activation out_act);

  torch::Tensor forward(const torch::Tensor& x, LayerTrace* trace = nullptr, const std::string& model = {},
                        const std::vector<std::pair<std::string, std::int64_t>>& input_names = {}) const;

  const torch::nn::Linear& output_layer() const { return layers_.back(); }

 private:
  mutable std::vector<torch::nn::Linear> layers_;
  Activation hidden_act_;
  Activation out_act_;
};
TORCH_MODULE(Mlp);

/// Reparameterised standard-normal source. A deterministic sampler returns
/// zeros so every draw collapses to the distribution mean.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed);
  static Sampler deterministic();

  torch::Tensor normal(torch::IntArrayRef sizes, const torch::TensorOptions& options);
  bool is_deterministic() const { return !generator_.has_value(); }

  torch::Tensor state() const;
  void set_state(const torch::Tensor& state);

 private:
  Sampler() = default;
  mutable std::optional<at::Generator> generator_;
};

/// Seeded Glorot-uniform initialisation of every weight, zero biases.
void initialize_parameters(torch::nn::Module& module, std::uint64_t seed);

}  // namespace dlc::nn
