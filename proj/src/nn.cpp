#include "dlc/nn.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <mutex>

namespace dlc::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::none: return "None";
    case Activation::relu: return "ReLU";
    case Activation::elu: return "ELU";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

torch::Tensor activate(const torch::Tensor& x, Activation a) {
  switch (a) {
    case Activation::none: return x;
    case Activation::relu: return torch::relu(x);
    case Activation::elu: return torch::elu(x);
    case Activation::tanh: return torch::tanh(x);
  }
  return x;
}

std::vector<std::int64_t> sample_dims(const torch::Tensor& t) {
  auto sizes = t.sizes().vec();
  sizes.erase(sizes.begin());
  if (sizes.size() == 3) return {sizes[1], sizes[2], sizes[0]};
  return sizes;
}

MlpImpl::MlpImpl(std::int64_t in, std::int64_t hidden, int hidden_layers, std::int64_t out, Activation hidden_act,
                 Activation out_act)
    : hidden_act_(hidden_act), out_act_(out_act) {
  std::int64_t width = in;
  for (int i = 0; i < hidden_layers; ++i) {
    layers_.push_back(register_module("fc" + std::to_string(i), torch::nn::Linear(width, hidden)));
    width = hidden;
  }
  layers_.push_back(register_module("fc" + std::to_string(hidden_layers), torch::nn::Linear(width, out)));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x, LayerTrace* trace, const std::string& model,
                               const std::vector<std::pair<std::string, std::int64_t>>& input_names) const {
  torch::Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool last = i + 1 == layers_.size();
    const Activation act = last ? out_act_ : hidden_act_;
    torch::Tensor out = activate(layers_[i]->forward(h), act);
    if (trace) {
      LayerRecord r{model, "Dense", {}, {}, act};
      if (i == 0 && !input_names.empty()) {
        for (const auto& [name, dim] : input_names) r.inputs.push_back({name, {dim}});
      } else {
        r.inputs.push_back({"fc" + std::to_string(i), sample_dims(h)});
      }
      r.outputs.push_back({"fc" + std::to_string(i + 1), sample_dims(out)});
      trace->push_back(std::move(r));
    }
    h = out;
  }
  return h;
}

Sampler::Sampler(std::uint64_t seed) : generator_(at::make_generator<at::CPUGeneratorImpl>(seed)) {}

Sampler Sampler::deterministic() { return Sampler(); }

torch::Tensor Sampler::normal(torch::IntArrayRef sizes, const torch::TensorOptions& options) {
  if (!generator_) return torch::zeros(sizes, options);
  // Draw in double so float and double models see the same stream.
  return torch::randn(sizes, *generator_, torch::TensorOptions().dtype(torch::kFloat64)).to(options.dtype());
}

torch::Tensor Sampler::state() const {
  if (!generator_) return {};
  std::lock_guard<std::mutex> lock(generator_->mutex());
  return generator_->get_state();
}

void Sampler::set_state(const torch::Tensor& state) {
  if (!generator_) return;
  std::lock_guard<std::mutex> lock(generator_->mutex());
  generator_->set_state(state);
}

void initialize_parameters(torch::nn::Module& module, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& p : module.named_parameters(true)) {
    auto& t = p.value();
    if (p.key().ends_with("bias")) {
      t.zero_();
      continue;
    }
    std::int64_t fan_in = 1, fan_out = 1;
    if (t.dim() >= 2) {
      const std::int64_t receptive = t.numel() / (t.size(0) * t.size(1));
      fan_in = t.size(1) * receptive;
      fan_out = t.size(0) * receptive;
    } else {
      fan_in = fan_out = t.numel();
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto u = torch::rand(t.sizes(), gen, torch::TensorOptions().dtype(torch::kFloat64));
    t.copy_((u * 2.0 - 1.0) * limit);
  }
}

}  // namespace dlc::nn
