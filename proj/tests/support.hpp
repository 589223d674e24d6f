#pragma once

// Helpers shared by the test binaries: random tiny batches and a central
// finite-difference probe that is independent of autograd.

#include <torch/torch.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dlc/worldmodel.hpp"

namespace dlc::testing {

inline torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

inline worldmodel::SequenceBatch random_batch(const worldmodel::Architecture& arch, std::int64_t length,
                                              std::int64_t batch, std::uint64_t seed) {
  torch::manual_seed(seed);
  worldmodel::SequenceBatch b;
  const int s = arch.image_size;
  for (int i = 0; i < 2; ++i) {
    b.observations[i] = torch::rand({length, batch, 3, s, s}, f64());
    b.prev_actions[i] = torch::rand({length, batch, 3}, f64()) * 2.0 - 1.0;
    b.rewards[i] = torch::randn({length, batch}, f64());
  }
  b.is_first = torch::zeros({length, batch}, torch::kBool);
  b.is_first[0].fill_(true);
  for (int i = 0; i < 2; ++i) {
    b.prev_actions[i][0].zero_();
    b.rewards[i][0].zero_();
  }
  return b;
}

inline worldmodel::JointLatent random_joint(const worldmodel::Architecture& arch, int agents, std::int64_t batch,
                                            const torch::TensorOptions& opts) {
  worldmodel::JointLatent s;
  s.agents = agents;
  s.deterministic = torch::randn({batch, agents * arch.deterministic}, opts);
  s.stochastic = torch::randn({batch, agents * arch.stochastic}, opts);
  s.mean = s.stochastic.clone();
  s.stddev = torch::rand({batch, agents * arch.stochastic}, opts) + 0.1;
  return s;
}

struct GradientProbe {
  double max_relative_error = 0.0;
  int probed = 0;
  int skipped_kinks = 0;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares autograd gradients with central differences on `count` randomly
/// chosen scalar parameters. `loss` must be deterministic in the parameters.
/// Relative error is |g - fd| / max(|g|, |fd|, floor).
///
/// With `kink_tolerance` > 0, a probe whose one-sided slopes differ by more
/// than kink_tolerance * max(|fd|, floor) straddles a ReLU kink, where central
/// differences are meaningless; it is replaced by another parameter.
inline GradientProbe probe_gradients(const std::vector<torch::Tensor>& params, const std::function<torch::Tensor()>& loss,
                                     int count, std::uint64_t seed, double step = 1e-4, double floor = 1e-6,
                                     double kink_tolerance = 0.0) {
  for (const auto& p : params)
    if (p.grad().defined()) p.mutable_grad().zero_();
  loss().backward();
  std::vector<std::pair<std::size_t, std::int64_t>> slots;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::int64_t j = 0; j < params[i].numel(); ++j) slots.emplace_back(i, j);
  std::mt19937_64 rng(seed);
  std::shuffle(slots.begin(), slots.end(), rng);

  GradientProbe out;
  torch::NoGradGuard no_grad;
  const double centre = kink_tolerance > 0.0 ? loss().item<double>() : 0.0;
  for (const auto& [i, j] : slots) {
    if (out.probed >= count) break;
    auto flat = params[i].view({-1});
    const auto grad = params[i].grad().view({-1});
    const double analytic = grad[j].item<double>();
    const double original = flat[j].item<double>();
    flat[j] = original + step;
    const double up = loss().item<double>();
    flat[j] = original - step;
    const double down = loss().item<double>();
    flat[j] = original;
    const double numeric = (up - down) / (2.0 * step);
    if (kink_tolerance > 0.0) {
      const double forward = (up - centre) / step, backward = (centre - down) / step;
      if (std::abs(forward - backward) > kink_tolerance * std::max(std::abs(numeric), floor)) {
        ++out.skipped_kinks;
        continue;
      }
    }
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    if (err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst_index = out.probed;
      out.worst_analytic = analytic;
      out.worst_numeric = numeric;
    }
    ++out.probed;
  }
  return out;
}

}  // namespace dlc::testing
