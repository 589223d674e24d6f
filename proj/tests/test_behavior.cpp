#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dlc/behavior.hpp"
#include "support.hpp"

using namespace dlc;
using namespace dlc::behavior;
using dlc::testing::f64;

namespace {

// Literal k-step / lambda mixture, written straight from the definition:
// V^k(tau) = sum_{n=tau}^{h-1} g^{n-tau} r_n + g^{h-tau} v_h, h = min(tau + k, H)
// V_lambda(tau) = (1 - l) sum_{n=1}^{H-1} l^{n-1} V^n(tau) + l^{H-1} V^H(tau)
double k_step(const std::vector<double>& r, const std::vector<double>& v, double g, int tau, int k) {
  const int horizon = static_cast<int>(r.size());
  const int h = std::min(tau + k, horizon);
  double sum = 0.0;
  for (int n = tau; n < h; ++n) sum += std::pow(g, n - tau) * r[n];
  return sum + std::pow(g, h - tau) * v[h];
}

double brute_lambda(const std::vector<double>& r, const std::vector<double>& v, double g, double l, int tau) {
  const int horizon = static_cast<int>(r.size());
  double mix = 0.0;
  for (int n = 1; n <= horizon - 1; ++n) mix += std::pow(l, n - 1) * k_step(r, v, g, tau, n);
  return (1.0 - l) * mix + std::pow(l, horizon - 1) * k_step(r, v, g, tau, horizon);
}

torch::Tensor column(const std::vector<double>& x) {
  return torch::tensor(x, f64());
}

worldmodel::WorldModel tiny_model(int agents, bool observer) {
  worldmodel::WorldModel m(worldmodel::architecture_preset("tiny"), agents, observer);
  m->to(torch::kFloat64);
  nn::initialize_parameters(*m, 3);
  return m;
}

ActionModel tiny_policy() {
  ActionModel p(worldmodel::architecture_preset("tiny"));
  p->to(torch::kFloat64);
  nn::initialize_parameters(*p, 4);
  return p;
}

ValueModel tiny_value() {
  ValueModel v(worldmodel::architecture_preset("tiny"));
  v->to(torch::kFloat64);
  nn::initialize_parameters(*v, 5);
  return v;
}

ImaginedTrajectory constant_trajectory(int horizon, std::int64_t n, double reward, double value) {
  ImaginedTrajectory t;
  t.agents = 2;
  t.rewards = torch::full({horizon, n, 2}, reward, f64());
  t.values = torch::full({horizon + 1, n, 2}, value, f64());
  return t;
}

}  // namespace

TEST(LambdaReturn, LambdaOneIsFullHorizonReturn) {
  const auto out = lambda_return(column({1, 1, 1}), column({0, 0, 0, 0}), 1.0, 1.0);
  EXPECT_DOUBLE_EQ(out[0].item<double>(), 3.0);
}

TEST(LambdaReturn, LambdaZeroIsOneStepReturn) {
  const auto out = lambda_return(column({2}), column({0, 10}), 0.99, 0.0);
  EXPECT_DOUBLE_EQ(out[0].item<double>(), 11.9);
}

TEST(LambdaReturn, MatchesLiteralMixture) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 3.0);
  std::uniform_int_distribution<int> len(1, 15);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = len(rng);
    std::vector<double> r(h), v(h + 1);
    for (auto& x : r) x = n(rng);
    for (auto& x : v) x = n(rng);
    const auto out = lambda_return(column(r), column(v), 0.99, 0.95);
    for (int tau = 0; tau < h; ++tau) {
      const double want = brute_lambda(r, v, 0.99, 0.95, tau);
      EXPECT_NEAR(out[tau].item<double>(), want, 1e-9 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(LambdaReturn, RejectsBadShapesAndRanges) {
  EXPECT_THROW(lambda_return(column({1, 2}), column({1, 2}), 0.9, 0.9), std::invalid_argument);
  EXPECT_THROW(lambda_return(column({1}), column({1, 2}), 1.5, 0.9), std::invalid_argument);
  EXPECT_THROW(lambda_return(torch::zeros({2, 3}, f64()), torch::zeros({3, 4}, f64()), 0.9, 0.9),
               std::invalid_argument);
}

TEST(LambdaReturn, MonotoneInRewardsAndValues) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<double> r(8), v(9);
  for (auto& x : r) x = n(rng);
  for (auto& x : v) x = n(rng);
  const auto base = lambda_return(column(r), column(v), 0.99, 0.95);
  for (int i = 0; i < 8; ++i) {
    auto r2 = r;
    r2[i] += 0.5;
    EXPECT_TRUE((lambda_return(column(r2), column(v), 0.99, 0.95) >= base).all().item<bool>());
  }
  for (int i = 0; i < 9; ++i) {
    auto v2 = v;
    v2[i] += 0.5;
    EXPECT_TRUE((lambda_return(column(r), column(v2), 0.99, 0.95) >= base).all().item<bool>());
  }
}

TEST(ActionModel, ActionsAreThreeDimensionalAndInsideBox) {
  auto p = tiny_policy();
  {
    torch::NoGradGuard g;
    for (auto& w : p->parameters()) w.mul_(50.0);
  }
  nn::Sampler sampler(1);
  const auto f = torch::randn({256, 12}, f64()) * 20.0;
  const auto a = p->forward(f, ActMode::sample, sampler);
  EXPECT_EQ(a.size(1), 3);
  EXPECT_LE(a.abs().max().item<double>(), 1.0);
  const auto noisy = p->act(f, ActMode::sample, 5.0, sampler);
  EXPECT_LE(noisy.abs().max().item<double>(), 1.0);
}

TEST(ActionModel, PinnedSeedReproducesAction) {
  auto p = tiny_policy();
  const auto f = torch::randn({4, 12}, f64());
  nn::Sampler a(9), b(9);
  EXPECT_TRUE(torch::equal(p->act(f, ActMode::sample, 0.3, a), p->act(f, ActMode::sample, 0.3, b)));
  nn::Sampler c(10);
  EXPECT_FALSE(torch::equal(p->act(f, ActMode::sample, 0.3, a), p->act(f, ActMode::sample, 0.3, c)));
}

TEST(ActionModel, ModeIgnoresSampler) {
  auto p = tiny_policy();
  const auto f = torch::randn({4, 12}, f64());
  nn::Sampler a(1), b(2);
  EXPECT_TRUE(torch::equal(p->act(f, ActMode::mode, 0.0, a), p->act(f, ActMode::mode, 0.0, b)));
  EXPECT_TRUE(torch::allclose(p->act(f, ActMode::mode, 0.0, a), torch::tanh(p->distribution(f).mean)));
}

TEST(ActionModel, InitialStddevMatchesOption) {
  auto p = tiny_policy();
  {
    torch::NoGradGuard g;
    for (auto& w : p->parameters()) w.zero_();
  }
  const auto d = p->distribution(torch::zeros({1, 12}, f64()));
  EXPECT_NEAR(d.stddev[0][0].item<double>(), 5.0 + 1e-4, 1e-12);
  EXPECT_EQ(d.mean.abs().max().item<double>(), 0.0);
}

TEST(ValueModel, ZeroOutputLayerGivesZero) {
  auto v = tiny_value();
  {
    torch::NoGradGuard g;
    v->output_layer()->weight.zero_();
    v->output_layer()->bias.zero_();
  }
  EXPECT_EQ(v->forward(torch::randn({5, 12}, f64())).abs().max().item<double>(), 0.0);
}

TEST(ValueModel, MatchesManualMatrixForward) {
  auto v = tiny_value();
  const auto x = torch::randn({3, 12}, f64());
  const auto params = v->named_parameters();
  torch::Tensor h = x;
  for (int i = 0; i < 4; ++i) {
    const auto w = params["net.fc" + std::to_string(i) + ".weight"];
    const auto b = params["net.fc" + std::to_string(i) + ".bias"];
    h = torch::matmul(h, w.t()) + b;
    if (i < 3) h = torch::where(h > 0, h, torch::exp(h) - 1.0);
  }
  EXPECT_TRUE(torch::allclose(v->forward(x), h.squeeze(-1), 1e-12, 1e-12));
}

TEST(Imagination, HorizonOneGivesTwoStates) {
  auto m = tiny_model(2, true);
  auto p = tiny_policy();
  auto v = tiny_value();
  nn::Sampler s(1);
  const auto start = worldmodel::JointLatent::zeros(3, m->architecture(), 2, m->options());
  const auto t = imagine_trajectories(*m, *p, *v, start, 1, s);
  EXPECT_EQ(t.states.size(), 2u);
  EXPECT_EQ(t.rewards.sizes(), (std::vector<std::int64_t>{1, 3, 2}));
  EXPECT_EQ(t.values.sizes(), (std::vector<std::int64_t>{2, 3, 2}));
  EXPECT_EQ(t.actions.sizes(), (std::vector<std::int64_t>{1, 3, 2, 3}));
  EXPECT_THROW(imagine_trajectories(*m, *p, *v, start, 0, s), std::invalid_argument);
}

TEST(Imagination, PinnedSamplerReproducesTrajectory) {
  auto m = tiny_model(2, false);
  auto p = tiny_policy();
  auto v = tiny_value();
  torch::manual_seed(2);
  const auto start = dlc::testing::random_joint(m->architecture(), 2, 4, f64());
  nn::Sampler a(5), b(5);
  const auto ta = imagine_trajectories(*m, *p, *v, start, 6, a);
  const auto tb = imagine_trajectories(*m, *p, *v, start, 6, b);
  EXPECT_TRUE(torch::equal(ta.rewards, tb.rewards));
  EXPECT_TRUE(torch::equal(ta.actions, tb.actions));
}

TEST(Imagination, BothAgentsShareThePolicy) {
  // Identical agent slices and the mode action: the one shared policy must
  // produce identical actions for both agents at every step.
  auto m = tiny_model(2, true);
  auto p = tiny_policy();
  auto v = tiny_value();
  torch::manual_seed(8);
  const auto one = dlc::testing::random_joint(m->architecture(), 1, 4, f64());
  worldmodel::JointLatent start{2, torch::cat({one.deterministic, one.deterministic}, -1),
                                torch::cat({one.stochastic, one.stochastic}, -1), torch::cat({one.mean, one.mean}, -1),
                                torch::cat({one.stddev, one.stddev}, -1)};
  auto s = nn::Sampler::deterministic();
  const auto t = imagine_trajectories(*m, *p, *v, start, 5, s);
  EXPECT_TRUE(torch::equal(t.actions.select(2, 0), t.actions.select(2, 1)));
}

TEST(ActorObjective, ConstantRewardsClosedForm) {
  const int h = 5;
  const double c = 0.7;
  const auto t = constant_trajectory(h, 3, c, c);
  // gamma = lambda = 1: V(tau) = (H - tau) c + c, averaged over tau.
  double want = 0.0;
  for (int tau = 0; tau < h; ++tau) want += (h - tau) * c + c;
  EXPECT_NEAR(actor_objective(t, 1.0, 1.0).item<double>(), -want / h, 1e-12);
}

TEST(ActorObjective, HigherRewardsLowerLoss) {
  torch::manual_seed(4);
  auto t = constant_trajectory(6, 4, 0.0, 0.0);
  t.rewards = torch::randn({6, 4, 2}, f64());
  t.values = torch::randn({7, 4, 2}, f64());
  const double base = actor_objective(t, 0.99, 0.95).item<double>();
  t.rewards = t.rewards + 0.01;
  EXPECT_LT(actor_objective(t, 0.99, 0.95).item<double>(), base);
}

TEST(CriticObjective, SinglePairSquaredError) {
  auto v = tiny_value();
  {
    torch::NoGradGuard g;
    v->output_layer()->weight.zero_();
    v->output_layer()->bias.fill_(3.0);
  }
  auto m = tiny_model(1, false);
  ImaginedTrajectory t;
  t.agents = 1;
  t.states = {worldmodel::JointLatent::zeros(1, m->architecture(), 1, m->options()),
              worldmodel::JointLatent::zeros(1, m->architecture(), 1, m->options())};
  t.rewards = torch::full({1, 1, 1}, 5.0, f64());
  t.values = torch::zeros({2, 1, 1}, f64());
  EXPECT_DOUBLE_EQ(critic_objective(t, *v, 0.0, 0.95).item<double>(), 4.0);
  t.rewards.fill_(3.0);
  EXPECT_DOUBLE_EQ(critic_objective(t, *v, 0.0, 0.95).item<double>(), 0.0);
}

TEST(CriticObjective, TargetsCarryNoGradient) {
  auto m = tiny_model(2, false);
  auto p = tiny_policy();
  auto v = tiny_value();
  nn::Sampler s(3);
  torch::manual_seed(3);
  auto start = dlc::testing::random_joint(m->architecture(), 2, 4, f64());
  start.stochastic.set_requires_grad(true);
  const auto t = imagine_trajectories(*m, *p, *v, start, 4, s);
  critic_objective(t, *v, 0.99, 0.95).backward();
  // Neither the imagined states nor the policy receive critic gradients.
  EXPECT_FALSE(start.stochastic.grad().defined());
  for (const auto& w : p->parameters()) EXPECT_FALSE(w.grad().defined());
}

TEST(BehaviorLearner, NonFiniteGradientsLeaveParametersUntouched) {
  auto m = tiny_model(2, false);
  auto value = tiny_value();
  {
    torch::NoGradGuard g;
    value->output_layer()->weight.fill_(std::numeric_limits<double>::quiet_NaN());
  }
  BehaviorOptions opt;
  opt.horizon = 3;
  BehaviorLearner learner(tiny_policy(), value, opt);
  std::vector<torch::Tensor> before;
  for (const auto& w : learner.policy()->parameters()) before.push_back(w.clone());
  nn::Sampler s(1);
  const auto start = worldmodel::JointLatent::zeros(2, m->architecture(), 2, m->options());
  EXPECT_THROW(learner.update(*m, start, s), std::domain_error);
  const auto after = learner.policy()->parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(torch::equal(before[i], after[i]));
}

TEST(BehaviorLearner, UpdateMovesPolicyAndValueButNotModel) {
  auto m = tiny_model(2, true);
  BehaviorOptions opt;
  opt.horizon = 4;
  BehaviorLearner learner(tiny_policy(), tiny_value(), opt);
  std::vector<torch::Tensor> model_before;
  for (const auto& w : m->parameters()) model_before.push_back(w.clone());
  const auto policy_before = learner.policy()->parameters()[0].clone();
  const auto value_before = learner.value()->parameters()[0].clone();
  nn::Sampler s(1);
  torch::manual_seed(1);
  const auto start = dlc::testing::random_joint(m->architecture(), 2, 8, f64());
  const auto stats = learner.update(*m, start, s);
  EXPECT_TRUE(std::isfinite(stats.actor_loss));
  EXPECT_FALSE(torch::equal(policy_before, learner.policy()->parameters()[0]));
  EXPECT_FALSE(torch::equal(value_before, learner.value()->parameters()[0]));
  const auto after = m->parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_TRUE(torch::equal(model_before[i], after[i]));
    EXPECT_TRUE(after[i].requires_grad());
  }
}

TEST(GradientCheck, ActorAndCriticOnTinyDoubleConfig) {
  auto m = tiny_model(2, true);
  auto p = tiny_policy();
  auto v = tiny_value();
  torch::manual_seed(6);
  const auto start = dlc::testing::random_joint(m->architecture(), 2, 6, f64());
  nn::Sampler sampler(21);
  const auto state = sampler.state();
  FrozenParameters frozen(*m);
  auto actor = [&] {
    sampler.set_state(state);
    return actor_objective(imagine_trajectories(*m, *p, *v, start, 5, sampler), 0.99, 0.95);
  };
  const auto a = dlc::testing::probe_gradients(p->parameters(), actor, 60, 1);
  EXPECT_LE(a.max_relative_error, 1e-5) << "probed " << a.probed;
  // Targets are frozen within an update, so they stay fixed under perturbation.
  sampler.set_state(state);
  const auto traj = imagine_trajectories(*m, *p, *v, start, 5, sampler);
  const auto features = traj.start_features().detach();
  const auto targets = lambda_return(traj.rewards, traj.values, 0.99, 0.95).detach();
  auto critic = [&] { return critic_objective(features, targets, *v); };
  const auto c = dlc::testing::probe_gradients(v->parameters(), critic, 60, 2);
  EXPECT_LE(c.max_relative_error, 1e-5) << "probed " << c.probed;
}

TEST(GradientCheck, RepresentationLossOnTinyDoubleConfig) {
  auto m = tiny_model(2, true);
  const auto batch = dlc::testing::random_batch(m->architecture(), 4, 2, 9);
  nn::Sampler sampler(5);
  const auto state = sampler.state();
  auto loss = [&] {
    sampler.set_state(state);
    return worldmodel::representation_loss(*m, batch, worldmodel::posterior_rollout(*m, batch, sampler), 1.0).loss;
  };
  const auto r = dlc::testing::probe_gradients(m->parameters(), loss, 60, 3);
  EXPECT_LE(r.max_relative_error, 1e-5) << "probed " << r.probed << " worst " << r.worst_analytic << " vs " << r.worst_numeric;
}
