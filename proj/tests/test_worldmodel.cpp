#include <gtest/gtest.h>

#include "dlc/worldmodel.hpp"
#include "support.hpp"

using namespace dlc;
using namespace dlc::worldmodel;
using dlc::testing::f64;

namespace {

WorldModel tiny_model(int agents, bool observer, std::uint64_t seed = 7) {
  WorldModel m(architecture_preset("tiny"), agents, observer);
  m->to(torch::kFloat64);
  nn::initialize_parameters(*m, seed);
  return m;
}

}  // namespace

TEST(Architecture, PaperConvolutionArithmetic) {
  const auto a = architecture_preset("paper");
  EXPECT_EQ(a.encoder_sides(), (std::vector<int>{31, 14, 6, 2}));
  EXPECT_EQ(a.embedding_size(), 1024);
  EXPECT_EQ(a.decoder_sides(), (std::vector<int>{5, 13, 31, 96}));
  EXPECT_EQ(a.feature_size(), 230);
}

TEST(Architecture, ReducedPresetsRoundTripImageSize) {
  for (const char* name : {"desk", "tiny"}) {
    const auto a = architecture_preset(name);
    EXPECT_EQ(a.decoder_sides().back(), a.image_size) << name;
  }
  EXPECT_EQ(architecture_preset("desk").embedding_size(), 256);
  EXPECT_EQ(architecture_preset("tiny").embedding_size(), 72);
  EXPECT_THROW(architecture_preset("huge"), std::invalid_argument);
}

TEST(WorldModel, EncodeRejectsWrongImageSize) {
  auto m = tiny_model(2, true);
  EXPECT_THROW(m->encode(torch::zeros({1, 3, 17, 17}, f64())), std::invalid_argument);
  const auto e = m->encode(torch::zeros({2, 3, 16, 16}, f64()));
  EXPECT_EQ(e.ego.sizes(), (std::vector<std::int64_t>{2, 72}));
  EXPECT_EQ(e.opponent.sizes(), (std::vector<std::int64_t>{2, 72}));
  EXPECT_FALSE(tiny_model(2, false)->encode(torch::zeros({1, 3, 16, 16}, f64())).opponent.defined());
}

TEST(WorldModel, ObserveRejectsEmbeddingOfWrongLength) {
  auto m = tiny_model(2, true);
  const auto s = JointLatent::zeros(1, m->architecture(), 2, m->options());
  auto sampler = nn::Sampler::deterministic();
  EXPECT_THROW(m->observe_step(s, torch::zeros({1, 6}, f64()), torch::zeros({1, 100}, f64()), sampler),
               std::invalid_argument);
}

TEST(WorldModel, StddevNeverBelowFloor) {
  auto m = tiny_model(2, true);
  {
    torch::NoGradGuard g;
    for (auto& p : m->parameters()) p.mul_(40.0);
  }
  torch::manual_seed(3);
  auto sampler = nn::Sampler(11);
  const auto s = dlc::testing::random_joint(m->architecture(), 2, 64, f64());
  const auto actions = torch::rand({64, 6}, f64()) * 2 - 1;
  const auto out = m->observe_step(s, actions, torch::randn({64, 144}, f64()) * 10, sampler);
  EXPECT_GE(out.prior.stddev.min().item<double>(), kMinStddev);
  EXPECT_GE(out.posterior.stddev.min().item<double>(), kMinStddev);
  EXPECT_TRUE(torch::isfinite(out.posterior.stochastic).all().item<bool>());
}

TEST(WorldModel, SymmetrizedTransitionCommutesWithFlip) {
  auto m = tiny_model(2, true);
  torch::manual_seed(5);
  const auto s = dlc::testing::random_joint(m->architecture(), 2, 32, f64());
  const auto actions = torch::rand({32, 6}, f64()) * 2 - 1;
  const auto a = m->symmetrized_transition(s, actions);
  const auto b = m->symmetrized_transition(s.flipped(), flip_agents(actions, 2));
  EXPECT_LE((a.deterministic - flip_agents(b.deterministic, 2)).abs().max().item<double>(), 1e-12);
  EXPECT_LE((a.mean - flip_agents(b.mean, 2)).abs().max().item<double>(), 1e-12);
  EXPECT_LE((a.stddev - flip_agents(b.stddev, 2)).abs().max().item<double>(), 1e-12);
}

TEST(WorldModel, SingleUnsymmetrizedPassDependsOnOrder) {
  // Sanity check that the symmetrization is doing work.
  auto m = tiny_model(2, true);
  torch::manual_seed(5);
  const auto s = dlc::testing::random_joint(m->architecture(), 2, 8, f64());
  const auto actions = torch::rand({8, 6}, f64()) * 2 - 1;
  const auto a = m->transition_pass(s.stochastic, s.deterministic, actions);
  const auto f = s.flipped();
  const auto b = m->transition_pass(f.stochastic, f.deterministic, flip_agents(actions, 2));
  EXPECT_GT((a.mean - flip_agents(b.mean, 2)).abs().max().item<double>(), 1e-6);
}

TEST(WorldModel, SymmetricInputsGiveIdenticalAgentHeads) {
  auto m = tiny_model(2, true);
  torch::manual_seed(9);
  const auto one = dlc::testing::random_joint(m->architecture(), 1, 16, f64());
  JointLatent s{2, torch::cat({one.deterministic, one.deterministic}, -1),
                torch::cat({one.stochastic, one.stochastic}, -1), torch::cat({one.mean, one.mean}, -1),
                torch::cat({one.stddev, one.stddev}, -1)};
  const auto act = torch::rand({16, 3}, f64());
  const auto out = m->symmetrized_transition(s, torch::cat({act, act}, -1));
  const auto d = out.deterministic.chunk(2, -1);
  const auto mu = out.mean.chunk(2, -1);
  const auto sd = out.stddev.chunk(2, -1);
  EXPECT_TRUE(torch::equal(d[0], d[1]));
  EXPECT_TRUE(torch::equal(mu[0], mu[1]));
  EXPECT_TRUE(torch::equal(sd[0], sd[1]));
}

TEST(WorldModel, DeterministicSamplerReturnsMean) {
  auto m = tiny_model(2, false);
  auto sampler = nn::Sampler::deterministic();
  const auto s = JointLatent::zeros(4, m->architecture(), 2, m->options());
  const auto next = m->imagine_step(s, torch::zeros({4, 6}, f64()), sampler);
  EXPECT_TRUE(torch::equal(next.stochastic, next.mean));
}

TEST(WorldModel, PinnedSamplerReproducesRollout) {
  auto m = tiny_model(2, true);
  const auto batch = dlc::testing::random_batch(m->architecture(), 5, 3, 1);
  nn::Sampler a(42), b(42);
  const auto ra = posterior_rollout(*m, batch, a);
  const auto rb = posterior_rollout(*m, batch, b);
  ASSERT_EQ(ra.sources.size(), 3u);
  for (std::size_t c = 0; c < ra.sources.size(); ++c)
    EXPECT_TRUE(torch::equal(ra.sources[c].stochastic, rb.sources[c].stochastic));
}

TEST(GaussianKl, ZeroForIdenticalAndKnownScalar) {
  const auto m = torch::randn({5, 4}, f64());
  const auto s = torch::rand({5, 4}, f64()) + 0.2;
  EXPECT_LE(gaussian_kl(m, s, m, s).abs().max().item<double>(), 1e-15);
  const auto kl = gaussian_kl(torch::zeros({1, 1}, f64()), torch::ones({1, 1}, f64()), torch::ones({1, 1}, f64()),
                              torch::full({1, 1}, 2.0, f64()));
  EXPECT_NEAR(kl.item<double>(), std::log(2.0) + 2.0 / 8.0 - 0.5, 1e-15);
}

TEST(PosteriorRollout, SourcesMatchVariant) {
  EXPECT_EQ(state_sources(*tiny_model(2, true)).size(), 3u);
  const auto joint = state_sources(*tiny_model(2, false));
  ASSERT_EQ(joint.size(), 1u);
  EXPECT_EQ(joint[0].weight, 1.0);
  EXPECT_EQ(state_sources(*tiny_model(2, true))[0].weight, 2.0);
}

TEST(PosteriorRollout, RejectsWindowsCrossingEpisodes) {
  auto m = tiny_model(2, true);
  auto batch = dlc::testing::random_batch(m->architecture(), 4, 2, 2);
  batch.is_first[2][1] = true;
  auto sampler = nn::Sampler::deterministic();
  EXPECT_THROW(posterior_rollout(*m, batch, sampler), std::invalid_argument);
}

TEST(PosteriorRollout, IndividualModelFiltersAgentsIndependently) {
  auto m = tiny_model(1, false);
  auto batch = dlc::testing::random_batch(m->architecture(), 4, 2, 3);
  auto sampler = nn::Sampler::deterministic();
  const auto both = posterior_rollout(*m, batch, sampler).sources.at(0);
  ASSERT_EQ(both.stochastic.size(1), 4);

  // Changing agent 2's stream must leave agent 1's states untouched.
  auto altered = batch;
  altered.observations[1] = torch::rand_like(batch.observations[1]);
  const auto again = posterior_rollout(*m, altered, sampler).sources.at(0);
  EXPECT_TRUE(torch::equal(both.stochastic.slice(1, 0, 2), again.stochastic.slice(1, 0, 2)));
  EXPECT_FALSE(torch::equal(both.stochastic.slice(1, 2, 4), again.stochastic.slice(1, 2, 4)));
}

TEST(PosteriorRollout, PredictedSourceUsesOpponentHeadOfOtherAgent) {
  auto m = tiny_model(2, true);
  auto batch = dlc::testing::random_batch(m->architecture(), 3, 2, 4);
  auto sampler = nn::Sampler::deterministic();
  const auto r = posterior_rollout(*m, batch, sampler);
  // (s1, ~s2) never looks at agent 2's own observation.
  auto altered = batch;
  altered.observations[1] = torch::rand_like(batch.observations[1]);
  const auto r2 = posterior_rollout(*m, altered, sampler);
  EXPECT_TRUE(torch::equal(r.sources[1].stochastic, r2.sources[1].stochastic));
  EXPECT_FALSE(torch::equal(r.sources[0].stochastic, r2.sources[0].stochastic));
  EXPECT_FALSE(torch::equal(r.sources[2].stochastic, r2.sources[2].stochastic));
}

TEST(RepresentationLoss, NamesNonFiniteTerm) {
  auto m = tiny_model(2, false);
  auto batch = dlc::testing::random_batch(m->architecture(), 3, 2, 5);
  auto sampler = nn::Sampler::deterministic();
  const auto rollout = posterior_rollout(*m, batch, sampler);
  batch.rewards[0][1][0] = std::numeric_limits<double>::infinity();
  try {
    representation_loss(*m, batch, rollout, 1.0);
    FAIL() << "expected a domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("J_R"), std::string::npos);
  }
}

TEST(RepresentationLoss, BreakdownSumsToTotal) {
  auto m = tiny_model(2, true);
  auto batch = dlc::testing::random_batch(m->architecture(), 4, 3, 6);
  nn::Sampler sampler(1);
  const auto loss = representation_loss(*m, batch, posterior_rollout(*m, batch, sampler), 1.0);
  double total = 0.0;
  for (const auto& s : loss.sources) total += s.weight * s.objective();
  EXPECT_NEAR(total, loss.total, 1e-9 * std::abs(total));
  EXPECT_NEAR(loss.loss.item<double>(), -loss.total, 1e-12 * std::abs(total));
  EXPECT_NEAR(loss.image_ll + loss.reward_ll + loss.divergence, loss.total, 1e-9 * std::abs(total));
  EXPECT_LE(loss.divergence, 0.0);
}
