#include <gtest/gtest.h>

#include <algorithm>

#include "dlc/config.hpp"

using namespace dlc;

namespace {

bool mentions(const ConfigError& e, const std::string& needle) {
  return std::any_of(e.problems().begin(), e.problems().end(),
                     [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

}  // namespace

TEST(Config, PaperDefaults) {
  const auto c = parse_config("");
  EXPECT_EQ(c.preset, "paper");
  EXPECT_EQ(c.env.image_size, 96);
  EXPECT_EQ(c.horizon, 15);
  EXPECT_DOUBLE_EQ(c.gamma, 0.99);
  EXPECT_DOUBLE_EQ(c.lambda, 0.95);
  EXPECT_DOUBLE_EQ(c.model_lr, 6e-4);
  EXPECT_DOUBLE_EQ(c.actor_lr, 8e-5);
  EXPECT_DOUBLE_EQ(c.grad_clip, 100.0);
  EXPECT_EQ(c.batch_size, 50);
  EXPECT_EQ(c.sequence_length, 50);
}

TEST(Config, DeskPreset) {
  const auto c = parse_config("preset = desk\nvariant = individual\n");
  EXPECT_EQ(c.env.image_size, 64);
  EXPECT_EQ(c.env.max_steps, 300);
  EXPECT_EQ(c.episodes, 20);
  EXPECT_EQ(c.variant, Variant::individual);
}

TEST(Config, RoundTripsThroughSerialization) {
  auto c = parse_config("preset = tiny\nvariant = joint\nseed = 99\ngamma = 0.9\nenv.backward_penalty = true\n");
  const auto again = parse_config(serialize_config(c));
  EXPECT_EQ(serialize_config(again), serialize_config(c));
  EXPECT_EQ(config_hash(again), config_hash(c));
  EXPECT_EQ(again.seed, 99u);
  EXPECT_TRUE(again.env.backward_penalty);
}

TEST(Config, KeyOrderDoesNotMatter) {
  const auto a = parse_config("preset = desk\nseed = 4\nhorizon = 10\n");
  const auto b = parse_config("horizon = 10\nseed = 4\npreset = desk\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(Config, HashChangesWithAnyField) {
  auto a = parse_config("preset = desk\n");
  auto b = a;
  b.lambda = 0.9;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ReportsEveryProblemAtOnce) {
  try {
    parse_config("preset = tiny\nbatch_size = 0\ngamma = 2\nbogus_key = 1\nhorizon = abc\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "bogus_key"));
    EXPECT_TRUE(mentions(e, "horizon"));
    EXPECT_GE(e.problems().size(), 2u);
  }
  try {
    auto c = parse_config("preset = tiny\n");
    c.batch_size = 0;
    c.gamma = 2;
    validate(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(mentions(e, "batch_size"));
    EXPECT_TRUE(mentions(e, "gamma"));
  }
}

TEST(Config, UnknownPresetAndVariant) {
  EXPECT_THROW(parse_config("preset = huge\n"), ConfigError);
  EXPECT_THROW(parse_config("variant = centralised\n"), ConfigError);
  EXPECT_THROW(parse_variant("x"), std::invalid_argument);
}

TEST(Config, OverridesApplyOnTop) {
  auto c = parse_config("preset = desk\n");
  apply_overrides(c, {"episodes=3", "env.max_steps=100", "variant=joint"});
  EXPECT_EQ(c.episodes, 3);
  EXPECT_EQ(c.env.max_steps, 100);
  EXPECT_EQ(c.variant, Variant::joint);
  EXPECT_THROW(apply_overrides(c, {"episodes"}), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"nope=1"}), ConfigError);
}

TEST(Config, ImageSizeTiedToPreset) {
  EXPECT_THROW(parse_config("preset = desk\nenv.image_size = 96\n"), ConfigError);
}

TEST(Config, EnvHashIgnoresTrainingKeys) {
  auto a = parse_config("preset = desk\n");
  auto b = a;
  b.episodes = 7;
  b.seed = 123;
  EXPECT_EQ(env_config_hash(a.env), env_config_hash(b.env));
  b.env.num_tiles = 80;
  EXPECT_NE(env_config_hash(a.env), env_config_hash(b.env));
}
