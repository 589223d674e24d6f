#include <gtest/gtest.h>

#include "dlc/race.hpp"

using namespace dlc;
using namespace dlc::race;

namespace {

EnvConfig quick() {
  EnvConfig c;
  c.image_size = 32;
  c.max_steps = 50;
  return c;
}

// Reads only its own observation, like a decentralised learned driver.
class OwnEyesDriver final : public Driver {
 public:
  void begin(int, std::uint64_t) override {}
  PolicyAction act(const StepView& v) override {
    (void)v.observation(v.self());
    return {0.0f, 0.5f, 0.0f};
  }
  std::string name() const override { return "own-eyes"; }
};

// Peeks at the other car's observation and action.
class PeekingDriver final : public Driver {
 public:
  void begin(int, std::uint64_t) override {}
  PolicyAction act(const StepView& v) override {
    (void)v.observation(1 - v.self());
    if (v.step() > 0) (void)v.last_action(1 - v.self());
    return {};
  }
  std::string name() const override { return "peek"; }
};

}  // namespace

TEST(AccessLog, OwnObservationIsNotForeign) {
  AccessLog log;
  OwnEyesDriver a, b;
  run_race(quick(), 1, a, &b, {.log = &log});
  EXPECT_EQ(log.count(0, Stream::observation, 0), 50u);
  EXPECT_TRUE(log.foreign_reads(0).empty());
  EXPECT_TRUE(log.foreign_reads(1).empty());
}

TEST(AccessLog, PeeksAreAttributedToTheReader) {
  AccessLog log;
  OwnEyesDriver a;
  PeekingDriver b;
  run_race(quick(), 1, a, &b, {.log = &log});
  EXPECT_TRUE(log.foreign_reads(0).empty());
  EXPECT_EQ(log.count(1, Stream::observation, 0), 50u);
  EXPECT_EQ(log.count(1, Stream::action, 0), 49u);
}

TEST(AccessLog, ScriptedDriverReadsTheSimulatorState) {
  AccessLog log;
  auto a = ScriptedDriver::fast();
  RandomDriver b;
  run_race(quick(), 1, *a, &b, {.log = &log});
  EXPECT_EQ(log.count(0, Stream::state, -1), 50u);
  EXPECT_TRUE(log.foreign_reads(1).empty());
}

TEST(Race, RecordedStreamsAreAligned) {
  RandomDriver a, b;
  const auto r = run_race(quick(), 5, a, &b, {.record = true});
  ASSERT_TRUE(r.episode);
  EXPECT_EQ(r.episode->length(), 50);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(r.episode->observations[i].size(), 50u);
    EXPECT_EQ(r.episode->actions[i].size(), 50u);
    EXPECT_NEAR(r.episode->total_reward(i), r.scores[i], 1e-9);
  }
}

TEST(Race, TwoCarRaceNeedsTwoDrivers) {
  RandomDriver a;
  EXPECT_THROW(run_race(quick(), 1, a, nullptr), std::invalid_argument);
  auto solo = quick();
  solo.solo = true;
  const auto r = run_race(solo, 1, a, nullptr);
  EXPECT_EQ(r.tiles[1], 0);
}

TEST(Race, RandomDriverIsSeededPerRace) {
  RandomDriver a, b;
  const auto x = run_race(quick(), 3, a, &b, {.record = true});
  const auto y = run_race(quick(), 3, a, &b, {.record = true});
  const auto z = run_race(quick(), 4, a, &b, {.record = true});
  EXPECT_EQ(x.episode->actions, y.episode->actions);
  EXPECT_NE(x.episode->actions, z.episode->actions);
}

TEST(Race, ActionsMapToEnvironmentBox) {
  const auto e = to_env_action({-2.0f, -1.0f, 1.0f});
  const auto c = e.clamped();
  EXPECT_EQ(c.steer, -1.0);
  EXPECT_EQ(c.gas, 0.0);
  EXPECT_EQ(c.brake, 1.0);
}

TEST(Race, FastScriptBeatsSlowScript) {
  EnvConfig c;
  int wins = 0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    auto f = ScriptedDriver::fast();
    auto w = ScriptedDriver::slow();
    const auto r = run_race(c, s, *f, w.get());
    wins += r.scores[0] > r.scores[1];
  }
  EXPECT_GE(wins, 5);
}
