#include <gtest/gtest.h>

#include <filesystem>

#include "dlc/eval.hpp"

using namespace dlc;
using namespace dlc::eval;
namespace fs = std::filesystem;

namespace {

VariantConfig tiny(Variant v = Variant::joint_observer) {
  auto c = parse_config("preset = tiny\n");
  c.variant = v;
  c.seed = 5;
  return c;
}

race::EpisodeRecord recorded(const EnvConfig& env, std::uint64_t seed) {
  auto a = race::ScriptedDriver::fast();
  race::RandomDriver b;
  return *race::run_race(env, seed, *a, &b, {.record = true}).episode;
}

Contestant fake_learned(const std::string& name, const EnvConfig& env) {
  auto c = builtin_contestant("random");
  c.name = name;
  c.env = env;
  return c;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dlc-eval-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Binomial, WilsonInterval) {
  const auto [lo, hi] = binomial_interval(10, 20);
  EXPECT_NEAR(lo, 0.2993, 1e-4);
  EXPECT_NEAR(hi, 0.7007, 1e-4);
  const auto [lo0, hi0] = binomial_interval(0, 10);
  EXPECT_EQ(lo0, 0.0);
  EXPECT_NEAR(hi0, 0.2775, 1e-4);
}

TEST(Tournament, AccountingAndReproducibility) {
  EnvConfig env;
  env.max_steps = 200;
  const auto a = builtin_contestant("scripted:fast"), b = builtin_contestant("random");
  const auto p = play_pairing(a, b, 8, 99, env);
  EXPECT_EQ(p.wins_a + p.wins_b + p.draws, p.races);
  ASSERT_EQ(p.outcomes.size(), 8u);
  for (const auto& o : p.outcomes) {
    // Each recorded race replays exactly from its seed.
    auto da = a.make_driver(), db = b.make_driver();
    auto& first = o.swapped ? *db : *da;
    auto& second = o.swapped ? *da : *db;
    const auto r = race::run_race(env, o.seed, first, &second);
    EXPECT_EQ(r.scores[o.swapped ? 1 : 0], o.score_a);
    EXPECT_EQ(r.scores[o.swapped ? 0 : 1], o.score_b);
  }
  const auto again = play_pairing(a, b, 8, 99, env);
  EXPECT_EQ(again.wins_a, p.wins_a);
  EXPECT_EQ(again.mean_score_a, p.mean_score_a);
}

TEST(Tournament, StartOrderIsRandomised) {
  EnvConfig env;
  env.max_steps = 5;
  const auto p = play_pairing(builtin_contestant("random"), builtin_contestant("random"), 40, 1, env);
  int swapped = 0;
  for (const auto& o : p.outcomes) swapped += o.swapped;
  EXPECT_GT(swapped, 5);
  EXPECT_LT(swapped, 35);
}

TEST(Tournament, IdenticalScoresAreDraws) {
  EnvConfig env;
  env.max_steps = 3;
  // Two idle scripted-free drivers: nobody moves off the grid tile, equal scores.
  struct Idle final : race::Driver {
    void begin(int, std::uint64_t) override {}
    race::PolicyAction act(const race::StepView&) override { return {}; }
    std::string name() const override { return "idle"; }
  };
  Contestant idle{"idle", [] { return std::make_unique<Idle>(); }, std::nullopt, nullptr};
  const auto p = play_pairing(idle, idle, 4, 2, env);
  EXPECT_EQ(p.draws, 4);
  EXPECT_DOUBLE_EQ(p.win_ratio_a(), 0.5);
}

TEST(Tournament, RoundRobinCoversEveryPairing) {
  EnvConfig env;
  env.max_steps = 20;
  const std::vector<Contestant> cs{builtin_contestant("scripted:fast"), builtin_contestant("scripted:slow"),
                                   builtin_contestant("random")};
  const auto t = round_robin(cs, 3, 7, env);
  ASSERT_EQ(t.pairings.size(), 3u);
  int races = 0;
  for (const auto& p : t.pairings) races += p.races;
  EXPECT_EQ(races, 9);
  EXPECT_NE(to_json(t).find("\"race_records\""), std::string::npos);
  EXPECT_NE(to_table(t).find("scripted:slow"), std::string::npos);
  EXPECT_THROW(round_robin({cs[0]}, 3, 7, env), EvalError);
}

TEST(Tournament, IncompatibleEnvironmentsAreAnError) {
  EnvConfig a, b;
  b.num_tiles = 80;
  EXPECT_THROW(common_env({fake_learned("x", a), fake_learned("y", b)}, EnvConfig{}), EvalError);
  EXPECT_EQ(common_env({fake_learned("x", b), builtin_contestant("random")}, EnvConfig{}).num_tiles, 80);
  EXPECT_THROW(builtin_contestant("scripted:medium"), EvalError);
}

TEST(Solo, ScriptedBeatsRandomAndRandomSitsNearThePenaltyFloor) {
  EnvConfig env;
  env.max_steps = 300;
  const auto random = single_agent_eval(builtin_contestant("random"), 3, 4, env);
  const auto scripted = single_agent_eval(builtin_contestant("scripted:fast"), 3, 4, env);
  EXPECT_GT(scripted.mean(), random.mean());
  for (std::size_t k = 0; k < random.scores.size(); ++k)
    EXPECT_NEAR(random.scores[k], -0.1 * 300 + 10.0 * random.tiles[k], 1e-9);
}

TEST(Prediction, OpenLoopEmitsContextPlusHorizonFramesForBothViews) {
  const auto agent = make_agent(tiny());
  const auto ep = recorded(agent.config.env, 3);
  race::AccessLog log;
  const auto r = open_loop_prediction(agent, ep, 10, 5, 25, &log);
  EXPECT_EQ(r.frames(), 30);
  EXPECT_EQ(r.opponent.size(), 30u);
  EXPECT_EQ(r.ego_truth.size(), 30u);
  for (const auto& f : r.ego) {
    EXPECT_EQ(f.sizes(), (std::vector<std::int64_t>{3, 16, 16}));
    EXPECT_GE(f.min().item<float>(), 0.0f);
    EXPECT_LE(f.max().item<float>(), 1.0f);
  }
  for (const auto& rec : log.records()) {
    if (rec.stream == race::Stream::observation) {
      EXPECT_EQ(rec.owner, 0);  // observer filtering reads agent 1 only
      EXPECT_LT(rec.step, 15);
    }
  }
  EXPECT_EQ(log.count(0, race::Stream::observation, 0), 5u);
}

TEST(Prediction, ZeroHorizonEqualsClosedLoop) {
  const auto agent = make_agent(tiny());
  const auto ep = recorded(agent.config.env, 4);
  const auto open = open_loop_prediction(agent, ep, 0, 5, 0);
  const auto closed = closed_loop_prediction(agent, ep, 4);
  ASSERT_EQ(open.frames(), closed.frames());
  for (int k = 0; k < open.frames(); ++k) {
    EXPECT_TRUE(torch::equal(open.ego[k], closed.ego[k]));
    EXPECT_TRUE(torch::equal(open.opponent[k], closed.opponent[k]));
  }
}

TEST(Prediction, PureGivenInputs) {
  const auto agent = make_agent(tiny());
  const auto ep = recorded(agent.config.env, 5);
  const auto a = open_loop_prediction(agent, ep, 2, 5, 10), b = open_loop_prediction(agent, ep, 2, 5, 10);
  for (int k = 0; k < a.frames(); ++k) EXPECT_TRUE(torch::equal(a.opponent[k], b.opponent[k]));
}

TEST(Prediction, FutureObservationsDoNotAffectThePrediction) {
  const auto agent = make_agent(tiny());
  const auto ep = recorded(agent.config.env, 6);
  auto altered = ep;
  for (int t = 7; t < altered.length(); ++t)
    for (auto& px : altered.observations[0][t].pixels) px = 255 - px;
  const auto a = open_loop_prediction(agent, ep, 2, 5, 20), b = open_loop_prediction(agent, altered, 2, 5, 20);
  for (int k = 0; k < a.frames(); ++k) EXPECT_TRUE(torch::equal(a.ego[k], b.ego[k])) << "frame " << k;
}

TEST(Prediction, IndividualVariantPredictsOnlyItsOwnView) {
  const auto agent = make_agent(tiny(Variant::individual));
  const auto r = open_loop_prediction(agent, recorded(agent.config.env, 7), 0, 5, 5);
  EXPECT_EQ(r.frames(), 10);
  EXPECT_TRUE(r.opponent.empty());
}

TEST(Prediction, RejectsWindowsBeyondTheEpisode) {
  const auto agent = make_agent(tiny());
  const auto ep = recorded(agent.config.env, 8);
  EXPECT_THROW(open_loop_prediction(agent, ep, ep.length() - 10, 5, 25), EvalError);
  EXPECT_THROW(open_loop_prediction(agent, ep, 0, 0, 5), EvalError);
  auto wrong = ep;
  wrong.image_size = 32;
  EXPECT_THROW(open_loop_prediction(agent, wrong, 0, 5, 5), EvalError);
}

TEST(Images, PngRoundTripIsLossless) {
  std::vector<std::uint8_t> rgb(5 * 3 * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i * 13);
  write_png(scratch("rt.png"), 5, 3, rgb);
  int w = 0, h = 0;
  EXPECT_EQ(read_png(scratch("rt.png"), w, h), rgb);
  EXPECT_EQ(w, 5);
  EXPECT_EQ(h, 3);
}

TEST(Images, PredictionGridLayout) {
  const auto agent = make_agent(tiny());
  const auto r = open_loop_prediction(agent, recorded(agent.config.env, 9), 0, 5, 25);
  write_prediction_grid(r, scratch("grid.png"));
  int w = 0, h = 0;
  read_png(scratch("grid.png"), w, h);
  EXPECT_EQ(w, 30 * 16 + 31 + 4);
  EXPECT_EQ(h, 4 * 16 + 5);
}

TEST(CarDetection, FindsTheOpponentOnTheGridAndNothingWhenAlone) {
  EnvConfig env;
  env.image_size = 64;
  const auto duel = env::reset(env, 3);
  bool seen = false;
  for (int i = 0; i < 2; ++i)
    seen |= opponent_car_centroid(observation_tensor(duel.observations[i], torch::kFloat32), env).has_value();
  EXPECT_TRUE(seen);
  env.solo = true;
  const auto alone = env::reset(env, 3);
  EXPECT_FALSE(opponent_car_centroid(observation_tensor(alone.observations[0], torch::kFloat32), env).has_value());
}
