#include "dlc/race.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dlc::race {

using namespace dlc::env;

env::EnvAction to_env_action(const PolicyAction& a) { return EnvAction::from_vector(a).clamped(); }

std::string to_string(Stream s) {
  switch (s) {
    case Stream::observation: return "observation";
    case Stream::action: return "action";
    case Stream::reward: return "reward";
    case Stream::state: return "state";
  }
  return "?";
}

std::vector<AccessRecord> AccessLog::foreign_reads(int reader) const {
  std::vector<AccessRecord> out;
  for (const auto& r : records_)
    if (r.reader == reader && r.owner != reader) out.push_back(r);
  return out;
}

std::size_t AccessLog::count(int reader, Stream stream, int owner) const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [&](const AccessRecord& r) {
    return r.reader == reader && r.stream == stream && r.owner == owner;
  }));
}

RaceFrame::RaceFrame(const EnvConfig& config, const EnvState& state, int step, std::array<PolicyAction, 2> last_actions,
                     std::array<double, 2> last_rewards, std::array<std::optional<Observation>, 2> observations)
    : config_(&config),
      state_(&state),
      step_(step),
      last_actions_(last_actions),
      last_rewards_(last_rewards),
      observations_(std::move(observations)) {}

const Observation& RaceFrame::observation(int agent) const {
  auto& slot = observations_.at(agent);
  if (!slot) slot = render_ego_view(*config_, *state_, agent);
  return *slot;
}

void StepView::log(Stream s, int owner) const {
  if (log_) log_->record({self_, s, owner, frame_->step()});
}

const Observation& StepView::observation(int agent) const {
  log(Stream::observation, agent);
  return frame_->observation(agent);
}

const PolicyAction& StepView::last_action(int agent) const {
  log(Stream::action, agent);
  return frame_->last_action(agent);
}

double StepView::last_reward(int agent) const {
  log(Stream::reward, agent);
  return frame_->last_reward(agent);
}

const EnvState& StepView::env_state() const {
  log(Stream::state, -1);
  return frame_->state();
}

void RandomDriver::begin(int, std::uint64_t seed) { rng_.seed(seed); }

PolicyAction RandomDriver::act(const StepView&) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  PolicyAction a;
  for (auto& x : a) x = u(rng_);
  return a;
}

ScriptedDriver::ScriptedDriver(double top_speed, std::string label) : top_speed_(top_speed), label_(std::move(label)) {}

std::unique_ptr<ScriptedDriver> ScriptedDriver::fast() { return std::make_unique<ScriptedDriver>(30.0, "scripted:fast"); }
std::unique_ptr<ScriptedDriver> ScriptedDriver::slow() { return std::make_unique<ScriptedDriver>(12.0, "scripted:slow"); }

PolicyAction ScriptedDriver::act(const StepView& view) {
  constexpr int kLookahead = 3;
  constexpr int kSpeedHorizon = 12;
  constexpr double kLateralGrip = 0.7 * 9.81;

  const EnvState& s = view.env_state();
  const CarState& car = s.cars[view.self()];
  const CarState& opp = s.cars[1 - view.self()];
  const Track& track = *s.track;
  const int n = track.size();

  const Tile& target_tile = track.tiles[(car.last_tile + kLookahead) % n];
  const Vec2 left{-std::sin(target_tile.direction), std::cos(target_tile.direction)};
  const Vec2 fwd{std::cos(car.heading), std::sin(car.heading)};

  // Pass on the side away from a car just ahead.
  double offset = 0.0;
  if (opp.active) {
    const double ahead = dot(opp.position - car.position, fwd);
    if (ahead > -2.0 && ahead < 18.0) {
      const Tile& opp_tile = track.tiles[opp.last_tile];
      const Vec2 opp_left{-std::sin(opp_tile.direction), std::cos(opp_tile.direction)};
      const double lateral = dot(opp.position - opp_tile.center, opp_left);
      offset = (lateral > 0.0 ? -0.55 : 0.55) * track.half_width;
    }
  }
  const Vec2 d = target_tile.center + left * offset - car.position;
  const double heading_error = wrap_angle(std::atan2(d.y, d.x) - car.heading);

  const double segment = track.total_length / n;
  double limit = top_speed_;
  for (int k = 1; k < kSpeedHorizon; ++k) {
    const int a = (car.last_tile + k) % n;
    const double turn = std::abs(wrap_angle(track.tiles[(a + 1) % n].direction - track.tiles[a].direction));
    if (turn > 1e-6) limit = std::min(limit, std::sqrt(kLateralGrip * segment / turn));
  }
  const double speed = norm(car.linear_velocity);
  return {static_cast<float>(std::clamp(2.0 * heading_error, -1.0, 1.0)), speed < limit ? 1.0f : 0.0f,
          speed > limit + 2.0 ? 0.6f : 0.0f};
}

double EpisodeRecord::total_reward(int agent) const {
  double sum = 0.0;
  for (double r : rewards.at(agent)) sum += r;
  return sum;
}

namespace {
std::uint64_t driver_seed(std::uint64_t race_seed, int slot) {
  std::uint64_t z = race_seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(slot + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

RaceResult run_race(const EnvConfig& config, std::uint64_t seed, Driver& first, Driver* second,
                    const RaceOptions& options) {
  if (!second && !config.solo) throw std::invalid_argument("a two-car race needs two drivers");
  std::array<Driver*, 2> drivers{&first, config.solo ? nullptr : second};

  RaceResult result;
  if (options.record) {
    result.episode.emplace();
    result.episode->env_seed = seed;
    result.episode->image_size = config.image_size;
  }
  EnvState state = reset_state(config, seed);
  for (int i = 0; i < 2; ++i)
    if (drivers[i]) drivers[i]->begin(i, driver_seed(seed, i));

  std::array<PolicyAction, 2> last_actions{};
  std::array<double, 2> last_rewards{};
  for (int t = 0; t < config.max_steps; ++t) {
    RaceFrame frame(config, state, t, last_actions, last_rewards);
    std::array<PolicyAction, 2> actions{};
    for (int i = 0; i < 2; ++i)
      if (drivers[i]) actions[i] = drivers[i]->act(StepView(frame, i, options.log));

    AdvanceResult next = advance(config, state, {to_env_action(actions[0]), to_env_action(actions[1])});
    if (result.episode) {
      for (int i = 0; i < 2; ++i) {
        result.episode->observations[i].push_back(frame.observation(i));
        result.episode->actions[i].push_back(actions[i]);
        result.episode->rewards[i].push_back(next.rewards[i]);
      }
    }
    for (int i = 0; i < 2; ++i) result.scores[i] += next.rewards[i];
    last_actions = actions;
    last_rewards = next.rewards;
    state = std::move(next.state);
    ++result.steps;
    if (next.done) break;
  }
  result.tiles = state.ledger.visited;
  return result;
}

}  // namespace dlc::race
