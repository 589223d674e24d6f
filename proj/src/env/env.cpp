#include <algorithm>
#include <cmath>
#include <string>

#include "dlc/env.hpp"

namespace dlc::env {

namespace {

constexpr double kParkedFar = 1e6;

Rgb hsv_color(double hue_deg, double sat, double val) {
  const double c = val * sat;
  const double hp = hue_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = val - c;
  auto to_byte = [m](double v) { return static_cast<std::uint8_t>(std::lround((v + m) * 255.0)); };
  return {to_byte(r), to_byte(g), to_byte(b)};
}

// Random saturated color away from the grass greens.
Rgb draw_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> hue(0.0, 260.0);
  std::uniform_real_distribution<double> sv(0.75, 1.0);
  double h = hue(rng);
  if (h >= 70.0) h += 100.0;  // skip [70, 170)
  return hsv_color(h, sv(rng), sv(rng));
}

CarState place_car(const Track& track, int tile, double lateral, Rgb color) {
  const Tile& t = track.tiles[tile];
  const Vec2 left{-std::sin(t.direction), std::cos(t.direction)};
  CarState car;
  car.position = t.center + left * lateral;
  car.heading = wrap_angle(t.direction);
  car.color = color;
  car.last_tile = tile;
  return car;
}

void check_finite(const EnvAction& a) {
  if (!std::isfinite(a.steer) || !std::isfinite(a.gas) || !std::isfinite(a.brake))
    throw EnvError("non-finite action component");
}

bool driving_backwards(const Track& track, const CarState& car) {
  const Tile& t = track.tiles[car.last_tile];
  const Vec2 dir{std::cos(t.direction), std::sin(t.direction)};
  return dot(car.linear_velocity, dir) < -1.0;
}

}  // namespace

EnvAction EnvAction::clamped() const {
  check_finite(*this);
  return {std::clamp(steer, -1.0, 1.0), std::clamp(gas, 0.0, 1.0), std::clamp(brake, 0.0, 1.0)};
}

EnvAction EnvAction::from_vector(std::span<const float> v) {
  if (v.size() != kActionDim) throw EnvError("action vector must have 3 components");
  return {v[0], v[1], v[2]};
}

std::array<double, kNumCars> compute_rewards(std::span<const TileVisit> visits, int num_tiles) {
  if (num_tiles <= 0) throw EnvError("num_tiles must be positive");
  std::array<double, kNumCars> r{-kStepPenalty, -kStepPenalty};
  for (std::size_t i = 0; i < visits.size(); ++i) {
    const TileVisit& v = visits[i];
    if (v.agent < 0 || v.agent >= kNumCars) throw EnvError("visit agent out of range");
    if (v.tile < 0 || v.tile >= num_tiles) throw EnvError("visit tile out of range");
    if (v.order != 1 && v.order != 2)
      throw EnvError("visitation order must be 1 or 2, got " + std::to_string(v.order));
    for (std::size_t j = 0; j < i; ++j)
      if (visits[j].tile == v.tile && visits[j].agent == v.agent)
        throw EnvError("tile " + std::to_string(v.tile) + " credited twice to agent " + std::to_string(v.agent));
    r[v.agent] += (v.order == 1 ? kFirstVisitPool : kSecondVisitPool) / num_tiles;
  }
  return r;
}

EnvState reset_state(const EnvConfig& config, std::uint64_t seed) {
  EnvState s;
  s.seed = seed;
  s.track = std::make_shared<const Track>(generate_track(seed, config));
  s.rng.seed(seed ^ 0x5deece66dull);
  const Track& track = *s.track;
  const int n = track.size();

  // Two grid slots: pole on tile 0 (left of centre), second two tiles back.
  std::bernoulli_distribution swap(0.5);
  const bool car0_on_pole = !swap(s.rng);
  const Rgb c0 = draw_color(s.rng);
  Rgb c1 = draw_color(s.rng);
  const double lat = track.half_width / 3.0;
  const CarState pole = place_car(track, 0, lat, c0);
  const CarState second = place_car(track, (n - 2) % n, -lat, c1);
  if (car0_on_pole) {
    s.cars[0] = pole;
    s.cars[1] = second;
  } else {
    s.cars[0] = place_car(track, (n - 2) % n, -lat, c0);
    s.cars[1] = place_car(track, 0, lat, c1);
  }
  if (config.solo) {
    s.cars[0] = place_car(track, 0, 0.0, c0);
    s.cars[1].active = false;
    s.cars[1].position = {kParkedFar, kParkedFar};
  }
  s.ledger = TileLedger(n);
  s.step_count = 0;
  return s;
}

ResetResult reset(const EnvConfig& config, std::uint64_t seed) {
  ResetResult out;
  out.state = reset_state(config, seed);
  for (int i = 0; i < kNumCars; ++i) out.observations[i] = render_ego_view(config, out.state, i);
  return out;
}

AdvanceResult advance(const EnvConfig& config, const EnvState& state, const std::array<EnvAction, kNumCars>& actions) {
  if (state.step_count >= config.max_steps) throw EnvError("step called on a finished episode");
  if (!state.track) throw EnvError("step called on an uninitialised state");
  std::array<EnvAction, kNumCars> act{};
  for (int i = 0; i < kNumCars; ++i) act[i] = actions[i].clamped();

  AdvanceResult out;
  out.state = state;
  EnvState& s = out.state;
  const Track& track = *s.track;
  const TileLedger before = s.ledger;

  for (int sub = 0; sub < config.action_repeat; ++sub) {
    for (int i = 0; i < kNumCars; ++i)
      if (s.cars[i].active) physics::integrate_car(s.cars[i], act[i], track, config, config.physics_dt);
    physics::resolve_collision(s.cars[0], s.cars[1]);
    for (int i = 0; i < kNumCars; ++i) {
      if (!s.cars[i].active) continue;
      const int tile = track.tile_near(s.cars[i].position, s.cars[i].last_tile, 4);
      if (tile < 0 || s.ledger.order[tile][i] != 0) continue;
      // Order relative to visits completed before this control step; two
      // cars entering in the same step are both first.
      const int other = 1 - i;
      const int order = before.order[tile][other] != 0 ? 2 : 1;
      s.ledger.order[tile][i] = static_cast<std::uint8_t>(order);
      ++s.ledger.visited[i];
      out.visits.push_back({tile, i, order});
    }
  }

  out.rewards = compute_rewards(out.visits, track.size());
  for (int i = 0; i < kNumCars; ++i) {
    if (!s.cars[i].active) {
      out.rewards[i] = 0.0;
      continue;
    }
    if (config.backward_penalty && driving_backwards(track, s.cars[i]))
      out.rewards[i] -= config.backward_penalty_value;
  }
  ++s.step_count;
  const bool all_done = config.solo ? s.ledger.complete(0) : s.ledger.complete(0) && s.ledger.complete(1);
  out.done = s.step_count >= config.max_steps || all_done;
  return out;
}

StepResult step(const EnvConfig& config, const EnvState& state, const std::array<EnvAction, kNumCars>& actions) {
  AdvanceResult a = advance(config, state, actions);
  StepResult out;
  out.state = std::move(a.state);
  out.rewards = a.rewards;
  out.done = a.done;
  for (int i = 0; i < kNumCars; ++i) out.observations[i] = render_ego_view(config, out.state, i);
  return out;
}

}  // namespace dlc::env
