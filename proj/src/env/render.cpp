#include <algorithm>
#include <cmath>

#include "dlc/env.hpp"

namespace dlc::env {

namespace {

constexpr Rgb kGrassA{102, 204, 102};
constexpr Rgb kGrassB{102, 230, 102};
constexpr Rgb kRoad{102, 102, 102};
constexpr Rgb kKerbRed{255, 0, 0};
constexpr Rgb kKerbWhite{255, 255, 255};
constexpr double kGrassCell = 8.0;
constexpr double kKerbWidth = 0.8;
constexpr double kKerbCurvature = 0.03;  // rad of heading change per tile

struct VisibleTile {
  const Tile* tile;
  int index;
  bool kerb;
};

Rgb shade(Rgb c, double f) {
  auto s = [f](std::uint8_t v) { return static_cast<std::uint8_t>(std::lround(v * f)); };
  return {s(c.r), s(c.g), s(c.b)};
}

bool car_pixel(const CarState& car, Vec2 p, Rgb& out) {
  if (!car.active) return false;
  const Vec2 d = p - car.position;
  const Vec2 fwd{std::cos(car.heading), std::sin(car.heading)};
  const double along = dot(d, fwd);
  const double side = cross(fwd, d);
  if (std::abs(along) > physics::kLength / 2 || std::abs(side) > physics::kWidth / 2) return false;
  out = along > physics::kLength / 4 ? shade(car.color, 0.55) : car.color;
  return true;
}

}  // namespace

Observation render_ego_view(const EnvConfig& config, const EnvState& state, int agent) {
  if (agent < 0 || agent >= kNumCars) throw EnvError("agent id must be 0 or 1");
  const int size = config.image_size;
  Observation obs(size, size);
  const Track& track = *state.track;
  const CarState& ego = state.cars[agent];
  const double mpp = config.view_size_m / size;
  const Vec2 fwd{std::cos(ego.heading), std::sin(ego.heading)};
  const Vec2 right{fwd.y, -fwd.x};

  const int n = track.size();
  const double tile_reach = track.half_width * 1.5 + track.total_length / n;
  const double view_reach = config.view_size_m * 0.7072 + tile_reach;
  std::vector<VisibleTile> visible;
  for (int i = 0; i < n; ++i) {
    const Vec2 d = track.tiles[i].center - ego.position;
    if (dot(d, d) > view_reach * view_reach) continue;
    const double turn = wrap_angle(track.tiles[(i + 1) % n].direction - track.tiles[(i + n - 1) % n].direction);
    visible.push_back({&track.tiles[i], i, std::abs(turn) > 2.0 * kKerbCurvature});
  }

  const int opponent = 1 - agent;
  for (int row = 0; row < size; ++row) {
    for (int col = 0; col < size; ++col) {
      const double x = (col + 0.5 - size / 2.0) * mpp;
      const double y = (size / 2.0 - row - 0.5) * mpp;
      const Vec2 p = ego.position + right * x + fwd * y;

      const long cell = static_cast<long>(std::floor(p.x / kGrassCell)) + static_cast<long>(std::floor(p.y / kGrassCell));
      Rgb color = (cell & 1) ? kGrassB : kGrassA;
      for (const auto& v : visible) {
        const Vec2 d = p - v.tile->center;
        if (std::abs(d.x) > tile_reach || std::abs(d.y) > tile_reach) continue;
        if (!point_in_tile(*v.tile, p)) continue;
        color = kRoad;
        if (v.kerb) {
          const Vec2 left{-std::sin(v.tile->direction), std::cos(v.tile->direction)};
          if (std::abs(dot(d, left)) > track.half_width - kKerbWidth) color = (v.index & 1) ? kKerbRed : kKerbWhite;
        }
        break;
      }
      Rgb car_color;
      if (car_pixel(state.cars[opponent], p, car_color)) color = car_color;
      if (car_pixel(ego, p, car_color)) color = car_color;

      const auto idx = (static_cast<std::size_t>(row) * size + col) * 3;
      obs.pixels[idx] = color.r;
      obs.pixels[idx + 1] = color.g;
      obs.pixels[idx + 2] = color.b;
    }
  }
  return obs;
}

}  // namespace dlc::env
