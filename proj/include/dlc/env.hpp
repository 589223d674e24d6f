#pragma once

// Two-car top-down racing simulator: seeded track generation, planar
// friction-limited car dynamics with impulse collisions, visitation-order
// tile rewards and ego-view rendering.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "dlc/config.hpp"

namespace dlc::env {

inline constexpr int kNumCars = 2;
inline constexpr int kActionDim = 3;
inline constexpr double kStepPenalty = 0.1;
inline constexpr double kFirstVisitPool = 1000.0;
inline constexpr double kSecondVisitPool = 500.0;

class EnvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }
/// Angular velocity (scalar z) crossed with a planar vector.
inline Vec2 cross(double w, Vec2 r) { return {-w * r.y, w * r.x}; }
inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}
/// Wraps to [-pi, pi).
double wrap_angle(double a);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// One quadrilateral track segment. Corners are ordered
/// (left_begin, right_begin, right_end, left_end); `right_*` of tile i equal
/// `*_begin` of tile i+1, so consecutive tiles share an edge.
struct Tile {
  std::array<Vec2, 4> corners;
  Vec2 center;
  double direction = 0.0;  // heading of the centerline through the tile
};

struct Track {
  std::vector<Tile> tiles;
  std::vector<Vec2> centerline;  // tiles.size() points, closed loop
  double total_length = 0.0;
  double half_width = 0.0;
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(tiles.size()); }
  /// Index of the tile containing p, or -1 when p is off the track.
  int tile_at(Vec2 p) const;
  /// As tile_at, but only scans tiles within `radius` of `hint`'s neighbourhood.
  int tile_near(Vec2 p, int hint, int radius) const;
  bool on_track(Vec2 p) const { return tile_at(p) >= 0; }
};

bool point_in_tile(const Tile& tile, Vec2 p);

/// Closed-loop track with exactly config.num_tiles tiles; pure function of
/// (seed, config). Throws EnvError when no admissible layout is found
/// within config.track_retries attempts.
Track generate_track(std::uint64_t seed, const EnvConfig& config);

struct WheelState {
  double spin = 0.0;  // rad/s
  bool skidding = false;
  bool on_grass = false;
};

struct CarState {
  Vec2 position;
  double heading = 0.0;  // forward direction, radians in [-pi, pi)
  Vec2 linear_velocity;
  double angular_velocity = 0.0;
  double steer_angle = 0.0;
  std::array<WheelState, 4> wheels{};
  Rgb color;
  bool active = true;
  int last_tile = 0;  // tile lookup hint
};

struct EnvAction {
  double steer = 0.0;
  double gas = 0.0;
  double brake = 0.0;

  /// Clamps into the box; throws EnvError on non-finite components.
  EnvAction clamped() const;
  static EnvAction from_vector(std::span<const float> v);
  std::array<float, kActionDim> to_vector() const {
    return {static_cast<float>(steer), static_cast<float>(gas), static_cast<float>(brake)};
  }
};

/// H x W x 3 image, row-major, channels last. Intensity = byte / 255.
struct Observation {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Observation() = default;
  Observation(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}
  float intensity(int row, int col, int channel) const {
    return pixels[(static_cast<std::size_t>(row) * width + col) * 3 + channel] / 255.0f;
  }
  Rgb at(int row, int col) const {
    const auto i = (static_cast<std::size_t>(row) * width + col) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  bool operator==(const Observation&) const = default;
};

/// Per-tile visitation record. order[agent] is 0 (not visited), 1 (first
/// visitor) or 2 (second visitor).
struct TileLedger {
  std::vector<std::array<std::uint8_t, kNumCars>> order;
  std::array<int, kNumCars> visited{};

  explicit TileLedger(int tiles = 0) : order(tiles, {0, 0}) {}
  bool complete(int agent) const { return visited[agent] == static_cast<int>(order.size()); }
  bool empty() const { return visited[0] == 0 && visited[1] == 0; }
};

struct TileVisit {
  int tile = 0;
  int agent = 0;  // 0 or 1
  int order = 1;  // 1 = first visitor, 2 = second
};

struct EnvState {
  std::shared_ptr<const Track> track;
  std::array<CarState, kNumCars> cars{};
  TileLedger ledger;
  int step_count = 0;
  std::mt19937_64 rng;
  std::uint64_t seed = 0;
};

struct ResetResult {
  EnvState state;
  std::array<Observation, kNumCars> observations;
};

struct StepResult {
  EnvState state;
  std::array<Observation, kNumCars> observations;
  std::array<double, kNumCars> rewards{};
  bool done = false;
};

/// Physics and accounting without rendering.
struct AdvanceResult {
  EnvState state;
  std::array<double, kNumCars> rewards{};
  std::vector<TileVisit> visits;
  bool done = false;
};

ResetResult reset(const EnvConfig& config, std::uint64_t seed);
EnvState reset_state(const EnvConfig& config, std::uint64_t seed);
AdvanceResult advance(const EnvConfig& config, const EnvState& state,
                      const std::array<EnvAction, kNumCars>& actions);
StepResult step(const EnvConfig& config, const EnvState& state,
                const std::array<EnvAction, kNumCars>& actions);

/// -0.1 per agent plus 1000/N per first visit and 500/N per second visit.
/// Throws EnvError for an order outside {1, 2}, an agent outside {0, 1}, or a
/// (tile, agent) pair credited twice.
std::array<double, kNumCars> compute_rewards(std::span<const TileVisit> visits, int num_tiles);

/// Top-down view centred on and rotated with car `agent` (0 or 1).
Observation render_ego_view(const EnvConfig& config, const EnvState& state, int agent);

// Physics internals exposed for tests.
namespace physics {

inline constexpr double kMass = 1200.0;
inline constexpr double kLength = 4.4;
inline constexpr double kWidth = 1.9;
inline constexpr double kInertia = kMass * (kLength * kLength + kWidth * kWidth) / 12.0;
inline constexpr double kCircleRadius = 1.0;
inline constexpr double kCircleOffset = 1.2;

/// Drive/steer/brake forces a clamped action would command, before friction
/// limiting. Used to verify clamping never increases force.
struct CommandedForces {
  double drive_torque = 0.0;
  double brake_rate = 0.0;
  double steer_target = 0.0;
};
CommandedForces commanded(const EnvAction& clamped_action, const WheelState& rear_wheel);

/// Advances one car by dt under the given action on the given track.
void integrate_car(CarState& car, const EnvAction& action, const Track& track, const EnvConfig& config,
                   double dt);

struct ContactImpulse {
  Vec2 on_first;
  Vec2 on_second;
  bool touching = false;
};

/// Resolves contacts between two cars (restitution 0), mutating both.
ContactImpulse resolve_collision(CarState& a, CarState& b);

}  // namespace physics

}  // namespace dlc::env
