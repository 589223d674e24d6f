#include <algorithm>
#include <cmath>

#include "dlc/env.hpp"

namespace dlc::env::physics {

namespace {

constexpr double kGravity = 9.81;
constexpr double kWheelRadius = 0.35;
constexpr double kWheelInertia = 1.2;
constexpr double kAxleOffset = 1.4;
constexpr double kTrackOffset = 0.8;
constexpr double kMaxSteer = 0.45;
constexpr double kSteerRate = 3.0;       // rad/s
constexpr double kMaxDriveTorque = 1260.0;  // per driven wheel, N m
constexpr double kDrivePower = 40000.0;     // per driven wheel, W
constexpr double kBrakeDecel = 150.0;       // rad/s^2 at full brake
constexpr double kBrakeLock = 0.9;
constexpr double kTireStiffness = 0.5;  // fraction of slip removed per step when grip allows
constexpr double kDrag = 1.8;
constexpr double kRolling = 12.0;

struct WheelMount {
  Vec2 offset;  // car frame: x forward, y left
  bool front;
  bool driven;
};

constexpr std::array<WheelMount, 4> kMounts{{
    {{kAxleOffset, kTrackOffset}, true, false},
    {{kAxleOffset, -kTrackOffset}, true, false},
    {{-kAxleOffset, kTrackOffset}, false, true},
    {{-kAxleOffset, -kTrackOffset}, false, true},
}};

}  // namespace

CommandedForces commanded(const EnvAction& a, const WheelState& rear_wheel) {
  CommandedForces f;
  const double spin = std::max(std::abs(rear_wheel.spin), 1.0);
  f.drive_torque = a.gas * std::min(kMaxDriveTorque, kDrivePower / spin);
  f.brake_rate = a.brake * kBrakeDecel;
  f.steer_target = a.steer * kMaxSteer;
  return f;
}

void integrate_car(CarState& car, const EnvAction& action, const Track& track, const EnvConfig& config, double dt) {
  const double steer_target = action.steer * kMaxSteer;
  const double max_delta = kSteerRate * dt;
  car.steer_angle += std::clamp(steer_target - car.steer_angle, -max_delta, max_delta);

  const double normal_load = kMass * kGravity / 4.0;
  const double body_share = kMass / 4.0;
  const double long_mass = 1.0 / (1.0 / body_share + kWheelRadius * kWheelRadius / kWheelInertia);

  Vec2 force{};
  double torque = 0.0;
  for (std::size_t w = 0; w < kMounts.size(); ++w) {
    const WheelMount& mount = kMounts[w];
    WheelState& wheel = car.wheels[w];
    const Vec2 arm = rotate(mount.offset, car.heading);
    const Vec2 contact = car.position + arm;
    const double wheel_heading = car.heading + (mount.front ? car.steer_angle : 0.0);
    const Vec2 fwd{std::cos(wheel_heading), std::sin(wheel_heading)};
    const Vec2 side{-fwd.y, fwd.x};
    const Vec2 vel = car.linear_velocity + cross(car.angular_velocity, arm);
    const double v_fwd = dot(vel, fwd);
    const double v_side = dot(vel, side);

    wheel.on_grass = track.tile_near(contact, car.last_tile, 4) < 0;
    const double mu = config.tire_friction * (wheel.on_grass ? config.grass_friction_factor : 1.0);

    if (mount.driven) {
      const CommandedForces cmd = commanded(action, wheel);
      wheel.spin += cmd.drive_torque / kWheelInertia * dt;
    }
    if (action.brake >= kBrakeLock) {
      wheel.spin = 0.0;
    } else if (action.brake > 0.0) {
      const double dec = action.brake * kBrakeDecel * dt;
      wheel.spin = std::abs(wheel.spin) <= dec ? 0.0 : wheel.spin - std::copysign(dec, wheel.spin);
    }

    double f_long = long_mass * (wheel.spin * kWheelRadius - v_fwd) / dt * kTireStiffness;
    double f_side = -body_share * v_side / dt * kTireStiffness;
    const double cap = mu * normal_load;
    const double demand = std::hypot(f_long, f_side);
    wheel.skidding = demand > cap;
    if (wheel.skidding) {
      f_long *= cap / demand;
      f_side *= cap / demand;
    }
    wheel.spin -= f_long * kWheelRadius / kWheelInertia * dt;

    const Vec2 f = fwd * f_long + side * f_side;
    force += f;
    torque += cross(arm, f);
  }

  const double speed = norm(car.linear_velocity);
  force -= car.linear_velocity * (kDrag * speed + kRolling);

  car.linear_velocity += force * (dt / kMass);
  car.angular_velocity += torque / kInertia * dt;
  car.position += car.linear_velocity * dt;
  car.heading = wrap_angle(car.heading + car.angular_velocity * dt);

  const int tile = track.tile_near(car.position, car.last_tile, 4);
  if (tile >= 0) car.last_tile = tile;
}

namespace {

std::array<Vec2, 2> circle_centers(const CarState& c) {
  const Vec2 fwd{std::cos(c.heading), std::sin(c.heading)};
  return {c.position + fwd * kCircleOffset, c.position - fwd * kCircleOffset};
}

}  // namespace

ContactImpulse resolve_collision(CarState& a, CarState& b) {
  ContactImpulse total;
  if (!a.active || !b.active) return total;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const Vec2 ca = circle_centers(a)[i];
      const Vec2 cb = circle_centers(b)[j];
      const Vec2 delta = cb - ca;
      const double dist = norm(delta);
      const double overlap = 2.0 * kCircleRadius - dist;
      if (overlap <= 0.0) continue;
      total.touching = true;
      const Vec2 n = dist > 1e-12 ? delta * (1.0 / dist) : Vec2{1.0, 0.0};
      const Vec2 point = ca + n * (kCircleRadius - 0.5 * overlap);
      const Vec2 ra = point - a.position;
      const Vec2 rb = point - b.position;
      const Vec2 va = a.linear_velocity + cross(a.angular_velocity, ra);
      const Vec2 vb = b.linear_velocity + cross(b.angular_velocity, rb);
      const double approach = dot(vb - va, n);
      if (approach < 0.0) {
        const double ran = cross(ra, n);
        const double rbn = cross(rb, n);
        const double denom = 2.0 / kMass + ran * ran / kInertia + rbn * rbn / kInertia;
        const double j_mag = -approach / denom;  // restitution 0
        const Vec2 impulse = n * j_mag;
        b.linear_velocity += impulse * (1.0 / kMass);
        b.angular_velocity += cross(rb, impulse) / kInertia;
        a.linear_velocity -= impulse * (1.0 / kMass);
        a.angular_velocity -= cross(ra, impulse) / kInertia;
        total.on_second += impulse;
        total.on_first -= impulse;
      }
      // Split positional correction equally.
      a.position -= n * (0.5 * overlap);
      b.position += n * (0.5 * overlap);
    }
  }
  return total;
}

}  // namespace dlc::env::physics
