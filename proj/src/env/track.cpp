#include <algorithm>
#include <numbers>
#include <string>

#include "dlc/env.hpp"

namespace dlc::env {

namespace {

constexpr int kHarmonics = 4;
constexpr int kDenseSamples = 4096;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Vec2 left_normal(Vec2 tangent) { return {-tangent.y, tangent.x}; }

Vec2 normalized(Vec2 v) {
  const double n = norm(v);
  return {v.x / n, v.y / n};
}

struct Candidate {
  std::vector<Vec2> centerline;
  double length = 0.0;
};

// Star-shaped closed curve r(theta) = R (1 + sum_k a_k cos(k theta + phi_k)),
// resampled to `n` points at equal arc length.
Candidate sample_candidate(std::mt19937_64& rng, const EnvConfig& cfg, int n) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, kHarmonics> amp{};
  std::array<double, kHarmonics> phase{};
  for (int k = 0; k < kHarmonics; ++k) {
    amp[k] = cfg.track_roughness * unit(rng) / (k + 1);
    phase[k] = 2.0 * std::numbers::pi * unit(rng);
  }
  auto point = [&](double theta) {
    double r = 1.0;
    for (int k = 0; k < kHarmonics; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
    r *= cfg.track_radius_m;
    return Vec2{r * std::cos(theta), r * std::sin(theta)};
  };

  std::vector<Vec2> dense(kDenseSamples + 1);
  std::vector<double> arc(kDenseSamples + 1, 0.0);
  for (int i = 0; i <= kDenseSamples; ++i) {
    dense[i] = point(2.0 * std::numbers::pi * i / kDenseSamples);
    if (i > 0) arc[i] = arc[i - 1] + norm(dense[i] - dense[i - 1]);
  }
  Candidate c;
  c.length = arc.back();
  c.centerline.reserve(n);
  int j = 0;
  for (int i = 0; i < n; ++i) {
    const double target = c.length * i / n;
    while (arc[j + 1] < target) ++j;
    const double seg = arc[j + 1] - arc[j];
    const double t = seg > 0 ? (target - arc[j]) / seg : 0.0;
    c.centerline.push_back(dense[j] + (dense[j + 1] - dense[j]) * t);
  }
  return c;
}

// Rejects layouts whose inner edge folds or whose non-adjacent segments come
// closer than a track width.
bool admissible(const std::vector<Tile>& tiles, const std::vector<Vec2>& centerline, double half_width) {
  const int n = static_cast<int>(tiles.size());
  for (const auto& t : tiles) {
    for (int k = 0; k < 4; ++k) {
      const Vec2 a = t.corners[k], b = t.corners[(k + 1) % 4], c = t.corners[(k + 2) % 4];
      if (cross(b - a, c - b) <= 1e-9) return false;
    }
  }
  const double min_gap = 2.5 * half_width;
  const double spacing = norm(centerline[1] - centerline[0]);
  const int skip = static_cast<int>(std::ceil(3.0 * half_width / std::max(spacing, 1e-9))) + 1;
  for (int i = 0; i < n; ++i) {
    for (int j = i + skip; j < n; ++j) {
      if (n - (j - i) < skip) continue;
      if (norm(centerline[i] - centerline[j]) < min_gap) return false;
    }
  }
  return true;
}

std::vector<Tile> build_tiles(const std::vector<Vec2>& centerline, double half_width) {
  const int n = static_cast<int>(centerline.size());
  std::vector<Vec2> normals(n);
  for (int i = 0; i < n; ++i) {
    const Vec2 tangent = normalized(centerline[(i + 1) % n] - centerline[(i + n - 1) % n]);
    normals[i] = left_normal(tangent);
  }
  std::vector<Tile> tiles(n);
  for (int i = 0; i < n; ++i) {
    const int k = (i + 1) % n;
    Tile& t = tiles[i];
    t.corners = {centerline[i] + normals[i] * half_width, centerline[i] - normals[i] * half_width,
                 centerline[k] - normals[k] * half_width, centerline[k] + normals[k] * half_width};
    t.center = (centerline[i] + centerline[k]) * 0.5;
    const Vec2 d = centerline[k] - centerline[i];
    t.direction = std::atan2(d.y, d.x);
  }
  return tiles;
}

}  // namespace

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  a -= std::numbers::pi;
  return a >= std::numbers::pi ? -std::numbers::pi : a;
}

bool point_in_tile(const Tile& tile, Vec2 p) {
  for (int k = 0; k < 4; ++k) {
    const Vec2 a = tile.corners[k];
    const Vec2 b = tile.corners[(k + 1) % 4];
    if (cross(b - a, p - a) < 0) return false;
  }
  return true;
}

int Track::tile_at(Vec2 p) const {
  const double reach = half_width * 1.5 + total_length / std::max<std::size_t>(tiles.size(), 1);
  for (int i = 0; i < size(); ++i) {
    const Vec2 d = p - tiles[i].center;
    if (std::abs(d.x) > reach || std::abs(d.y) > reach) continue;
    if (point_in_tile(tiles[i], p)) return i;
  }
  return -1;
}

int Track::tile_near(Vec2 p, int hint, int radius) const {
  const int n = size();
  if (n == 0) return -1;
  hint = ((hint % n) + n) % n;
  for (int off = 0; off <= std::min(radius, n / 2); ++off) {
    if (point_in_tile(tiles[(hint + off) % n], p)) return (hint + off) % n;
    if (off > 0 && point_in_tile(tiles[(hint - off + n) % n], p)) return (hint - off + n) % n;
  }
  return tile_at(p);
}

Track generate_track(std::uint64_t seed, const EnvConfig& config) {
  if (config.num_tiles < 3) throw EnvError("track needs at least 3 tiles");
  for (int attempt = 0; attempt < config.track_retries; ++attempt) {
    std::mt19937_64 rng(splitmix64(seed * 1315423911ull + static_cast<std::uint64_t>(attempt)));
    Candidate c = sample_candidate(rng, config, config.num_tiles);
    auto tiles = build_tiles(c.centerline, config.track_half_width_m);
    if (!admissible(tiles, c.centerline, config.track_half_width_m)) continue;
    Track track;
    track.tiles = std::move(tiles);
    track.centerline = std::move(c.centerline);
    track.total_length = c.length;
    track.half_width = config.track_half_width_m;
    track.seed = seed;
    return track;
  }
  throw EnvError("track generation failed for seed " + std::to_string(seed) + " after " +
                 std::to_string(config.track_retries) + " attempts");
}

}  // namespace dlc::env
