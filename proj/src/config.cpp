#include "dlc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace dlc {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration:";
  for (const auto& p : problems) out += "\n  - " + p;
  return out;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  // Shortest representation that round-trips.
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

bool parse_int(const std::string& s, long long& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_uint(const std::string& s, std::uint64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

struct Field {
  std::string key;
  std::function<std::string(const VariantConfig&)> get;
  // Returns an empty string on success, otherwise a description of the problem.
  std::function<std::string(VariantConfig&, const std::string&)> set;
};

template <typename Member>
Field int_field(std::string key, Member member) {
  return {key,
          [member](const VariantConfig& c) { return std::to_string(member(const_cast<VariantConfig&>(c))); },
          [member](VariantConfig& c, const std::string& v) -> std::string {
            long long x = 0;
            if (!parse_int(v, x)) return "expected an integer, got '" + v + "'";
            member(c) = static_cast<int>(x);
            return {};
          }};
}

template <typename Member>
Field double_field(std::string key, Member member) {
  return {key,
          [member](const VariantConfig& c) { return format_double(member(const_cast<VariantConfig&>(c))); },
          [member](VariantConfig& c, const std::string& v) -> std::string {
            double x = 0;
            if (!parse_double(v, x)) return "expected a finite number, got '" + v + "'";
            member(c) = x;
            return {};
          }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key,
          [member](const VariantConfig& c) { return member(const_cast<VariantConfig&>(c)) ? "true" : "false"; },
          [member](VariantConfig& c, const std::string& v) -> std::string {
            bool x = false;
            if (!parse_bool(v, x)) return "expected true/false, got '" + v + "'";
            member(c) = x;
            return {};
          }};
}

#define DLC_MEMBER(expr) [](VariantConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"variant", [](const VariantConfig& c) { return to_string(c.variant); },
                 [](VariantConfig& c, const std::string& v) -> std::string {
                   try {
                     c.variant = parse_variant(v);
                   } catch (const std::exception& e) {
                     return e.what();
                   }
                   return {};
                 }});
    f.push_back(int_field("episodes", DLC_MEMBER(episodes)));
    f.push_back(int_field("train_iterations", DLC_MEMBER(train_iterations)));
    f.push_back(int_field("seed_episodes", DLC_MEMBER(seed_episodes)));
    f.push_back(int_field("batch_size", DLC_MEMBER(batch_size)));
    f.push_back(int_field("sequence_length", DLC_MEMBER(sequence_length)));
    f.push_back(int_field("horizon", DLC_MEMBER(horizon)));
    f.push_back(int_field("replay_capacity", DLC_MEMBER(replay_capacity)));
    f.push_back(double_field("gamma", DLC_MEMBER(gamma)));
    f.push_back(double_field("lambda", DLC_MEMBER(lambda)));
    f.push_back(double_field("beta", DLC_MEMBER(beta)));
    f.push_back(double_field("model_lr", DLC_MEMBER(model_lr)));
    f.push_back(double_field("value_lr", DLC_MEMBER(value_lr)));
    f.push_back(double_field("actor_lr", DLC_MEMBER(actor_lr)));
    f.push_back(double_field("grad_clip", DLC_MEMBER(grad_clip)));
    f.push_back(double_field("adam_eps", DLC_MEMBER(adam_eps)));
    f.push_back(double_field("explore_noise", DLC_MEMBER(explore_noise)));
    f.push_back(double_field("action_mean_scale", DLC_MEMBER(action_mean_scale)));
    f.push_back(double_field("action_init_std", DLC_MEMBER(action_init_std)));
    f.push_back(double_field("action_min_std", DLC_MEMBER(action_min_std)));
    f.push_back({"seed", [](const VariantConfig& c) { return std::to_string(c.seed); },
                 [](VariantConfig& c, const std::string& v) -> std::string {
                   std::uint64_t x = 0;
                   if (!parse_uint(v, x)) return "expected a non-negative integer, got '" + v + "'";
                   c.seed = x;
                   return {};
                 }});
    f.push_back(bool_field("double_precision", DLC_MEMBER(double_precision)));
    f.push_back(int_field("eval_races", DLC_MEMBER(eval_races)));

    f.push_back(int_field("env.image_size", DLC_MEMBER(env.image_size)));
    f.push_back(double_field("env.view_size_m", DLC_MEMBER(env.view_size_m)));
    f.push_back(int_field("env.num_tiles", DLC_MEMBER(env.num_tiles)));
    f.push_back(double_field("env.track_radius_m", DLC_MEMBER(env.track_radius_m)));
    f.push_back(double_field("env.track_half_width_m", DLC_MEMBER(env.track_half_width_m)));
    f.push_back(double_field("env.track_roughness", DLC_MEMBER(env.track_roughness)));
    f.push_back(int_field("env.track_retries", DLC_MEMBER(env.track_retries)));
    f.push_back(double_field("env.physics_dt", DLC_MEMBER(env.physics_dt)));
    f.push_back(int_field("env.action_repeat", DLC_MEMBER(env.action_repeat)));
    f.push_back(int_field("env.max_steps", DLC_MEMBER(env.max_steps)));
    f.push_back(double_field("env.tire_friction", DLC_MEMBER(env.tire_friction)));
    f.push_back(double_field("env.grass_friction_factor", DLC_MEMBER(env.grass_friction_factor)));
    f.push_back(bool_field("env.solo", DLC_MEMBER(env.solo)));
    f.push_back(bool_field("env.backward_penalty", DLC_MEMBER(env.backward_penalty)));
    f.push_back(double_field("env.backward_penalty_value", DLC_MEMBER(env.backward_penalty_value)));
    return f;
  }();
  return table;
}

#undef DLC_MEMBER

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void apply_pairs(VariantConfig& cfg, const std::vector<std::pair<std::string, std::string>>& pairs,
                 std::vector<std::string>& problems) {
  for (const auto& [key, value] : pairs) {
    if (key == "preset") continue;
    const Field* f = find_field(key);
    if (!f) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    if (auto err = f->set(cfg, value); !err.empty()) problems.push_back(key + ": " + err);
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_problems(problems)), problems_(std::move(problems)) {}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::individual: return "individual";
    case Variant::joint: return "joint";
    case Variant::joint_observer: return "joint_observer";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "individual") return Variant::individual;
  if (name == "joint") return Variant::joint;
  if (name == "joint_observer" || name == "joint+observer") return Variant::joint_observer;
  throw std::invalid_argument("unknown variant '" + name + "' (individual, joint, joint_observer)");
}

void apply_preset(VariantConfig& cfg, const std::string& preset) {
  const Variant variant = cfg.variant;
  const std::uint64_t seed = cfg.seed;
  if (preset == "paper") {
    cfg = VariantConfig{};
  } else if (preset == "desk") {
    cfg = VariantConfig{};
    cfg.env.image_size = 64;
    cfg.env.max_steps = 300;
    cfg.episodes = 20;
    cfg.train_iterations = 100;
    cfg.batch_size = 12;
    cfg.sequence_length = 20;
  } else if (preset == "tiny") {
    cfg = VariantConfig{};
    cfg.env.image_size = 16;
    cfg.env.view_size_m = 48.0;
    cfg.env.max_steps = 60;
    cfg.episodes = 2;
    cfg.train_iterations = 2;
    cfg.seed_episodes = 2;
    cfg.batch_size = 3;
    cfg.sequence_length = 6;
    cfg.horizon = 4;
    cfg.eval_races = 2;
  } else {
    throw ConfigError({"unknown preset '" + preset + "' (paper, desk, tiny)"});
  }
  cfg.preset = preset;
  cfg.variant = variant;
  cfg.seed = seed;
}

VariantConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }

  VariantConfig cfg;
  std::string preset = "paper";
  for (const auto& [k, v] : pairs)
    if (k == "preset") preset = v;
  try {
    apply_preset(cfg, preset);
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
  }
  apply_pairs(cfg, pairs, problems);
  if (!problems.empty()) throw ConfigError(problems);
  validate(cfg);
  return cfg;
}

VariantConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(VariantConfig& cfg, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<std::string> problems;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      problems.push_back("override '" + o + "' is not key=value");
      continue;
    }
    auto key = trim(o.substr(0, eq));
    if (key == "preset") {
      problems.push_back("preset cannot be overridden; set it in the config file");
      continue;
    }
    pairs.emplace_back(std::move(key), trim(o.substr(eq + 1)));
  }
  apply_pairs(cfg, pairs, problems);
  if (!problems.empty()) throw ConfigError(problems);
  validate(cfg);
}

std::string serialize_config(const VariantConfig& cfg) {
  std::string out = "preset = " + cfg.preset + "\n";
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

void validate(const VariantConfig& c) {
  std::vector<std::string> p;
  auto require = [&p](bool ok, const std::string& msg) {
    if (!ok) p.push_back(msg);
  };
  const int expected_image = c.preset == "paper" ? 96 : c.preset == "desk" ? 64 : 16;
  require(c.env.image_size == expected_image,
          "env.image_size must be " + std::to_string(expected_image) + " for preset '" + c.preset + "'");
  require(c.env.num_tiles >= 3, "env.num_tiles must be >= 3");
  require(c.env.view_size_m > 0, "env.view_size_m must be positive");
  require(c.env.track_radius_m > 0, "env.track_radius_m must be positive");
  require(c.env.track_half_width_m > 0, "env.track_half_width_m must be positive");
  require(c.env.track_roughness >= 0 && c.env.track_roughness < 0.5, "env.track_roughness must be in [0, 0.5)");
  require(c.env.track_retries >= 1, "env.track_retries must be >= 1");
  require(c.env.physics_dt > 0 && c.env.physics_dt <= 0.1, "env.physics_dt must be in (0, 0.1]");
  require(c.env.action_repeat >= 1, "env.action_repeat must be >= 1");
  require(c.env.max_steps >= 1, "env.max_steps must be >= 1");
  require(c.env.tire_friction > 0, "env.tire_friction must be positive");
  require(c.env.grass_friction_factor > 0 && c.env.grass_friction_factor < 1,
          "env.grass_friction_factor must be in (0, 1)");
  require(c.env.backward_penalty_value >= 0, "env.backward_penalty_value must be >= 0");
  require(c.episodes >= 0, "episodes must be >= 0");
  require(c.train_iterations >= 0, "train_iterations must be >= 0");
  require(c.seed_episodes >= 0, "seed_episodes must be >= 0");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.sequence_length >= 1, "sequence_length must be >= 1");
  require(c.sequence_length <= c.env.max_steps, "sequence_length must not exceed env.max_steps");
  require(c.horizon >= 1, "horizon must be >= 1");
  require(c.replay_capacity >= 0, "replay_capacity must be >= 0");
  require(c.gamma >= 0 && c.gamma <= 1, "gamma must be in [0, 1]");
  require(c.lambda >= 0 && c.lambda <= 1, "lambda must be in [0, 1]");
  require(c.beta >= 0, "beta must be >= 0");
  require(c.model_lr >= 0 && c.value_lr >= 0 && c.actor_lr >= 0, "learning rates must be >= 0");
  require(c.grad_clip > 0, "grad_clip must be positive");
  require(c.adam_eps > 0, "adam_eps must be positive");
  require(c.explore_noise >= 0, "explore_noise must be >= 0");
  require(c.action_mean_scale > 0, "action_mean_scale must be positive");
  require(c.action_min_std >= 0, "action_min_std must be >= 0");
  require(c.eval_races >= 0, "eval_races must be >= 0");
  if (!p.empty()) throw ConfigError(p);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {
std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}
}  // namespace

std::string config_hash(const VariantConfig& cfg) { return hex16(fnv1a64(serialize_config(cfg))); }

std::string env_config_hash(const EnvConfig& env) {
  VariantConfig tmp;
  tmp.env = env;
  std::string text;
  for (const auto& f : fields())
    if (f.key.rfind("env.", 0) == 0) text += f.key + "=" + f.get(tmp) + "\n";
  return hex16(fnv1a64(text));
}

}  // namespace dlc
