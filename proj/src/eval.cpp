#include "dlc/eval.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "dlc/trainer.hpp"

namespace dlc::eval {

using nlohmann::json;

namespace {

std::unique_ptr<race::Driver> builtin_driver(const std::string& spec) {
  if (spec == "scripted:fast") return race::ScriptedDriver::fast();
  if (spec == "scripted:slow") return race::ScriptedDriver::slow();
  if (spec == "random") return std::make_unique<race::RandomDriver>();
  return nullptr;
}

json env_json(const EnvConfig& env) {
  return {{"image_size", env.image_size}, {"num_tiles", env.num_tiles}, {"max_steps", env.max_steps},
          {"hash", env_config_hash(env)}};
}

}  // namespace

Contestant builtin_contestant(const std::string& spec) {
  if (!builtin_driver(spec)) throw EvalError("unknown built-in contestant '" + spec + "'");
  Contestant c;
  c.name = spec;
  c.make_driver = [spec] { return builtin_driver(spec); };
  return c;
}

Contestant checkpoint_contestant(const std::filesystem::path& path, const std::string& name) {
  auto agent = std::make_shared<const Agent>(load_agent(trainer::resolve_checkpoint(path)));
  Contestant c;
  c.name = name.empty() ? path.string() : name;
  c.env = agent->config.env;
  c.agent = agent;
  const std::string label = c.name;
  c.make_driver = [agent, label] {
    return std::make_unique<LatentDriver>(*agent, behavior::ActMode::mode, 0.0, label);
  };
  return c;
}

Contestant make_contestant(const std::string& spec) {
  if (builtin_driver(spec)) return builtin_contestant(spec);
  return checkpoint_contestant(spec);
}

EnvConfig common_env(const std::vector<Contestant>& contestants, const EnvConfig& fallback) {
  std::optional<EnvConfig> env;
  std::string first;
  for (const auto& c : contestants) {
    if (!c.env) continue;
    EnvConfig e = *c.env;
    e.solo = false;
    if (!env) {
      env = e;
      first = c.name;
    } else if (env_config_hash(e) != env_config_hash(*env)) {
      throw EvalError("incompatible environment configs: '" + first + "' and '" + c.name + "'");
    }
  }
  EnvConfig out = env ? *env : fallback;
  out.solo = false;
  return out;
}

double PairingResult::win_ratio_a() const {
  if (races == 0) return 0.0;
  return (wins_a + 0.5 * draws) / races;
}

std::pair<double, double> binomial_interval(double successes, int trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = trials, p = successes / n, z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

PairingResult play_pairing(const Contestant& a, const Contestant& b, int races, std::uint64_t seed,
                           const EnvConfig& env) {
  if (races < 1) throw EvalError("races per pairing must be positive");
  if (env.solo) throw EvalError("tournament races need both cars");
  PairingResult r;
  r.a = a.name;
  r.b = b.name;
  auto da = a.make_driver();
  auto db = b.make_driver();
  double sum_a = 0.0, sum_b = 0.0;
  for (int k = 0; k < races; ++k) {
    RaceOutcome o;
    o.seed = derive_seed(seed, "race/" + std::to_string(k));
    o.swapped = (derive_seed(o.seed, "start-order") & 1u) != 0;
    race::Driver& first = o.swapped ? *db : *da;
    race::Driver& second = o.swapped ? *da : *db;
    const auto result = race::run_race(env, o.seed, first, &second);
    o.score_a = result.scores[o.swapped ? 1 : 0];
    o.score_b = result.scores[o.swapped ? 0 : 1];
    o.steps = result.steps;
    if (std::abs(o.score_a - o.score_b) <= kDrawTolerance)
      ++r.draws;
    else if (o.score_a > o.score_b)
      ++r.wins_a;
    else
      ++r.wins_b;
    sum_a += o.score_a;
    sum_b += o.score_b;
    r.outcomes.push_back(o);
  }
  r.races = races;
  r.mean_score_a = sum_a / races;
  r.mean_score_b = sum_b / races;
  return r;
}

TournamentResult round_robin(const std::vector<Contestant>& contestants, int races_per_pairing, std::uint64_t seed,
                             const EnvConfig& fallback_env) {
  if (contestants.size() < 2) throw EvalError("a tournament needs at least two contestants");
  TournamentResult t;
  t.env = common_env(contestants, fallback_env);
  t.seed = seed;
  for (std::size_t i = 0; i < contestants.size(); ++i)
    for (std::size_t j = i + 1; j < contestants.size(); ++j)
      t.pairings.push_back(play_pairing(contestants[i], contestants[j], races_per_pairing,
                                        derive_seed(seed, "pairing/" + std::to_string(i) + "/" + std::to_string(j)),
                                        t.env));
  return t;
}

std::string to_json(const TournamentResult& result) {
  json pairings = json::array();
  for (const auto& p : result.pairings) {
    json races = json::array();
    for (const auto& o : p.outcomes)
      races.push_back({{"seed", o.seed}, {"swapped", o.swapped}, {"score_a", o.score_a}, {"score_b", o.score_b},
                       {"steps", o.steps}});
    const auto [lo, hi] = binomial_interval(p.wins_a + 0.5 * p.draws, p.races);
    pairings.push_back({{"a", p.a},
                        {"b", p.b},
                        {"races", p.races},
                        {"wins_a", p.wins_a},
                        {"wins_b", p.wins_b},
                        {"draws", p.draws},
                        {"win_ratio_a", p.win_ratio_a()},
                        {"win_ratio_a_ci95", {lo, hi}},
                        {"mean_score_a", p.mean_score_a},
                        {"mean_score_b", p.mean_score_b},
                        {"race_records", races}});
  }
  return json{{"seed", result.seed}, {"env", env_json(result.env)}, {"pairings", pairings}}.dump(2);
}

std::string to_table(const TournamentResult& result) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "A" << std::setw(28) << "B" << std::right << std::setw(6) << "races"
      << std::setw(6) << "winA" << std::setw(6) << "winB" << std::setw(6) << "draw" << std::setw(8) << "ratioA"
      << std::setw(18) << "95% CI" << std::setw(10) << "scoreA" << std::setw(10) << "scoreB" << '\n';
  out << std::fixed;
  for (const auto& p : result.pairings) {
    const auto [lo, hi] = binomial_interval(p.wins_a + 0.5 * p.draws, p.races);
    std::ostringstream ci;
    ci << std::fixed << std::setprecision(3) << '[' << lo << ", " << hi << ']';
    out << std::left << std::setw(28) << p.a.substr(0, 27) << std::setw(28) << p.b.substr(0, 27) << std::right
        << std::setw(6) << p.races << std::setw(6) << p.wins_a << std::setw(6) << p.wins_b << std::setw(6) << p.draws
        << std::setw(8) << std::setprecision(3) << p.win_ratio_a() << std::setw(18) << ci.str() << std::setw(10)
        << std::setprecision(1) << p.mean_score_a << std::setw(10) << p.mean_score_b << '\n';
  }
  return out.str();
}

double SoloResult::mean() const {
  if (scores.empty()) return 0.0;
  double s = 0.0;
  for (double x : scores) s += x;
  return s / static_cast<double>(scores.size());
}

SoloResult single_agent_eval(const Contestant& c, int races, std::uint64_t seed, const EnvConfig& env) {
  if (races < 1) throw EvalError("solo evaluation needs at least one race");
  EnvConfig solo = env;
  solo.solo = true;
  SoloResult r;
  r.name = c.name;
  auto driver = c.make_driver();
  for (int k = 0; k < races; ++k) {
    const auto result = race::run_race(solo, derive_seed(seed, "solo/" + std::to_string(k)), *driver, nullptr);
    r.scores.push_back(result.scores[0]);
    r.tiles.push_back(result.tiles[0]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Prediction rollouts

namespace {

// The filter's only window onto the recorded episode; every read is logged
// as a read by agent 1 (index 0).
class EpisodeReader {
 public:
  EpisodeReader(const race::EpisodeRecord& ep, race::AccessLog* log) : ep_(&ep), log_(log) {}

  const env::Observation& observation(int agent, int step) const {
    note(race::Stream::observation, agent, step);
    return ep_->observations[agent].at(step);
  }
  race::PolicyAction action(int agent, int step) const {
    if (step < 0) return {};
    note(race::Stream::action, agent, step);
    return ep_->actions[agent].at(step);
  }

 private:
  void note(race::Stream s, int owner, int step) const {
    if (log_) log_->record({0, s, owner, step});
  }
  const race::EpisodeRecord* ep_;
  race::AccessLog* log_;
};

torch::Tensor action_tensor(const race::PolicyAction& a, const torch::TensorOptions& opts) {
  return torch::tensor({a[0], a[1], a[2]}, torch::kFloat32).to(opts.dtype()).view({1, 3});
}

double mse(const torch::Tensor& pred, const torch::Tensor& truth) {
  return (pred - truth).square().mean().item<double>();
}

PredictionRollout rollout(const Agent& agent, const race::EpisodeRecord& episode, int start, int context,
                          int horizon, race::AccessLog* log) {
  if (episode.image_size != agent.arch.image_size)
    throw EvalError("episode image size " + std::to_string(episode.image_size) + " does not match the model's " +
                    std::to_string(agent.arch.image_size));
  if (start < 0 || context < 1 || horizon < 0)
    throw EvalError("prediction needs start >= 0, context >= 1 and horizon >= 0");
  if (start + context + horizon > episode.length())
    throw EvalError("episode has " + std::to_string(episode.length()) + " steps, prediction needs " +
                    std::to_string(start + context + horizon));

  torch::NoGradGuard no_grad;
  const auto& model = *agent.model;
  const auto opts = agent.options();
  const int agents = model.agents();
  const Variant variant = agent.config.variant;
  nn::Sampler sampler = nn::Sampler::deterministic();
  EpisodeReader reader(episode, log);

  PredictionRollout out;
  out.start = start;
  out.context = context;
  out.horizon = horizon;

  auto policy_mode = [&](const worldmodel::JointLatent& s, int i) {
    return agent.policy->act(s.agent(i).features(), behavior::ActMode::mode, 0.0, sampler);
  };
  auto record = [&](const worldmodel::JointLatent& s, int idx) {
    const auto ego = model.decode(s.agent(0)).clamp(0.0, 1.0)[0].to(torch::kFloat32);
    const auto& truth0 = episode.observations[0][idx];
    const auto& truth1 = episode.observations[1][idx];
    out.ego.push_back(ego);
    out.ego_truth.push_back(truth0);
    out.ego_mse.push_back(mse(ego, observation_tensor(truth0, torch::kFloat32)));
    out.opponent_truth.push_back(truth1);
    out.opponent_in_view.push_back(
        opponent_car_centroid(observation_tensor(truth0, torch::kFloat32), agent.config.env).has_value());
    if (agents == 2) {
      const auto opp = model.decode(s.agent(1)).clamp(0.0, 1.0)[0].to(torch::kFloat32);
      out.opponent.push_back(opp);
      out.opponent_mse.push_back(mse(opp, observation_tensor(truth1, torch::kFloat32)));
    }
  };

  auto state = worldmodel::JointLatent::zeros(1, agent.arch, agents, opts);
  torch::Tensor predicted_opponent = torch::zeros({1, 3}, opts);
  for (int k = 0; k < context; ++k) {
    const int idx = start + k;
    const auto own = model.encode(observation_tensor(reader.observation(0, idx), opts).unsqueeze(0));
    const auto own_prev = action_tensor(reader.action(0, idx - 1), opts);
    torch::Tensor embedding, prev;
    switch (variant) {
      case Variant::individual:
        embedding = own.ego;
        prev = own_prev;
        break;
      case Variant::joint: {
        const auto theirs = model.encode(observation_tensor(reader.observation(1, idx), opts).unsqueeze(0));
        embedding = torch::cat({own.ego, theirs.ego}, -1);
        prev = torch::cat({own_prev, action_tensor(reader.action(1, idx - 1), opts)}, -1);
        break;
      }
      case Variant::joint_observer:
        embedding = torch::cat({own.ego, own.opponent}, -1);
        prev = torch::cat({own_prev, predicted_opponent}, -1);
        break;
    }
    state = model.observe_step(state, prev, embedding, sampler).posterior;
    if (agents == 2) predicted_opponent = policy_mode(state, 1);
    record(state, idx);
  }

  // Open loop: agent 1's recorded actions, agent 2's from the policy.
  for (int k = 0; k < horizon; ++k) {
    const int idx = start + context + k;
    auto actions = action_tensor(reader.action(0, idx - 1), opts);
    if (agents == 2) actions = torch::cat({actions, policy_mode(state, 1)}, -1);
    state = model.imagine_step(state, actions, sampler);
    record(state, idx);
  }
  for (const auto& f : out.ego)
    if (!torch::isfinite(f).all().item<bool>()) throw std::domain_error("non-finite prediction");
  return out;
}

void put_frame(std::vector<std::uint8_t>& canvas, int canvas_w, int x0, int y0, const torch::Tensor& chw) {
  const auto img = (chw.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(img.size(0)), w = static_cast<int>(img.size(1));
  const auto* px = img.data_ptr<std::uint8_t>();
  for (int r = 0; r < h; ++r)
    std::copy_n(px + static_cast<std::size_t>(r) * w * 3, static_cast<std::size_t>(w) * 3,
                canvas.begin() + (static_cast<std::size_t>(y0 + r) * canvas_w + x0) * 3);
}

}  // namespace

PredictionRollout open_loop_prediction(const Agent& agent, const race::EpisodeRecord& episode, int start, int context,
                                       int horizon, race::AccessLog* log) {
  return rollout(agent, episode, start, context, horizon, log);
}

PredictionRollout closed_loop_prediction(const Agent& agent, const race::EpisodeRecord& episode, int t,
                                         race::AccessLog* log) {
  if (t < 0) throw EvalError("step must be non-negative");
  return rollout(agent, episode, 0, t + 1, 0, log);
}

void write_prediction_grid(const PredictionRollout& r, const std::filesystem::path& png) {
  if (r.frames() == 0) throw EvalError("empty rollout");
  const int size = static_cast<int>(r.ego.front().size(1));
  constexpr int kGap = 1;
  constexpr int kSplit = 4;  // extra space between context and predictions
  const int n = r.frames();
  const bool split = r.horizon > 0;
  const int width = n * size + (n + 1) * kGap + (split ? kSplit : 0);
  const int rows = r.opponent.empty() ? 2 : 4;
  const int height = rows * size + (rows + 1) * kGap;
  std::vector<std::uint8_t> canvas(static_cast<std::size_t>(width) * height * 3, 255);

  auto x_of = [&](int k) { return kGap + k * (size + kGap) + (split && k >= r.context ? kSplit : 0); };
  auto y_of = [&](int row) { return kGap + row * (size + kGap); };
  for (int k = 0; k < n; ++k) {
    put_frame(canvas, width, x_of(k), y_of(0), r.ego[k]);
    put_frame(canvas, width, x_of(k), y_of(1), observation_tensor(r.ego_truth[k], torch::kFloat32));
    if (rows == 4) {
      put_frame(canvas, width, x_of(k), y_of(2), r.opponent[k]);
      put_frame(canvas, width, x_of(k), y_of(3), observation_tensor(r.opponent_truth[k], torch::kFloat32));
    }
  }
  write_png(png, width, height, canvas);
}

void write_png(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw EvalError("image buffer has the wrong size");
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw EvalError("cannot write " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw EvalError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(r) * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, int& width, int& height) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw EvalError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw EvalError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8)
    png_error(png, "expected 8-bit RGB");
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
  for (int r = 0; r < height; ++r) png_read_row(png, rgb.data() + static_cast<std::size_t>(r) * width * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return rgb;
}

std::optional<std::pair<double, double>> opponent_car_centroid(const torch::Tensor& image, const EnvConfig& env,
                                                               int min_pixels) {
  // Background palette of the renderer.
  static const float kPalette[][3] = {{102, 204, 102}, {102, 230, 102}, {102, 102, 102}, {255, 0, 0}, {255, 255, 255}};
  constexpr float kThreshold = 60.0f;
  const auto img = (image.to(torch::kFloat32).clamp(0.0, 1.0) * 255.0f).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(img.size(0)), w = static_cast<int>(img.size(1));
  const auto a = img.accessor<float, 3>();
  const double px_per_m = w / env.view_size_m;
  const double ego_radius = (0.5 * env::physics::kLength + 0.5) * px_per_m;
  double sr = 0.0, sc = 0.0;
  int count = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double dr = r + 0.5 - h / 2.0, dc = c + 0.5 - w / 2.0;
      if (dr * dr + dc * dc <= ego_radius * ego_radius) continue;
      float best = 1e9f;
      for (const auto& p : kPalette) {
        const float d = std::sqrt((a[r][c][0] - p[0]) * (a[r][c][0] - p[0]) + (a[r][c][1] - p[1]) * (a[r][c][1] - p[1]) +
                                  (a[r][c][2] - p[2]) * (a[r][c][2] - p[2]));
        best = std::min(best, d);
      }
      if (best > kThreshold) {
        sr += r;
        sc += c;
        ++count;
      }
    }
  }
  if (count < min_pixels) return std::nullopt;
  return std::make_pair(sr / count, sc / count);
}

std::string to_json(const PredictionRollout& r) {
  json frames = json::array();
  for (int k = 0; k < r.frames(); ++k) {
    json f{{"step", r.start + k},
           {"phase", k < r.context ? "context" : "prediction"},
           {"ego_mse", r.ego_mse[k]},
           {"opponent_in_view", static_cast<bool>(r.opponent_in_view[k])}};
    if (!r.opponent_mse.empty()) f["opponent_mse"] = r.opponent_mse[k];
    frames.push_back(f);
  }
  return json{{"start", r.start}, {"context", r.context}, {"horizon", r.horizon}, {"frames", frames}}.dump(2);
}

}  // namespace dlc::eval
