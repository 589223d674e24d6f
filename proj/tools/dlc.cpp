// dlc: train agents, run tournaments and export prediction rollouts.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dlc/agent.hpp"
#include "dlc/config.hpp"
#include "dlc/eval.hpp"
#include "dlc/replay.hpp"
#include "dlc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

#ifndef DLC_VERSION
#define DLC_VERSION "unknown"
#endif

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void write_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_manifest(const fs::path& run_dir, const dlc::VariantConfig& cfg, const std::string& started,
                    const std::string& finished) {
  json m{{"code_version", DLC_VERSION},
         {"root_seed", cfg.seed},
         {"config_hash", dlc::config_hash(cfg)},
         {"config", dlc::serialize_config(cfg)},
         {"started", started},
         {"finished", finished.empty() ? json(nullptr) : json(finished)},
         {"files",
          {{"config", "config.cfg"},
           {"episode_metrics", "episodes.jsonl"},
           {"iteration_metrics", "train.jsonl"},
           {"latest_checkpoint", "checkpoints/LATEST"},
           {"replay", "episodes"}}}};
  if (!finished.empty()) {
    std::ifstream latest(run_dir / "checkpoints" / "LATEST");
    std::string name;
    latest >> name;
    m["checkpoint"] = "checkpoints/" + name;
  }
  write_atomically(run_dir / "manifest.json", m.dump(2) + "\n");
}

fs::path default_run_dir(const dlc::VariantConfig& cfg) {
  const char* root = std::getenv("DLC_RUN_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (dlc::to_string(cfg.variant) + "-" + cfg.preset + "-s" + std::to_string(cfg.seed) + "-" +
                 dlc::config_hash(cfg).substr(0, 8));
}

dlc::EnvConfig preset_env(const std::string& preset) {
  dlc::VariantConfig cfg;
  dlc::apply_preset(cfg, preset);
  return cfg.env;
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::vector<std::string>& overrides, std::string run_dir) {
  auto cfg = config_path.empty() ? dlc::parse_config("") : dlc::load_config(config_path);
  dlc::apply_overrides(cfg, overrides);
  if (seed) cfg.seed = *seed;
  dlc::validate(cfg);
  const fs::path dir = run_dir.empty() ? default_run_dir(cfg) : fs::path(run_dir);

  dlc::trainer::Trainer trainer(cfg, dir);
  const std::string started = utc_now();
  write_manifest(dir, cfg, started, "");
  std::cout << "run directory " << dir.string() << "\n";
  trainer.run([&](const dlc::trainer::EpisodeMetrics& m) {
    std::cout << "episode " << m.episode << "/" << cfg.episodes << "  return " << std::fixed << std::setprecision(1)
              << m.returns[0] << " / " << m.returns[1] << "  model " << std::setprecision(2) << m.mean_model_loss
              << "  actor " << m.mean_actor_loss << "  critic " << m.mean_critic_loss << std::endl;
  });
  write_manifest(dir, cfg, started, utc_now());
  return 0;
}

int cmd_tournament(const std::vector<std::string>& specs, int races, std::uint64_t seed, const std::string& preset,
                   const std::string& out) {
  std::vector<dlc::eval::Contestant> contestants;
  for (const auto& s : specs) contestants.push_back(dlc::eval::make_contestant(s));
  const auto result = dlc::eval::round_robin(contestants, races, seed, preset_env(preset));
  std::cout << dlc::eval::to_table(result);
  if (!out.empty()) write_atomically(out, dlc::eval::to_json(result) + "\n");
  return 0;
}

int cmd_eval_solo(const std::string& spec, int races, std::uint64_t seed, const std::string& preset,
                  const std::string& out) {
  const auto c = dlc::eval::make_contestant(spec);
  const auto env = c.env ? *c.env : preset_env(preset);
  const auto r = dlc::eval::single_agent_eval(c, races, seed, env);
  std::cout << std::fixed << std::setprecision(2) << r.name << ": mean score " << r.mean() << " over " << races
            << " solo races\n";
  if (!out.empty()) {
    json j{{"name", r.name}, {"seed", seed}, {"scores", r.scores}, {"tiles", r.tiles}, {"mean", r.mean()}};
    write_atomically(out, j.dump(2) + "\n");
  }
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& episode_path, int t, int context, int horizon,
                bool open_loop, const std::string& out_dir) {
  const auto agent = dlc::load_agent(dlc::trainer::resolve_checkpoint(checkpoint));
  const auto episode = dlc::replay::load_episode(episode_path);
  dlc::race::AccessLog log;
  const auto r = open_loop ? dlc::eval::open_loop_prediction(agent, episode, t, context, horizon, &log)
                           : dlc::eval::closed_loop_prediction(agent, episode, t, &log);
  int late_reads = 0;
  const int last_context = r.start + r.context - 1;
  for (const auto& rec : log.records())
    if (rec.stream == dlc::race::Stream::observation && rec.step > last_context) ++late_reads;

  const fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  fs::create_directories(dir);
  const std::string stem = std::string(open_loop ? "open" : "closed") + "-t" + std::to_string(t);
  dlc::eval::write_prediction_grid(r, dir / (stem + ".png"));
  auto report = json::parse(dlc::eval::to_json(r));
  report["observation_reads"] = log.count(0, dlc::race::Stream::observation, 0) +
                                log.count(0, dlc::race::Stream::observation, 1);
  report["post_context_observation_reads"] = late_reads;
  write_atomically(dir / (stem + ".json"), report.dump(2) + "\n");
  std::cout << r.frames() << " frames per view (" << r.context << " context + " << r.horizon << " predicted), "
            << late_reads << " post-context observation reads -> " << (dir / (stem + ".png")).string() << "\n";
  return late_reads == 0 ? 0 : kRuntimeError;
}

int cmd_export_episode(const std::string& first_spec, const std::string& second_spec, std::uint64_t seed,
                       const std::string& preset, const std::string& out) {
  const auto first = dlc::eval::make_contestant(first_spec);
  const auto second = dlc::eval::make_contestant(second_spec.empty() ? first_spec : second_spec);
  const auto env = dlc::eval::common_env({first, second}, preset_env(preset));
  auto d1 = first.make_driver();
  auto d2 = second.make_driver();
  auto result = dlc::race::run_race(env, seed, *d1, d2.get(), {.record = true});
  dlc::replay::save_episode(*result.episode, out);
  std::cout << "episode of " << result.steps << " steps, scores " << std::fixed << std::setprecision(1)
            << result.scores[0] << " / " << result.scores[1] << " -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep latent competition: train, race and inspect world-model agents", "dlc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DLC_VERSION);

  std::string config_path, run_dir, preset = "paper", out, episode, checkpoint, second;
  std::vector<std::string> overrides, checkpoints;
  std::uint64_t seed_value = 0;
  int races = 100, t = 0, context = 5, horizon = 25;

  auto* train = app.add_subcommand("train", "train an agent (resumes an interrupted run directory)");
  train->add_option("--config", config_path, "config file (key = value)")->check(CLI::ExistingFile);
  auto* seed_opt = train->add_option("--seed", seed_value, "root seed, overrides the config");
  train->add_option("--set", overrides, "config override key=value (repeatable)");
  train->add_option("--run-dir", run_dir, "run directory (default: $DLC_RUN_ROOT/<variant>-<preset>-s<seed>-<hash>)");

  auto* tournament = app.add_subcommand("tournament", "round-robin tournament between checkpoints or built-ins");
  tournament->add_option("--checkpoints", checkpoints, "run/checkpoint dirs, scripted:fast, scripted:slow or random")
      ->required()
      ->expected(2, -1);
  tournament->add_option("--races", races, "races per pairing")->check(CLI::PositiveNumber);
  tournament->add_option("--seed", seed_value, "tournament seed");
  tournament->add_option("--preset", preset, "environment preset when no checkpoint defines one");
  tournament->add_option("--out", out, "JSON report path");

  auto* solo = app.add_subcommand("eval-solo", "mean score in races without an opponent");
  solo->add_option("--checkpoint", checkpoint, "run/checkpoint dir or built-in")->required();
  solo->add_option("--races", races, "number of races")->check(CLI::PositiveNumber);
  solo->add_option("--seed", seed_value, "evaluation seed");
  solo->add_option("--preset", preset, "environment preset for built-ins");
  solo->add_option("--out", out, "JSON report path");

  auto* open = app.add_subcommand("predict-open", "context filtering then open-loop prediction of both views");
  auto* closed = app.add_subcommand("predict-closed", "filtered reconstructions of both views up to step t");
  for (auto* sub : {open, closed}) {
    sub->add_option("--checkpoint", checkpoint, "run or checkpoint directory")->required();
    sub->add_option("--episode", episode, "episode file")->required()->check(CLI::ExistingFile);
    sub->add_option("--t", t, "first context step (open) or last filtered step (closed)")->required();
    sub->add_option("--out", out, "output directory");
  }
  open->add_option("--context", context, "context frames C")->check(CLI::PositiveNumber);
  open->add_option("--horizon", horizon, "predicted frames P")->check(CLI::NonNegativeNumber);

  auto* exporter = app.add_subcommand("export-episode", "record one race to an episode file");
  exporter->add_option("--checkpoint", checkpoint, "driver of car 1 (checkpoint or built-in)")->required();
  exporter->add_option("--opponent", second, "driver of car 2 (default: same as car 1)");
  exporter->add_option("--seed", seed_value, "race seed");
  exporter->add_option("--preset", preset, "environment preset for built-ins");
  exporter->add_option("--out", out, "episode file")->required();

  if (argc < 2) {
    std::cerr << app.help();
    return kUsageError;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (*train)
      return cmd_train(config_path, *seed_opt ? std::optional<std::uint64_t>(seed_value) : std::nullopt, overrides,
                       run_dir);
    if (*tournament) return cmd_tournament(checkpoints, races, seed_value, preset, out);
    if (*solo) return cmd_eval_solo(checkpoint, races, seed_value, preset, out);
    if (*open) return cmd_predict(checkpoint, episode, t, context, horizon, true, out);
    if (*closed) return cmd_predict(checkpoint, episode, t, 0, 0, false, out);
    if (*exporter) return cmd_export_episode(checkpoint, second, seed_value, preset, out);
  } catch (const dlc::ConfigError& e) {
    std::cerr << "invalid configuration:\n";
    for (const auto& p : e.problems()) std::cerr << "  - " << p << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
