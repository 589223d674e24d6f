#include "dlc/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace dlc::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string numbered(const char* prefix, int n, const char* suffix = "") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06d%s", prefix, n, suffix);
  return buf;
}

void write_text_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw TrainError("cannot write " + tmp.string());
    out << text;
    if (!out) throw TrainError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uintmax_t size_or_zero(const fs::path& p) { return fs::exists(p) ? fs::file_size(p) : 0; }

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite ") + what);
  return v;
}

}  // namespace

std::string to_json_line(const IterationMetrics& m) {
  json j = {{"iteration", m.iteration},
            {"episode", m.episode},
            {"model_loss", m.model_loss},
            {"image_ll", m.image_ll},
            {"reward_ll", m.reward_ll},
            {"divergence", m.divergence},
            {"model_grad_norm", m.model_grad_norm},
            {"actor_loss", m.behavior.actor_loss},
            {"critic_loss", m.behavior.critic_loss},
            {"imagined_return", m.behavior.mean_return},
            {"actor_grad_norm", m.behavior.actor_grad_norm},
            {"value_grad_norm", m.behavior.value_grad_norm}};
  return j.dump();
}

std::string to_json_line(const EpisodeMetrics& m) {
  json j = {{"episode", m.episode},
            {"env_steps", m.env_steps},
            {"steps", m.steps},
            {"returns", m.returns},
            {"win_margin", m.returns[0] - m.returns[1]},
            {"mean_model_loss", m.mean_model_loss},
            {"mean_actor_loss", m.mean_actor_loss},
            {"mean_critic_loss", m.mean_critic_loss}};
  return j.dump();
}

fs::path resolve_checkpoint(const fs::path& path) {
  if (fs::exists(path / "params.bin")) return path;
  const fs::path latest = path / "checkpoints" / "LATEST";
  if (!fs::exists(latest)) throw TrainError("no checkpoint found at " + path.string());
  std::string name = read_text(latest);
  while (!name.empty() && std::isspace(static_cast<unsigned char>(name.back()))) name.pop_back();
  const fs::path dir = path / "checkpoints" / name;
  if (!fs::exists(dir / "params.bin")) throw TrainError("LATEST names a missing checkpoint: " + dir.string());
  return dir;
}

Trainer::Trainer(VariantConfig config, fs::path run_dir)
    : config_(std::move(config)),
      run_dir_(std::move(run_dir)),
      agent_(make_agent(config_)),
      memory_(config_.replay_capacity),
      sampler_(derive_seed(config_.seed, "train/sampler")),
      replay_rng_(derive_seed(config_.seed, "train/replay")) {
  validate(config_);
  model_opt_ = std::make_unique<torch::optim::Adam>(
      agent_.model->parameters(), torch::optim::AdamOptions(config_.model_lr).eps(config_.adam_eps));
  behavior::BehaviorOptions bo;
  bo.horizon = config_.horizon;
  bo.gamma = config_.gamma;
  bo.lambda = config_.lambda;
  bo.actor_lr = config_.actor_lr;
  bo.value_lr = config_.value_lr;
  bo.adam_eps = config_.adam_eps;
  bo.grad_clip = config_.grad_clip;
  learner_ = std::make_unique<behavior::BehaviorLearner>(agent_.policy, agent_.value, bo);

  fs::create_directories(run_dir_ / "episodes");
  fs::create_directories(run_dir_ / "checkpoints");
  const fs::path cfg_path = run_dir_ / "config.cfg";
  const std::string text = serialize_config(config_);
  if (fs::exists(cfg_path)) {
    if (config_hash(load_config(cfg_path.string())) != config_hash(config_))
      throw TrainError("run directory " + run_dir_.string() + " belongs to a different config");
  } else {
    write_text_atomically(cfg_path, text);
  }
}

void Trainer::add_episode(race::EpisodeRecord episode, const std::string& file_name) {
  replay::save_episode(episode, run_dir_ / "episodes" / file_name);
  episode_files_.push_back(file_name);
  memory_.add(std::make_shared<const race::EpisodeRecord>(std::move(episode)));
}

void Trainer::seed_memory(int n_episodes) {
  race::RandomDriver a, b;
  EnvConfig env = config_.env;
  env.solo = false;
  for (int k = 0; k < n_episodes; ++k) {
    const auto seed = derive_seed(config_.seed, numbered("seed-episode/", k));
    auto result = race::run_race(env, seed, a, &b, {.record = true});
    add_episode(std::move(*result.episode), numbered("seed-", k, ".bin"));
  }
}

race::EpisodeRecord Trainer::collect_episode(std::uint64_t env_seed, race::AccessLog* log) const {
  LatentDriver first(agent_, behavior::ActMode::sample, config_.explore_noise);
  LatentDriver second(agent_, behavior::ActMode::sample, config_.explore_noise);
  EnvConfig env = config_.env;
  env.solo = false;
  auto result = race::run_race(env, env_seed, first, &second, {.record = true, .log = log});
  return std::move(*result.episode);
}

IterationMetrics Trainer::train_iteration() {
  const auto windows = memory_.sample_windows(config_.batch_size, config_.sequence_length, replay_rng_);
  return train_on_batch(memory_.make_batch(windows, config_.sequence_length, agent_.options()));
}

IterationMetrics Trainer::train_on_batch(const worldmodel::SequenceBatch& batch) {
  auto& model = *agent_.model;
  model_opt_->zero_grad();
  const auto rollout = worldmodel::posterior_rollout(model, batch, sampler_);
  const auto loss = worldmodel::representation_loss(model, batch, rollout, config_.beta);
  loss.loss.backward();
  behavior::require_finite_gradients(model, "model");

  // Every posterior state of the batch starts an imagined rollout.
  const auto start = rollout.sources.front().flattened(model.agents()).detached();
  auto stats = learner_->compute_gradients(model, start, sampler_);

  IterationMetrics m;
  m.model_loss = finite_or_throw(loss.loss.item<double>(), "model loss");
  m.model_grad_norm = behavior::clip_gradients(model, config_.grad_clip);
  model_opt_->step();
  learner_->apply_gradients(stats);

  m.iteration = ++iterations_done_;
  m.episode = episodes_done_;
  m.image_ll = loss.image_ll;
  m.reward_ll = loss.reward_ll;
  m.divergence = loss.divergence;
  m.behavior = stats;
  return m;
}

void Trainer::append_metrics(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw TrainError("cannot append to " + file.string());
  out << line << '\n';
}

void Trainer::run(const std::function<void(const EpisodeMetrics&)>& on_episode) {
  if (!resume()) {
    if (config_.episodes > 0 && config_.seed_episodes < 1)
      throw TrainError("training needs at least one seed episode in the replay memory");
    seed_memory(config_.seed_episodes);
    save_checkpoint();
  }
  while (episodes_done_ < config_.episodes) {
    const int k = episodes_done_ + 1;
    auto episode = collect_episode(derive_seed(config_.seed, numbered("episode/", k)));
    EpisodeMetrics em;
    em.episode = k;
    em.steps = episode.length();
    em.returns = {episode.total_reward(0), episode.total_reward(1)};
    env_steps_ += episode.length();
    em.env_steps = env_steps_;
    add_episode(std::move(episode), numbered("ep-", k, ".bin"));

    for (int s = 0; s < config_.train_iterations; ++s) {
      const auto m = train_iteration();
      append_metrics(run_dir_ / "train.jsonl", to_json_line(m));
      em.mean_model_loss += m.model_loss / config_.train_iterations;
      em.mean_actor_loss += m.behavior.actor_loss / config_.train_iterations;
      em.mean_critic_loss += m.behavior.critic_loss / config_.train_iterations;
    }
    episodes_done_ = k;
    append_metrics(run_dir_ / "episodes.jsonl", to_json_line(em));
    save_checkpoint();
    if (on_episode) on_episode(em);
  }
}

fs::path Trainer::save_checkpoint() {
  const fs::path root = run_dir_ / "checkpoints";
  const std::string name = numbered("ckpt-", episodes_done_);
  const fs::path tmp = root / (name + ".tmp");
  const fs::path dir = root / name;
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  write_text_atomically(tmp / "config.cfg", serialize_config(config_));
  save_parameters(agent_, tmp / "params.bin");
  torch::save(*model_opt_, (tmp / "optim-model.pt").string());
  torch::save(learner_->actor_optimizer(), (tmp / "optim-actor.pt").string());
  torch::save(learner_->value_optimizer(), (tmp / "optim-value.pt").string());
  torch::save(sampler_.state(), (tmp / "sampler.pt").string());

  std::ostringstream rng;
  rng << replay_rng_;
  json state = {{"config_hash", config_hash(config_)},
                {"episodes_done", episodes_done_},
                {"iterations_done", iterations_done_},
                {"env_steps", env_steps_},
                {"replay_rng", rng.str()},
                {"episode_files", episode_files_},
                {"evicted", memory_.evicted()},
                {"metrics_bytes",
                 {{"train", size_or_zero(run_dir_ / "train.jsonl")},
                  {"episodes", size_or_zero(run_dir_ / "episodes.jsonl")}}}};
  write_text_atomically(tmp / "state.json", state.dump(2));

  fs::remove_all(dir);
  fs::rename(tmp, dir);
  write_text_atomically(root / "LATEST", name + "\n");
  // Keep the previous checkpoint as a fallback, drop anything older.
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto n = entry.path().filename().string();
    if (entry.is_directory() && n.starts_with("ckpt-") && n != name && n != numbered("ckpt-", episodes_done_ - 1))
      fs::remove_all(entry.path());
  }
  return dir;
}

bool Trainer::resume() {
  fs::path dir;
  try {
    dir = resolve_checkpoint(run_dir_);
  } catch (const TrainError&) {
    return false;
  }
  const json state = json::parse(read_text(dir / "state.json"));
  if (state.at("config_hash").get<std::string>() != config_hash(config_))
    throw TrainError("checkpoint " + dir.string() + " was written for a different config");

  load_parameters(agent_, dir / "params.bin");
  torch::load(*model_opt_, (dir / "optim-model.pt").string());
  torch::load(learner_->actor_optimizer(), (dir / "optim-actor.pt").string());
  torch::load(learner_->value_optimizer(), (dir / "optim-value.pt").string());
  torch::Tensor sampler_state;
  torch::load(sampler_state, (dir / "sampler.pt").string());
  sampler_.set_state(sampler_state);
  std::istringstream rng(state.at("replay_rng").get<std::string>());
  rng >> replay_rng_;

  episodes_done_ = state.at("episodes_done");
  iterations_done_ = state.at("iterations_done");
  env_steps_ = state.at("env_steps");
  memory_ = replay::ReplayMemory(config_.replay_capacity);
  episode_files_.clear();
  for (const auto& f : state.at("episode_files")) {
    const std::string name = f.get<std::string>();
    episode_files_.push_back(name);
    memory_.add(std::make_shared<const race::EpisodeRecord>(replay::load_episode(run_dir_ / "episodes" / name)));
  }
  // Anything written after the checkpoint is discarded so the resumed run
  // appends exactly where the checkpoint left off.
  for (const auto& [key, file] : {std::pair{"train", "train.jsonl"}, {"episodes", "episodes.jsonl"}}) {
    const auto bytes = state.at("metrics_bytes").at(key).get<std::uintmax_t>();
    const fs::path p = run_dir_ / file;
    if (fs::exists(p)) fs::resize_file(p, bytes);
  }
  for (const auto& entry : fs::directory_iterator(run_dir_ / "episodes")) {
    const auto n = entry.path().filename().string();
    if (std::find(episode_files_.begin(), episode_files_.end(), n) == episode_files_.end()) fs::remove(entry.path());
  }
  return true;
}

}  // namespace dlc::trainer
