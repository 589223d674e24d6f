#include "dlc/agent.hpp"

#include <cstring>
#include <fstream>

namespace dlc {

namespace {

constexpr char kParamMagic[8] = {'D', 'L', 'C', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kParamVersion = 1;

std::vector<std::pair<std::string, torch::Tensor>> named_tensors(const Agent& agent) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto add = [&out](const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& p : m.named_parameters()) out.emplace_back(prefix + p.key(), p.value());
  };
  add("model.", *agent.model);
  add("policy.", *agent.policy);
  add("value.", *agent.value);
  return out;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& where) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParameterError("truncated parameter file at " + where);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& where) {
  const auto n = get<std::uint32_t>(in, where);
  if (n > (1u << 20)) throw ParameterError("implausible string length in parameter file at " + where);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw ParameterError("truncated parameter file at " + where);
  return s;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t z = root ^ fnv1a64(std::string(stream));
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Agent make_agent(const VariantConfig& config) {
  Agent a;
  a.config = config;
  a.arch = worldmodel::architecture_preset(config.preset);
  a.model = worldmodel::WorldModel(a.arch, config.agents(), config.observer());
  a.policy = behavior::ActionModel(a.arch, behavior::ActionModelOptions{config.action_mean_scale,
                                                                        config.action_init_std,
                                                                        config.action_min_std});
  a.value = behavior::ValueModel(a.arch);
  const auto dtype = config.double_precision ? torch::kFloat64 : torch::kFloat32;
  a.model->to(dtype);
  a.policy->to(dtype);
  a.value->to(dtype);
  nn::initialize_parameters(*a.model, derive_seed(config.seed, "init/model"));
  nn::initialize_parameters(*a.policy, derive_seed(config.seed, "init/policy"));
  nn::initialize_parameters(*a.value, derive_seed(config.seed, "init/value"));
  return a;
}

torch::Tensor observation_tensor(const env::Observation& obs, const torch::TensorOptions& options) {
  auto bytes = torch::from_blob(const_cast<std::uint8_t*>(obs.pixels.data()), {obs.height, obs.width, 3}, torch::kUInt8);
  return bytes.permute({2, 0, 1}).to(options.dtype()).div(255.0);
}

void save_parameters(const Agent& agent, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParameterError("cannot write " + path.string());
  out.write(kParamMagic, sizeof(kParamMagic));
  put(out, kParamVersion);
  put_string(out, config_hash(agent.config));
  const auto tensors = named_tensors(agent);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_string(out, name);
    const auto c = t.detach().contiguous();
    put<std::uint8_t>(out, c.scalar_type() == torch::kFloat64 ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dim()));
    for (auto d : c.sizes()) put<std::int64_t>(out, d);
    out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.nbytes()));
  }
  if (!out) throw ParameterError("failed writing " + path.string());
}

void load_parameters(Agent& agent, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParameterError("cannot open " + path.string());
  char magic[sizeof(kParamMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0)
    throw ParameterError(path.string() + " is not a parameter file");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kParamVersion) throw ParameterError("unsupported parameter file version " + std::to_string(version));
  const auto hash = get_string(in, "config hash");
  if (hash != config_hash(agent.config))
    throw ParameterError("parameter file was written for config " + hash + ", not " + config_hash(agent.config));

  auto tensors = named_tensors(agent);
  const auto count = get<std::uint32_t>(in, "count");
  if (count != tensors.size())
    throw ParameterError("parameter file holds " + std::to_string(count) + " tensors, expected " +
                         std::to_string(tensors.size()));
  torch::NoGradGuard no_grad;
  for (auto& [name, t] : tensors) {
    const auto stored = get_string(in, "name");
    if (stored != name) throw ParameterError("expected tensor " + name + ", found " + stored);
    const bool f64 = get<std::uint8_t>(in, name) == 1;
    const auto dims = get<std::uint32_t>(in, name);
    std::vector<std::int64_t> shape(dims);
    for (auto& d : shape) d = get<std::int64_t>(in, name);
    if (shape != t.sizes().vec()) throw ParameterError("shape mismatch for " + name);
    auto buf = torch::empty(shape, f64 ? torch::kFloat64 : torch::kFloat32);
    if (!in.read(static_cast<char*>(buf.data_ptr()), static_cast<std::streamsize>(buf.nbytes())))
      throw ParameterError("truncated data for " + name);
    t.copy_(buf);
  }
}

Agent load_agent(const std::filesystem::path& checkpoint_dir) {
  Agent a = make_agent(load_config((checkpoint_dir / "config.cfg").string()));
  load_parameters(a, checkpoint_dir / "params.bin");
  return a;
}

LatentDriver::LatentDriver(const Agent& agent, behavior::ActMode mode, double explore_noise, std::string label)
    : agent_(&agent), mode_(mode), explore_noise_(explore_noise), label_(std::move(label)) {
  if (label_.empty()) label_ = to_string(agent.config.variant);
}

void LatentDriver::begin(int self, std::uint64_t seed) {
  self_ = self;
  sampler_ = mode_ == behavior::ActMode::sample ? nn::Sampler(seed) : nn::Sampler::deterministic();
  state_ = worldmodel::JointLatent::zeros(1, agent_->arch, agent_->model->agents(), agent_->options());
  own_last_ = {};
  predicted_opponent_ = {};
}

torch::Tensor LatentDriver::to_tensor(const race::PolicyAction& a) const {
  return torch::tensor({a[0], a[1], a[2]}, torch::kFloat32).to(agent_->options().dtype()).view({1, 3});
}

race::PolicyAction LatentDriver::act(const race::StepView& view) {
  torch::NoGradGuard no_grad;
  const auto& model = *agent_->model;
  const auto opts = agent_->options();
  const int other = 1 - self_;
  const auto own = model.encode(observation_tensor(view.observation(self_), opts).unsqueeze(0));

  torch::Tensor embedding, prev_actions;
  switch (agent_->config.variant) {
    case Variant::individual:
      embedding = own.ego;
      prev_actions = to_tensor(own_last_);
      break;
    case Variant::joint: {
      const auto theirs = model.encode(observation_tensor(view.observation(other), opts).unsqueeze(0));
      embedding = torch::cat({own.ego, theirs.ego}, -1);
      prev_actions = torch::cat({to_tensor(own_last_), to_tensor(view.step() == 0 ? race::PolicyAction{}
                                                                                   : view.last_action(other))},
                                -1);
      break;
    }
    case Variant::joint_observer:
      embedding = torch::cat({own.ego, own.opponent}, -1);
      prev_actions = torch::cat({to_tensor(own_last_), to_tensor(predicted_opponent_)}, -1);
      break;
  }
  state_ = model.observe_step(state_, prev_actions, embedding, sampler_).posterior;
  if (!torch::isfinite(state_.stochastic).all().item<bool>() || !torch::isfinite(state_.deterministic).all().item<bool>())
    throw std::domain_error("non-finite latent state at step " + std::to_string(view.step()));

  auto extract = [](const torch::Tensor& t) {
    const auto f = t.to(torch::kFloat32).contiguous();
    return race::PolicyAction{f[0][0].item<float>(), f[0][1].item<float>(), f[0][2].item<float>()};
  };
  const auto action = agent_->policy->act(state_.agent(0).features(), mode_, explore_noise_, sampler_);
  own_last_ = extract(action);
  if (agent_->config.observer()) {
    // The opponent's response is predicted with the mode of the shared policy.
    predicted_opponent_ =
        extract(agent_->policy->act(state_.agent(1).features(), behavior::ActMode::mode, 0.0, sampler_));
  }
  return own_last_;
}

}  // namespace dlc
