#include "dlc/replay.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace dlc::replay {

namespace {

constexpr char kMagic[8] = {'D', 'L', 'C', 'E', 'P', 'I', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

// Laid out without padding so the file bytes are fully determined.
struct Header {
  std::uint64_t env_seed;
  std::uint64_t raw_bytes;
  std::uint64_t compressed_bytes;
  std::uint32_t version;
  std::int32_t image_size;
  std::int32_t length;
  std::int32_t reserved;
};
static_assert(sizeof(Header) == 40);

template <typename T>
void append(std::vector<unsigned char>& buf, const T* data, std::size_t count) {
  const auto* p = reinterpret_cast<const unsigned char*>(data);
  buf.insert(buf.end(), p, p + count * sizeof(T));
}

template <typename T>
void take(const std::vector<unsigned char>& buf, std::size_t& pos, T* out, std::size_t count) {
  const std::size_t n = count * sizeof(T);
  if (pos + n > buf.size()) throw ReplayError("episode payload is shorter than its header claims");
  std::memcpy(out, buf.data() + pos, n);
  pos += n;
}

}  // namespace

void save_episode(const EpisodeRecord& ep, const std::filesystem::path& path) {
  const int len = ep.length();
  const std::size_t frame = static_cast<std::size_t>(ep.image_size) * ep.image_size * 3;
  std::vector<unsigned char> raw;
  raw.reserve(2 * len * (frame + 3 * sizeof(float) + sizeof(double)));
  for (int i = 0; i < 2; ++i) {
    if (ep.observations[i].size() != static_cast<std::size_t>(len) || ep.actions[i].size() != static_cast<std::size_t>(len) ||
        ep.rewards[i].size() != static_cast<std::size_t>(len))
      throw ReplayError("episode streams have different lengths");
    for (const auto& o : ep.observations[i]) {
      if (o.pixels.size() != frame) throw ReplayError("observation size does not match the episode image size");
      append(raw, o.pixels.data(), frame);
    }
    for (const auto& a : ep.actions[i]) append(raw, a.data(), a.size());
    append(raw, ep.rewards[i].data(), ep.rewards[i].size());
  }
  uLongf packed_size = compressBound(raw.size());
  std::vector<unsigned char> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), raw.size(), Z_DEFAULT_COMPRESSION) != Z_OK)
    throw ReplayError("zlib compression failed");

  const Header h{ep.env_seed, raw.size(), packed_size, kVersion, ep.image_size, len, 0};
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ReplayError("cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    out.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed_size));
    if (!out) throw ReplayError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

EpisodeRecord load_episode(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReplayError("cannot open " + path.string());
  char magic[sizeof(kMagic)];
  Header h{};
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ReplayError(path.string() + " is not an episode file");
  if (!in.read(reinterpret_cast<char*>(&h), sizeof(h))) throw ReplayError("truncated episode header in " + path.string());
  if (h.version != kVersion) throw ReplayError("unsupported episode version " + std::to_string(h.version));
  if (h.image_size <= 0 || h.length < 0 || h.compressed_bytes > (1ull << 34))
    throw ReplayError("corrupt episode header in " + path.string());
  std::vector<unsigned char> packed(h.compressed_bytes);
  if (!in.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size())))
    throw ReplayError("truncated episode payload in " + path.string());
  std::vector<unsigned char> raw(h.raw_bytes);
  uLongf raw_size = h.raw_bytes;
  if (uncompress(raw.data(), &raw_size, packed.data(), packed.size()) != Z_OK || raw_size != h.raw_bytes)
    throw ReplayError("corrupt episode payload in " + path.string());

  EpisodeRecord ep;
  ep.env_seed = h.env_seed;
  ep.image_size = h.image_size;
  const std::size_t frame = static_cast<std::size_t>(h.image_size) * h.image_size * 3;
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) {
    ep.observations[i].resize(h.length, env::Observation(h.image_size, h.image_size));
    for (auto& o : ep.observations[i]) take(raw, pos, o.pixels.data(), frame);
    ep.actions[i].resize(h.length);
    for (auto& a : ep.actions[i]) take(raw, pos, a.data(), a.size());
    ep.rewards[i].resize(h.length);
    take(raw, pos, ep.rewards[i].data(), ep.rewards[i].size());
  }
  if (pos != raw.size()) throw ReplayError("episode payload has trailing bytes");
  return ep;
}

void ReplayMemory::add(std::shared_ptr<const EpisodeRecord> episode) {
  if (!episode) throw ReplayError("null episode");
  if (!episodes_.empty() && episode->image_size != episodes_.front()->image_size)
    throw ReplayError("episode image size differs from the memory's");
  episodes_.push_back(std::move(episode));
  while (capacity_ > 0 && static_cast<int>(episodes_.size()) > capacity_) {
    episodes_.pop_front();
    ++evicted_;
  }
}

std::int64_t ReplayMemory::total_steps() const {
  std::int64_t n = 0;
  for (const auto& e : episodes_) n += e->length();
  return n;
}

std::int64_t ReplayMemory::valid_windows(int length) const {
  std::int64_t n = 0;
  for (const auto& e : episodes_) n += std::max(0, e->length() - length + 1);
  return n;
}

std::vector<Window> ReplayMemory::sample_windows(int count, int length, std::mt19937_64& rng) const {
  if (length < 1) throw ReplayError("window length must be positive");
  const std::int64_t total = valid_windows(length);
  if (total == 0)
    throw ReplayError("replay memory holds no episode with at least " + std::to_string(length) + " steps");
  std::uniform_int_distribution<std::int64_t> pick(0, total - 1);
  std::vector<Window> out;
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    std::int64_t r = pick(rng);
    for (std::size_t e = 0; e < episodes_.size(); ++e) {
      const std::int64_t n = std::max(0, episodes_[e]->length() - length + 1);
      if (r < n) {
        out.push_back({e, static_cast<int>(r)});
        break;
      }
      r -= n;
    }
  }
  return out;
}

worldmodel::SequenceBatch ReplayMemory::make_batch(const std::vector<Window>& windows, int length,
                                                   const torch::TensorOptions& options) const {
  if (windows.empty()) throw ReplayError("empty batch");
  const auto b = static_cast<std::int64_t>(windows.size());
  const int size = episodes_.at(windows[0].episode)->image_size;
  const std::size_t frame = static_cast<std::size_t>(size) * size * 3;

  worldmodel::SequenceBatch batch;
  batch.is_first = torch::zeros({length, b}, torch::kBool);
  for (int i = 0; i < 2; ++i) {
    auto pixels = torch::empty({length, b, size, size, 3}, torch::kUInt8);
    auto actions = torch::zeros({length, b, 3}, torch::kFloat32);
    auto rewards = torch::zeros({length, b}, torch::kFloat64);
    auto* px = pixels.data_ptr<std::uint8_t>();
    auto act = actions.accessor<float, 3>();
    auto rew = rewards.accessor<double, 2>();
    for (std::int64_t k = 0; k < b; ++k) {
      const auto& w = windows[k];
      const auto& ep = *episodes_.at(w.episode);
      if (w.offset < 0 || w.offset + length > ep.length()) throw ReplayError("window runs past its episode");
      for (int t = 0; t < length; ++t) {
        const int idx = w.offset + t;
        std::memcpy(px + (static_cast<std::size_t>(t) * b + k) * frame, ep.observations[i][idx].pixels.data(), frame);
        if (idx > 0) {
          for (int j = 0; j < 3; ++j) act[t][k][j] = ep.actions[i][idx - 1][j];
          rew[t][k] = ep.rewards[i][idx - 1];
        } else if (i == 0) {
          batch.is_first[t][k] = true;
        }
      }
    }
    batch.observations[i] = pixels.permute({0, 1, 4, 2, 3}).to(options.dtype()).div_(255.0);
    batch.prev_actions[i] = actions.to(options.dtype());
    batch.rewards[i] = rewards.to(options.dtype());
  }
  return batch;
}

}  // namespace dlc::replay
