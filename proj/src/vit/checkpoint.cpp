#include "mem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace mem {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native little-endian order");

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.value;
  }
  throw CheckpointError("checkpoint has no array named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void Checkpoint::put(std::string name, Tensor value) {
  for (auto& a : arrays) {
    if (a.name == name) {
      a.value = value.detached();
      return;
    }
  }
  arrays.push_back({std::move(name), value.detached()});
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["config"] = ckpt.config;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    header["arrays"].push_back({{"name", a.name}, {"shape", a.value.shape()}, {"offset", offset}});
    offset += a.value.numel();
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : ckpt.arrays) {
    out.write(reinterpret_cast<const char*>(a.value.data().data()),
              static_cast<std::streamsize>(a.value.numel() * sizeof(double)));
  }
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 30)) throw CheckpointError("corrupt checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (header.value("format_version", 0) != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format version");
  }
  Checkpoint ckpt;
  ckpt.config = header.value("config", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data(shape_numel(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw CheckpointError("truncated checkpoint payload");
    ckpt.arrays.push_back({entry.at("name").get<std::string>(), Tensor(shape, std::move(data))});
  }
  return ckpt;
}

void add_vit_arrays(Checkpoint& ckpt, const ViTWeights& w, const std::string& prefix) {
  w.for_each([&](const std::string& name, const Tensor& t) { ckpt.put(prefix + name, t); });
}

ViTWeights vit_from_arrays(const Checkpoint& ckpt, const ViTConfig& cfg,
                           const std::string& prefix) {
  ViTWeights w = ViTWeights::random(cfg, 0);
  w.for_each_mut([&](const std::string& name, Tensor& t) { t = ckpt.get(prefix + name); });
  w.check(cfg);
  return w;
}

}  // namespace mem
