#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mem/tensor.hpp"
#include "mem/vit.hpp"

namespace mem {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Tensor value;
};

/// Self-describing weight file:
///   8 bytes   magic "MEMCKPT1"
///   8 bytes   header length H (little-endian u64)
///   H bytes   JSON header {"format_version", "config", "arrays": [{name, shape, offset}]}
///   rest      float64 little-endian payload, arrays back to back
/// Doubles are copied verbatim so save/load round-trips bit-exactly.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
  void put(std::string name, Tensor value);
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// ViT weights under their canonical names, prefixed (e.g. "encoder.").
void add_vit_arrays(Checkpoint& ckpt, const ViTWeights& w, const std::string& prefix = "");
ViTWeights vit_from_arrays(const Checkpoint& ckpt, const ViTConfig& cfg,
                           const std::string& prefix = "");

}  // namespace mem
