#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mem/attention.hpp"
#include "mem/tensor.hpp"

namespace mem {

struct ViTConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t layers = 8;
  std::size_t heads = 4;
  std::size_t model_dim = 64;
  std::size_t mlp_dim = 256;
  std::size_t channels = 4;

  /// 16x16 images, 4x4 patches (n = 16), L = 8, A = 4, d = 64, mlp 256.
  static ViTConfig reference() { return {}; }

  std::size_t patches_per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const;

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);

struct LayerWeights {
  Tensor norm1;   // [d], shared by every attention sub-block of the layer
  Tensor wq, wk, wv, wo;  // [d x d]; head a owns column block a of q/k/v
  Tensor norm2;   // [d]
  Tensor mlp_w1;  // [mlp x d]
  Tensor mlp_b1;  // [mlp]
  Tensor mlp_w2;  // [d x mlp]
  Tensor mlp_b2;  // [d]
};

struct ViTWeights {
  Tensor patch_w;    // [d x patch_dim]
  Tensor patch_b;    // [d]
  Tensor pos_embed;  // [n x d], learned, one row per patch index
  std::vector<LayerWeights> layers;
  Tensor final_norm;  // [d]

  /// Seeded initialisation. With `perturb_all`, norm scales and biases are
  /// also randomised so that tests do not sit on the identity-like start point.
  static ViTWeights random(const ViTConfig& cfg, std::uint64_t seed, bool perturb_all = false);

  /// Visits every parameter in a fixed order with a stable name.
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn);

  std::size_t parameter_count() const;
  /// Copy whose parameters are fresh grad leaves.
  ViTWeights requiring_grad() const;
  void check(const ViTConfig& cfg) const;
};

/// Closed form count of ViT parameters for a config.
std::size_t vit_parameter_count(const ViTConfig& cfg);

/// [channels x H x W] -> [n x patch_size^2 * channels]; patches row-major,
/// pixels row-major within a patch, channel-major across the patch vector.
Tensor patchify(const Tensor& image, const ViTConfig& cfg);

/// Patch projection plus the spatial position embedding.
Tensor embed_patches(const Tensor& patches, const ViTWeights& w);

/// z + W_O attn(LN(z)) with the attention pattern given by `spec`.
Tensor attention_sublayer(const Tensor& z, const ViTConfig& cfg, const LayerWeights& lw,
                          const AttentionSpec& spec, std::uint64_t* macs = nullptr);

/// z + MLP(LN(z)).
Tensor mlp_sublayer(const Tensor& z, const LayerWeights& lw);

/// Pre-norm bidirectional self-attention over the n patches, then the MLP block.
Tensor spatial_attention_layer(const Tensor& z, const ViTConfig& cfg, const ViTWeights& w,
                               std::size_t layer, std::uint64_t* macs = nullptr);

/// patchify -> embed -> L spatial layers -> final norm. Output [n x d].
Tensor vit_forward(const Tensor& image, const ViTConfig& cfg, const ViTWeights& w,
                   std::uint64_t* macs = nullptr);

}  // namespace mem
