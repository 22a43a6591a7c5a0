#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mem/vit.hpp"

namespace mem {

inline constexpr std::size_t kMaxClipFrames = 64;

/// K+1 frames ordered oldest first with timestamps -K..0 in stride units.
/// Frames marked invalid are zero padding (episode start) and are hidden from
/// temporal attention.
struct VideoClip {
  std::vector<Tensor> frames;
  std::vector<std::vector<double>> proprio;  // one state per frame, may be empty
  std::vector<int> timestamps;
  std::vector<std::uint8_t> valid;
  double stride_seconds = 1.0;

  /// Consecutive timestamps -K..0, every frame valid.
  static VideoClip from_frames(std::vector<Tensor> frames,
                               std::vector<std::vector<double>> proprio = {},
                               double stride_seconds = 1.0);

  std::size_t num_frames() const { return frames.size(); }
  std::size_t horizon() const { return frames.size() - 1; }
  void validate() const;
};

/// Per-layer flag: spatial only, or temporal followed by spatial.
struct STLayerSchedule {
  std::vector<bool> temporal;

  /// Temporal attention where (layer + 1) % 4 == 0.
  static STLayerSchedule every_fourth(std::size_t layers);
  /// Explicit 0-based list of temporal layers.
  static STLayerSchedule from_layers(std::size_t layers, const std::vector<std::size_t>& which);
  std::size_t temporal_count() const;
  std::vector<std::size_t> temporal_layers() const;
};

void to_json(nlohmann::json& j, const STLayerSchedule& s);
void from_json(const nlohmann::json& j, STLayerSchedule& s);

/// `full` disables the causal mask; only the self-test fault fixture uses it.
enum class TemporalMask { causal, full };

struct EncoderOptions {
  TemporalMask mask = TemporalMask::causal;
  /// Keep only the current frame after the last temporal layer. The output is
  /// unchanged (later layers never mix frames); it only skips work.
  bool drop_past_after_last_temporal = false;
};

struct MacCounts {
  std::uint64_t spatial = 0;
  std::uint64_t temporal = 0;
  std::uint64_t total() const { return spatial + temporal; }
};

/// Activations after every layer, [(K+1)*n x d] each (rows beyond the
/// current frame disappear once past tokens are dropped).
struct EncoderTrace {
  std::vector<Tensor> layer_outputs;
};

/// Adds e(t) to every patch of the frame at timestamp t. z is [(K+1)*n x d].
Tensor add_temporal_embedding(const Tensor& z, std::span<const int> timestamps);

/// Per-patch causal attention across timestamps, reusing the layer's
/// W_Q/W_K/W_V/W_O and norm1. The residual branch carries
/// W_O (sum_t' a_tt' v_t' - v_t), which vanishes exactly when a frame can only
/// see itself, so a single frame passes through bit-unchanged.
Tensor temporal_attention(const Tensor& z_hat, const ViTConfig& cfg, const LayerWeights& lw,
                          std::span<const int> timestamps, std::span<const std::uint8_t> valid,
                          TemporalMask mask = TemporalMask::causal, MacCounts* macs = nullptr);

/// Optional temporal sub-block, per-frame spatial attention, then the MLP.
Tensor st_layer_forward(const Tensor& z_hat, const ViTConfig& cfg, const LayerWeights& lw,
                        bool temporal_enabled, std::span<const int> timestamps,
                        std::span<const std::uint8_t> valid,
                        TemporalMask mask = TemporalMask::causal, MacCounts* macs = nullptr);

/// Full video encoder; returns only the t = 0 slice, [n x d].
Tensor encode_video(const VideoClip& clip, const ViTConfig& cfg, const ViTWeights& w,
                    const STLayerSchedule& schedule, const EncoderOptions& options = {},
                    MacCounts* macs = nullptr, EncoderTrace* trace = nullptr);

/// The video encoder reuses ViT weights verbatim; it owns no other tensors.
class VideoEncoder {
 public:
  VideoEncoder(ViTConfig cfg, ViTWeights weights, STLayerSchedule schedule,
               EncoderOptions options = {});

  Tensor encode(const VideoClip& clip, MacCounts* macs = nullptr,
                EncoderTrace* trace = nullptr) const;
  std::size_t parameter_count() const { return weights_.parameter_count(); }

  const ViTConfig& config() const { return cfg_; }
  const ViTWeights& weights() const { return weights_; }
  const STLayerSchedule& schedule() const { return schedule_; }

 private:
  ViTConfig cfg_;
  ViTWeights weights_;
  STLayerSchedule schedule_;
  EncoderOptions options_;
};

/// Attention multiply-accumulates (scores plus value mixing) of one
/// temporal-enabled layer over K+1 frames.
struct FlopCount {
  std::uint64_t spatial = 0;      // 2 * d * (K+1) * n^2
  std::uint64_t temporal = 0;     // 2 * d * n * (K+1)^2
  std::uint64_t factorized = 0;   // spatial + temporal
  std::uint64_t naive_joint = 0;  // 2 * d * ((K+1) * n)^2
};

FlopCount flop_count(const ViTConfig& cfg, std::size_t horizon);

/// One token per frame through a shared linear projection: [(K+1) x d].
Tensor proprio_embed(const std::vector<std::vector<double>>& states, const Tensor& w,
                     const Tensor& b);

}  // namespace mem
