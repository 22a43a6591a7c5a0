#include "mem/video_encoder.hpp"

#include <algorithm>

namespace mem {

VideoClip VideoClip::from_frames(std::vector<Tensor> frames,
                                 std::vector<std::vector<double>> proprio,
                                 double stride_seconds) {
  VideoClip clip;
  const int k = static_cast<int>(frames.size()) - 1;
  clip.frames = std::move(frames);
  clip.proprio = std::move(proprio);
  for (int t = -k; t <= 0; ++t) clip.timestamps.push_back(t);
  clip.valid.assign(clip.frames.size(), 1);
  clip.stride_seconds = stride_seconds;
  return clip;
}

void VideoClip::validate() const {
  if (frames.empty() || frames.size() > kMaxClipFrames) {
    throw std::invalid_argument("clip must hold between 1 and " + std::to_string(kMaxClipFrames) +
                                " frames, got " + std::to_string(frames.size()));
  }
  if (timestamps.size() != frames.size() || valid.size() != frames.size()) {
    throw std::invalid_argument("clip timestamps/valid flags must match the frame count");
  }
  if (timestamps.back() != 0) throw std::invalid_argument("the last clip timestamp must be 0");
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] <= timestamps[i - 1]) {
      throw std::invalid_argument("clip timestamps must be strictly increasing");
    }
  }
  for (const auto& f : frames) {
    if (f.shape() != frames[0].shape()) throw ShapeError("clip frames differ in shape");
  }
  if (!proprio.empty()) {
    if (proprio.size() != frames.size()) throw ShapeError("one proprio state per frame required");
    for (const auto& p : proprio) {
      if (p.size() != proprio[0].size()) throw ShapeError("proprio states differ in size");
    }
  }
  if (!valid.back()) throw std::invalid_argument("the current frame cannot be padding");
}

STLayerSchedule STLayerSchedule::every_fourth(std::size_t layers) {
  STLayerSchedule s;
  for (std::size_t l = 0; l < layers; ++l) s.temporal.push_back((l + 1) % 4 == 0);
  return s;
}

STLayerSchedule STLayerSchedule::from_layers(std::size_t layers,
                                             const std::vector<std::size_t>& which) {
  STLayerSchedule s;
  s.temporal.assign(layers, false);
  for (auto l : which) {
    if (l >= layers) throw std::out_of_range("temporal layer index beyond layer count");
    s.temporal[l] = true;
  }
  return s;
}

std::size_t STLayerSchedule::temporal_count() const {
  return static_cast<std::size_t>(std::count(temporal.begin(), temporal.end(), true));
}

std::vector<std::size_t> STLayerSchedule::temporal_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < temporal.size(); ++l)
    if (temporal[l]) out.push_back(l);
  return out;
}

void to_json(nlohmann::json& j, const STLayerSchedule& s) {
  j = nlohmann::json{{"temporal_layers", s.temporal_layers()}, {"layers", s.temporal.size()}};
}

void from_json(const nlohmann::json& j, STLayerSchedule& s) {
  const auto layers = j.at("layers").get<std::size_t>();
  if (j.contains("temporal_layers")) {
    s = STLayerSchedule::from_layers(layers, j.at("temporal_layers").get<std::vector<std::size_t>>());
  } else {
    s = STLayerSchedule::every_fourth(layers);
  }
}

Tensor add_temporal_embedding(const Tensor& z, std::span<const int> timestamps) {
  const std::size_t frames = timestamps.size();
  if (frames == 0 || z.rank() != 2 || z.dim(0) % frames != 0) {
    throw ShapeError("temporal embedding: " + shape_str(z.shape()) + " does not split into " +
                     std::to_string(frames) + " frames");
  }
  const std::size_t n = z.dim(0) / frames, d = z.dim(1);
  std::vector<double> e(z.numel());
  for (std::size_t f = 0; f < frames; ++f) {
    const auto emb = sinusoidal_embedding(timestamps[f], d);
    for (std::size_t p = 0; p < n; ++p)
      std::copy(emb.data().begin(), emb.data().end(),
                e.begin() + static_cast<std::ptrdiff_t>((f * n + p) * d));
  }
  return add(z, Tensor(z.shape(), std::move(e)));
}

namespace {

struct FrameLayout {
  std::size_t frames, patches;
  std::vector<int> token_ts;
  std::vector<std::uint8_t> token_valid;
};

FrameLayout layout_for(const Tensor& z, std::span<const int> timestamps,
                       std::span<const std::uint8_t> valid) {
  const std::size_t frames = timestamps.size();
  if (frames == 0 || z.rank() != 2 || z.dim(0) % frames != 0) {
    throw ShapeError("activations " + shape_str(z.shape()) + " do not split into " +
                     std::to_string(frames) + " frames");
  }
  if (!valid.empty() && valid.size() != frames) throw ShapeError("valid flags per frame required");
  FrameLayout fl{frames, z.dim(0) / frames, {}, {}};
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t p = 0; p < fl.patches; ++p) {
      fl.token_ts.push_back(timestamps[f]);
      fl.token_valid.push_back(valid.empty() ? 1 : valid[f]);
    }
  }
  return fl;
}

}  // namespace

Tensor temporal_attention(const Tensor& z_hat, const ViTConfig& cfg, const LayerWeights& lw,
                          std::span<const int> timestamps, std::span<const std::uint8_t> valid,
                          TemporalMask mask, MacCounts* macs) {
  const auto fl = layout_for(z_hat, timestamps, valid);
  const auto groups = TokenGroups::per_patch(fl.frames, fl.patches);
  AttentionSpec spec;
  spec.groups = &groups;
  spec.timestamps = fl.token_ts;
  spec.valid = fl.token_valid;
  spec.causal = mask == TemporalMask::causal;
  spec.mix = AttentionMix::delta;
  return attention_sublayer(z_hat, cfg, lw, spec, macs ? &macs->temporal : nullptr);
}

Tensor st_layer_forward(const Tensor& z_hat, const ViTConfig& cfg, const LayerWeights& lw,
                        bool temporal_enabled, std::span<const int> timestamps,
                        std::span<const std::uint8_t> valid, TemporalMask mask,
                        MacCounts* macs) {
  const auto fl = layout_for(z_hat, timestamps, valid);
  Tensor z = z_hat;
  if (temporal_enabled) z = temporal_attention(z, cfg, lw, timestamps, valid, mask, macs);
  const auto groups = TokenGroups::per_frame(fl.frames, fl.patches);
  AttentionSpec spec;
  spec.groups = &groups;
  z = attention_sublayer(z, cfg, lw, spec, macs ? &macs->spatial : nullptr);
  return mlp_sublayer(z, lw);
}

Tensor encode_video(const VideoClip& clip, const ViTConfig& cfg, const ViTWeights& w,
                    const STLayerSchedule& schedule, const EncoderOptions& options,
                    MacCounts* macs, EncoderTrace* trace) {
  clip.validate();
  w.check(cfg);
  if (schedule.temporal.size() != cfg.layers) {
    throw std::invalid_argument("schedule length does not match the layer count");
  }
  std::vector<Tensor> patches;
  patches.reserve(clip.num_frames());
  for (const auto& f : clip.frames) patches.push_back(patchify(f, cfg));
  auto z = embed_patches(patches.size() == 1 ? patches[0] : concat_rows(patches), w);
  z = add_temporal_embedding(z, clip.timestamps);

  std::vector<int> ts = clip.timestamps;
  std::vector<std::uint8_t> valid = clip.valid;
  const auto temporal = schedule.temporal_layers();
  const std::size_t n = cfg.num_patches();
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    z = st_layer_forward(z, cfg, w.layers[l], schedule.temporal[l], ts, valid, options.mask, macs);
    if (options.drop_past_after_last_temporal && ts.size() > 1 &&
        (temporal.empty() || l >= temporal.back())) {
      z = slice_rows(z, (ts.size() - 1) * n, n);
      ts = {0};
      valid = {1};
    }
    if (trace) trace->layer_outputs.push_back(z);
  }
  // Token dropping: only the current frame leaves the encoder.
  const std::size_t frames = ts.size();
  auto current = frames == 1 ? z : slice_rows(z, (frames - 1) * n, n);
  return rms_norm(current, w.final_norm);
}

VideoEncoder::VideoEncoder(ViTConfig cfg, ViTWeights weights, STLayerSchedule schedule,
                           EncoderOptions options)
    : cfg_(cfg), weights_(std::move(weights)), schedule_(std::move(schedule)), options_(options) {
  cfg_.validate();
  weights_.check(cfg_);
  if (schedule_.temporal.size() != cfg_.layers) {
    throw std::invalid_argument("schedule length does not match the layer count");
  }
}

Tensor VideoEncoder::encode(const VideoClip& clip, MacCounts* macs, EncoderTrace* trace) const {
  return encode_video(clip, cfg_, weights_, schedule_, options_, macs, trace);
}

FlopCount flop_count(const ViTConfig& cfg, std::size_t horizon) {
  const std::uint64_t d = cfg.model_dim, n = cfg.num_patches(), frames = horizon + 1;
  FlopCount f;
  f.spatial = 2 * d * frames * n * n;
  f.temporal = 2 * d * n * frames * frames;
  f.factorized = f.spatial + f.temporal;
  f.naive_joint = 2 * d * (frames * n) * (frames * n);
  return f;
}

Tensor proprio_embed(const std::vector<std::vector<double>>& states, const Tensor& w,
                     const Tensor& b) {
  if (states.empty()) throw ShapeError("proprio_embed needs at least one state");
  if (w.rank() != 2) throw ShapeError("proprio projection must be a matrix");
  for (const auto& s : states) {
    if (s.size() != w.dim(1)) {
      throw ShapeError("proprio state of size " + std::to_string(s.size()) +
                       " vs projection " + shape_str(w.shape()));
    }
  }
  return linear(Tensor::from_rows(states), w, b);
}

}  // namespace mem
