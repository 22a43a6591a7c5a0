#include <algorithm>
#include <cmath>
#include <random>

#include "mem/agent.hpp"

namespace mem {

namespace {

const char* kVariantNames[] = {"mem_video", "single_frame", "pool_memory", "proprio_memory"};

Tensor normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Column-wise mean of [1 x d] rows. Each column is summed in ascending value
// order, so any permutation of the rows gives the same bits.
Tensor sorted_mean(const std::vector<Tensor>& rows) {
  const std::size_t m = rows.size(), d = rows.front().numel();
  std::vector<double> out(d), col(m);
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < m; ++r) col[r] = rows[r][c];
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double x : col) s += x;
    out[c] = s / static_cast<double>(m);
  }
  return Tensor::record(Tensor({1, d}, std::move(out)), "sorted_mean", rows,
                        [m](const std::vector<double>& g) {
                          std::vector<double> each(g.size());
                          for (std::size_t i = 0; i < g.size(); ++i) each[i] = g[i] / static_cast<double>(m);
                          return std::vector<std::vector<double>>(m, each);
                        });
}

std::vector<std::size_t> valid_past(const VideoClip& w) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i + 1 < w.num_frames(); ++i)
    if (w.valid[i]) out.push_back(i);
  return out;
}

Tensor current_frame(const PolicyConfig& cfg, const PolicyWeights& w, const VideoClip& window,
                     MacCounts* macs) {
  std::uint64_t m = 0;
  auto out = vit_forward(window.frames.back(), cfg.vit, w.vit, macs ? &m : nullptr);
  if (macs) macs->spatial += m;
  return out;
}

}  // namespace

std::string to_string(EncoderVariant v) { return kVariantNames[static_cast<int>(v)]; }

EncoderVariant encoder_variant_from_string(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == kVariantNames[i]) return static_cast<EncoderVariant>(i);
  throw std::invalid_argument("unknown encoder variant '" + s + "'");
}

ViTConfig PolicyConfig::small_vit() {
  ViTConfig c;
  c.layers = 4;
  c.heads = 2;
  c.model_dim = 16;
  c.mlp_dim = 32;
  return c;
}

STLayerSchedule PolicyConfig::schedule() const { return STLayerSchedule::from_layers(vit.layers, temporal_layers); }

std::size_t PolicyConfig::head_input() const { return (vit.num_patches() + 4) * vit.model_dim; }

void PolicyConfig::validate() const {
  vit.validate();
  if (vit.image_size != kImageSize || vit.channels != kImageChannels)
    throw std::invalid_argument("policy encoder must take 16x16x4 env images");
  (void)schedule();
  if (horizon + 1 > kMaxClipFrames) throw std::invalid_argument("policy horizon too long");
  if (chunk == 0 || chunk > kMaxChunk) throw std::invalid_argument("action chunk length must be 1..8");
  if (head_hidden == 0) throw std::invalid_argument("head_hidden must be positive");
}

void to_json(nlohmann::json& j, const PolicyConfig& c) {
  j = nlohmann::json{{"vit", c.vit},          {"temporal_layers", c.temporal_layers},
                     {"variant", to_string(c.variant)}, {"horizon", c.horizon},
                     {"chunk", c.chunk},      {"head_hidden", c.head_hidden}};
}

void from_json(const nlohmann::json& j, PolicyConfig& c) {
  PolicyConfig d;
  c.vit = j.contains("vit") ? j.at("vit").get<ViTConfig>() : d.vit;
  c.temporal_layers = j.value("temporal_layers", d.temporal_layers);
  c.variant = encoder_variant_from_string(j.value("variant", to_string(d.variant)));
  c.horizon = j.value("horizon", d.horizon);
  c.chunk = j.value("chunk", d.chunk);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.validate();
}

PolicyWeights PolicyWeights::random(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PolicyWeights w;
  w.vit = ViTWeights::random(cfg.vit, seed);
  std::mt19937_64 rng(splitmix64(seed));
  const std::size_t d = cfg.vit.model_dim, in = cfg.head_input(), h = cfg.head_hidden;
  w.proprio_w = normal({d, kProprioDim}, 0.5, rng);
  w.proprio_b = Tensor::zeros({d});
  w.tokens = normal({vocabulary().size(), d}, 1.0, rng);
  w.head_w1 = normal({h, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  w.head_b1 = Tensor::zeros({h});
  w.head_w2 = normal({cfg.chunk * kNumActions, h}, 1e-3, rng);
  w.head_b2 = Tensor::zeros({cfg.chunk * kNumActions});
  return w;
}

void PolicyWeights::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<PolicyWeights*>(this)->for_each_mut([&](const std::string& n, Tensor& t) { fn(n, t); });
}

void PolicyWeights::for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn) {
  vit.for_each_mut([&](const std::string& n, Tensor& t) { fn("encoder." + n, t); });
  fn("proprio.w", proprio_w);
  fn("proprio.b", proprio_b);
  fn("tokens", tokens);
  fn("head.w1", head_w1);
  fn("head.b1", head_b1);
  fn("head.w2", head_w2);
  fn("head.b2", head_b2);
}

std::size_t PolicyWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

PolicyWeights PolicyWeights::requiring_grad() const {
  PolicyWeights out = *this;
  out.for_each_mut([](const std::string&, Tensor& t) { t = t.requiring_grad(); });
  return out;
}

Tensor pool_memory_token(const VideoClip& window, const ViTConfig& cfg, const ViTWeights& w) {
  const auto past = valid_past(window);
  if (past.empty()) return Tensor::zeros({1, cfg.model_dim});
  std::vector<Tensor> means;
  for (auto i : past) means.push_back(mean_rows(vit_forward(window.frames[i], cfg, w)));
  return sorted_mean(means);
}

Tensor proprio_memory_token(const VideoClip& window, const Tensor& proj_w, const Tensor& proj_b) {
  const auto past = valid_past(window);
  if (past.empty()) return Tensor::zeros({1, proj_w.dim(0)});
  if (window.proprio.size() != window.num_frames())
    throw std::invalid_argument("proprio history needs one state per frame");
  std::vector<std::vector<double>> states;
  for (auto i : past) states.push_back(window.proprio[i]);
  return mean_rows(proprio_embed(states, proj_w, proj_b));
}

Tensor encode_window(const PolicyConfig& cfg, const PolicyWeights& w, const VideoClip& window,
                     MacCounts* macs) {
  window.validate();
  const std::size_t d = cfg.vit.model_dim;
  switch (cfg.variant) {
    case EncoderVariant::mem_video: {
      EncoderOptions opt;
      opt.drop_past_after_last_temporal = true;
      auto z = encode_video(window, cfg.vit, w.vit, cfg.schedule(), opt, macs);
      return concat_rows({z, Tensor::zeros({1, d})});
    }
    case EncoderVariant::single_frame:
      return concat_rows({current_frame(cfg, w, window, macs), Tensor::zeros({1, d})});
    case EncoderVariant::pool_memory:
      return concat_rows({current_frame(cfg, w, window, macs), pool_memory_token(window, cfg.vit, w.vit)});
    case EncoderVariant::proprio_memory:
      return concat_rows(
          {current_frame(cfg, w, window, macs), proprio_memory_token(window, w.proprio_w, w.proprio_b)});
  }
  throw std::invalid_argument("unknown encoder variant");
}

Tensor policy_logits(const PolicyConfig& cfg, const PolicyWeights& w, const PolicyInput& in, MacCounts* macs) {
  if (in.window.num_frames() != cfg.horizon + 1) {
    throw std::invalid_argument("window holds " + std::to_string(in.window.num_frames()) +
                                " frames, policy expects " + std::to_string(cfg.horizon + 1));
  }
  if (in.window.proprio.size() != in.window.num_frames())
    throw std::invalid_argument("window needs one proprio state per frame");
  const auto tokens = encode_window(cfg, w, in.window, macs);
  const auto flat = reshape(tokens, {1, tokens.numel()});
  const auto prop = proprio_embed({in.window.proprio.back()}, w.proprio_w, w.proprio_b);
  const std::size_t ids[] = {static_cast<std::size_t>(in.instruction), static_cast<std::size_t>(in.goal)};
  if (ids[0] >= w.tokens.dim(0) || ids[1] >= w.tokens.dim(0)) throw std::out_of_range("token id out of range");
  const auto instr = gather_rows(w.tokens, std::span(ids, 1));
  const auto goal = gather_rows(w.tokens, std::span(ids + 1, 1));
  const auto x = concat_cols({flat, prop, instr, goal});
  const auto h = gelu(linear(x, w.head_w1, w.head_b1));
  return reshape(linear(h, w.head_w2, w.head_b2), {cfg.chunk, kNumActions});
}

ActionChunk greedy_chunk(const Tensor& logits, ActionMask legal) {
  if (legal == 0) legal = static_cast<ActionMask>((1u << kNumActions) - 1);
  ActionChunk out;
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    int best = -1;
    for (std::size_t a = 0; a < kNumActions; ++a) {
      if (!((legal >> a) & 1u)) continue;
      if (best < 0 || logits.at(r, a) > logits.at(r, static_cast<std::size_t>(best))) best = static_cast<int>(a);
    }
    out.push_back(static_cast<Action>(best));
  }
  return out;
}

LowLevelPolicy::LowLevelPolicy(PolicyConfig cfg, PolicyWeights weights)
    : cfg_(std::move(cfg)), weights_(std::move(weights)) {
  cfg_.validate();
  weights_.vit.check(cfg_.vit);
  const auto ref = PolicyWeights::random(cfg_, 0);
  std::vector<Shape> shapes;
  ref.for_each([&](const std::string&, const Tensor& t) { shapes.push_back(t.shape()); });
  std::size_t i = 0;
  weights_.for_each([&](const std::string& n, const Tensor& t) {
    if (t.shape() != shapes[i++])
      throw ShapeError("policy weight " + n + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(shapes[i - 1]));
  });
}

Tensor LowLevelPolicy::logits(const PolicyInput& in) const { return policy_logits(cfg_, weights_, in); }

ActionChunk LowLevelPolicy::act(const PolicyInput& in, ActionMask legal) const {
  return greedy_chunk(logits(in), legal);
}

LowLevelPolicy LowLevelPolicy::with_horizon(std::size_t k) const {
  auto c = cfg_;
  c.horizon = k;
  return LowLevelPolicy(c, weights_);
}

void save_policy(const LowLevelPolicy& p, const std::filesystem::path& path, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.config = nlohmann::json{{"format", "policy"}, {"policy", p.config()}, {"vocabulary", vocabulary()}};
  if (!extra.empty()) ck.config["extra"] = extra;
  p.weights().for_each([&](const std::string& n, const Tensor& t) { ck.put(n, t); });
  save_checkpoint(ck, path);
}

LowLevelPolicy load_policy(const std::filesystem::path& path) {
  const auto ck = load_checkpoint(path);
  if (ck.config.value("format", "") != "policy") throw CheckpointError(path.string() + " is not a policy checkpoint");
  if (ck.config.value("vocabulary", nlohmann::json::array()) != nlohmann::json(vocabulary()))
    throw CheckpointError(path.string() + " was written with a different instruction vocabulary");
  PolicyConfig cfg;
  try {
    cfg = ck.config.at("policy").get<PolicyConfig>();
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("bad policy config: ") + e.what());
  }
  auto w = PolicyWeights::random(cfg, 0);
  w.for_each_mut([&](const std::string& n, Tensor& t) {
    if (!ck.has(n)) throw CheckpointError("checkpoint lacks " + n);
    const auto& src = ck.get(n);
    if (src.shape() != t.shape())
      throw CheckpointError("checkpoint array " + n + " has shape " + shape_str(src.shape()) + ", expected " +
                            shape_str(t.shape()));
    t = src;
  });
  return LowLevelPolicy(cfg, w);
}

FrameWindow::FrameWindow(std::size_t horizon) : horizon_(horizon) {}

void FrameWindow::push(const Observation& obs) {
  frames_.push_back(obs);
  if (frames_.size() > horizon_ + 1) frames_.erase(frames_.begin());
}

VideoClip FrameWindow::clip() const {
  if (frames_.empty()) throw std::logic_error("frame window is empty");
  VideoClip c;
  const std::size_t pad = horizon_ + 1 - frames_.size();
  const auto& shape = frames_.back().image.shape();
  for (std::size_t i = 0; i < pad; ++i) {
    c.frames.push_back(Tensor::zeros(shape));
    c.proprio.push_back(std::vector<double>(kProprioDim, 0.0));
    c.valid.push_back(0);
  }
  for (const auto& o : frames_) {
    c.frames.push_back(o.image);
    c.proprio.push_back(o.proprio);
    c.valid.push_back(1);
  }
  for (std::size_t i = 0; i <= horizon_; ++i) c.timestamps.push_back(static_cast<int>(i) - static_cast<int>(horizon_));
  return c;
}

}  // namespace mem
