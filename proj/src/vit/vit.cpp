#include "mem/vit.hpp"

#include <cmath>
#include <random>

namespace mem {

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw std::invalid_argument("image_size must be a positive multiple of patch_size");
  }
  if (heads == 0 || model_dim == 0 || model_dim % heads != 0) {
    throw std::invalid_argument("model_dim must be divisible by heads");
  }
  if (mlp_dim == 0 || channels == 0) throw std::invalid_argument("mlp_dim and channels must be positive");
}

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
                     {"layers", c.layers},         {"heads", c.heads},
                     {"model_dim", c.model_dim},   {"mlp_dim", c.mlp_dim},
                     {"channels", c.channels}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  ViTConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.mlp_dim = j.value("mlp_dim", d.mlp_dim);
  c.channels = j.value("channels", d.channels);
  c.validate();
}

namespace {

Tensor normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor around(Shape shape, double center, double spread, bool perturb, std::mt19937_64& rng) {
  if (!perturb) return Tensor::full(std::move(shape), center);
  std::uniform_real_distribution<double> dist(center - spread, center + spread);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

ViTWeights ViTWeights::random(const ViTConfig& cfg, std::uint64_t seed, bool perturb_all) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.model_dim, p = cfg.patch_dim(), m = cfg.mlp_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  ViTWeights w;
  w.patch_w = normal({d, p}, 1.0 / std::sqrt(static_cast<double>(p)), rng);
  w.patch_b = around({d}, 0.0, 0.1, perturb_all, rng);
  w.pos_embed = normal({cfg.num_patches(), d}, 0.1, rng);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerWeights lw;
    lw.norm1 = around({d}, 1.0, 0.2, perturb_all, rng);
    lw.wq = normal({d, d}, sd, rng);
    lw.wk = normal({d, d}, sd, rng);
    lw.wv = normal({d, d}, sd, rng);
    lw.wo = normal({d, d}, sd, rng);
    lw.norm2 = around({d}, 1.0, 0.2, perturb_all, rng);
    lw.mlp_w1 = normal({m, d}, sd, rng);
    lw.mlp_b1 = around({m}, 0.0, 0.1, perturb_all, rng);
    lw.mlp_w2 = normal({d, m}, 1.0 / std::sqrt(static_cast<double>(m)), rng);
    lw.mlp_b2 = around({d}, 0.0, 0.1, perturb_all, rng);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = around({d}, 1.0, 0.2, perturb_all, rng);
  return w;
}

void ViTWeights::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ViTWeights*>(this)->for_each_mut(
      [&](const std::string& name, Tensor& t) { fn(name, t); });
}

void ViTWeights::for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("patch_w", patch_w);
  fn("patch_b", patch_b);
  fn("pos_embed", pos_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& lw = layers[l];
    fn(p + "norm1", lw.norm1);
    fn(p + "wq", lw.wq);
    fn(p + "wk", lw.wk);
    fn(p + "wv", lw.wv);
    fn(p + "wo", lw.wo);
    fn(p + "norm2", lw.norm2);
    fn(p + "mlp_w1", lw.mlp_w1);
    fn(p + "mlp_b1", lw.mlp_b1);
    fn(p + "mlp_w2", lw.mlp_w2);
    fn(p + "mlp_b2", lw.mlp_b2);
  }
  fn("final_norm", final_norm);
}

std::size_t ViTWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ViTWeights ViTWeights::requiring_grad() const {
  ViTWeights out = *this;
  out.for_each_mut([](const std::string&, Tensor& t) { t = t.requiring_grad(); });
  return out;
}

void ViTWeights::check(const ViTConfig& cfg) const {
  const std::size_t d = cfg.model_dim, m = cfg.mlp_dim;
  auto expect = [](const Tensor& t, const Shape& s, const std::string& name) {
    if (t.shape() != s) {
      throw ShapeError("weight " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(s));
    }
  };
  expect(patch_w, {d, cfg.patch_dim()}, "patch_w");
  expect(patch_b, {d}, "patch_b");
  expect(pos_embed, {cfg.num_patches(), d}, "pos_embed");
  if (layers.size() != cfg.layers) throw ShapeError("layer count does not match config");
  for (const auto& lw : layers) {
    expect(lw.norm1, {d}, "norm1");
    expect(lw.wq, {d, d}, "wq");
    expect(lw.wk, {d, d}, "wk");
    expect(lw.wv, {d, d}, "wv");
    expect(lw.wo, {d, d}, "wo");
    expect(lw.norm2, {d}, "norm2");
    expect(lw.mlp_w1, {m, d}, "mlp_w1");
    expect(lw.mlp_b1, {m}, "mlp_b1");
    expect(lw.mlp_w2, {d, m}, "mlp_w2");
    expect(lw.mlp_b2, {d}, "mlp_b2");
  }
  expect(final_norm, {d}, "final_norm");
}

std::size_t vit_parameter_count(const ViTConfig& cfg) {
  const std::size_t d = cfg.model_dim, m = cfg.mlp_dim;
  const std::size_t per_layer = 2 * d + 4 * d * d + m * d + m + d * m + d;
  return d * cfg.patch_dim() + d + cfg.num_patches() * d + cfg.layers * per_layer + d;
}

Tensor patchify(const Tensor& image, const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, s = cfg.image_size, ps = cfg.patch_size;
  if (image.rank() != 3 || image.dim(0) != c || image.dim(1) != s || image.dim(2) != s) {
    throw ShapeError("patchify expects image " + shape_str({c, s, s}) + ", got " +
                     shape_str(image.shape()));
  }
  const std::size_t side = cfg.patches_per_side();
  std::vector<std::size_t> order;  // source index for each output element
  order.reserve(image.numel());
  for (std::size_t pr = 0; pr < side; ++pr)
    for (std::size_t pc = 0; pc < side; ++pc)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = 0; r < ps; ++r)
          for (std::size_t col = 0; col < ps; ++col)
            order.push_back((ch * s + pr * ps + r) * s + pc * ps + col);
  auto flat = reshape(image, {image.numel(), 1});
  return reshape(gather_rows(flat, order), {cfg.num_patches(), cfg.patch_dim()});
}

Tensor embed_patches(const Tensor& patches, const ViTWeights& w) {
  auto x = linear(patches, w.patch_w, w.patch_b);
  const std::size_t n = w.pos_embed.dim(0);
  if (x.rows() % n != 0) throw ShapeError("token count is not a multiple of the patch count");
  if (x.rows() == n) return add(x, w.pos_embed);
  std::vector<Tensor> repeated(x.rows() / n, w.pos_embed);
  return add(x, concat_rows(repeated));
}

Tensor attention_sublayer(const Tensor& z, const ViTConfig& cfg, const LayerWeights& lw,
                          const AttentionSpec& spec, std::uint64_t* macs) {
  auto h = rms_norm(z, lw.norm1);
  auto q = linear(h, lw.wq);
  auto k = linear(h, lw.wk);
  auto v = linear(h, lw.wv);
  auto a = grouped_attention(q, k, v, cfg.heads, spec, macs);
  return add(z, linear(a, lw.wo));
}

Tensor mlp_sublayer(const Tensor& z, const LayerWeights& lw) {
  auto h = rms_norm(z, lw.norm2);
  auto u = gelu(linear(h, lw.mlp_w1, lw.mlp_b1));
  return add(z, linear(u, lw.mlp_w2, lw.mlp_b2));
}

Tensor spatial_attention_layer(const Tensor& z, const ViTConfig& cfg, const ViTWeights& w,
                               std::size_t layer, std::uint64_t* macs) {
  if (layer >= w.layers.size()) throw std::out_of_range("layer index");
  if (z.rank() != 2 || z.dim(1) != cfg.model_dim) {
    throw ShapeError("spatial layer input must be [n x d], got " + shape_str(z.shape()));
  }
  const auto groups = TokenGroups::joint(z.dim(0));
  AttentionSpec spec;
  spec.groups = &groups;
  return mlp_sublayer(attention_sublayer(z, cfg, w.layers[layer], spec, macs), w.layers[layer]);
}

Tensor vit_forward(const Tensor& image, const ViTConfig& cfg, const ViTWeights& w,
                   std::uint64_t* macs) {
  w.check(cfg);
  auto z = embed_patches(patchify(image, cfg), w);
  for (std::size_t l = 0; l < cfg.layers; ++l) z = spatial_attention_layer(z, cfg, w, l, macs);
  return rms_norm(z, w.final_norm);
}

}  // namespace mem
