#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mem/checkpoint.hpp"
#include "mem/vit.hpp"

using namespace mem;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

ViTConfig tiny() {
  ViTConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 4;
  c.mlp_dim = 8;
  c.channels = 2;
  return c;
}

}  // namespace

TEST_CASE("single-head attention on two tokens by hand") {
  // q = k = v = identity rows; d = 2, scale 1/sqrt(2).
  auto x = Tensor::from_rows({{1, 0}, {0, 1}});
  auto groups = TokenGroups::joint(2);
  AttentionSpec spec;
  spec.groups = &groups;
  std::uint64_t macs = 0;
  auto y = grouped_attention(x, x, x, 1, spec, &macs);
  const double s = 1.0 / std::sqrt(2.0);
  const double a = std::exp(s) / (std::exp(s) + 1.0);
  CHECK(y.at(0, 0) == doctest::Approx(a));
  CHECK(y.at(0, 1) == doctest::Approx(1 - a));
  CHECK(y.at(1, 0) == doctest::Approx(1 - a));
  CHECK(y.at(1, 1) == doctest::Approx(a));
  CHECK(macs == 2 * 2 * 4);
}

TEST_CASE("causal masked attention matches brute force") {
  std::mt19937_64 rng(5);
  const std::size_t frames = 3, n = 2, d = 4, heads = 2, hd = 2;
  auto q = random_tensor({frames * n, d}, rng);
  auto k = random_tensor({frames * n, d}, rng);
  auto v = random_tensor({frames * n, d}, rng);
  auto groups = TokenGroups::per_patch(frames, n);
  std::vector<int> ts;
  std::vector<std::uint8_t> valid;
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t p = 0; p < n; ++p) {
      ts.push_back(static_cast<int>(f) - 2);
      valid.push_back(f == 0 ? 0 : 1);  // first frame is padding
    }
  AttentionSpec spec{&groups, ts, valid, true, AttentionMix::standard};
  auto y = grouped_attention(q, k, v, heads, spec);
  for (std::size_t i = 0; i < frames * n; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> w;
      std::vector<std::size_t> keys;
      for (std::size_t j = 0; j < frames * n; ++j) {
        if (j % n != i % n) continue;
        if (j != i && (!valid[j] || ts[j] > ts[i])) continue;
        double s = 0;
        for (std::size_t c = 0; c < hd; ++c) s += q.at(i, h * hd + c) * k.at(j, h * hd + c);
        w.push_back(std::exp(s / std::sqrt(2.0)));
        keys.push_back(j);
      }
      double z = 0;
      for (double x : w) z += x;
      for (std::size_t c = 0; c < hd; ++c) {
        double ref = 0;
        for (std::size_t m = 0; m < keys.size(); ++m) ref += w[m] / z * v.at(keys[m], h * hd + c);
        CHECK(y.at(i, h * hd + c) == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
  auto w0 = attention_weights(q, k, heads, 0, spec);
  REQUIRE(w0.size() == n);
  // Padding frame only sees itself; the current frame ignores padding.
  CHECK(w0[0][0] == 1.0);
  CHECK(w0[0][3] == 0.0);
  CHECK(w0[0][6] == 0.0);
}

TEST_CASE("delta mix vanishes for a lone token") {
  std::mt19937_64 rng(6);
  auto q = random_tensor({2, 4}, rng), k = random_tensor({2, 4}, rng), v = random_tensor({2, 4}, rng);
  auto groups = TokenGroups::per_patch(1, 2);
  AttentionSpec spec;
  spec.groups = &groups;
  spec.mix = AttentionMix::delta;
  auto y = grouped_attention(q, k, v, 2, spec);
  for (double x : y.data()) CHECK(x == 0.0);
}

TEST_CASE("attention backward matches finite differences") {
  std::mt19937_64 rng(7);
  auto groups = TokenGroups::per_patch(3, 2);
  std::vector<int> ts{-2, -2, -1, -1, 0, 0};
  std::vector<std::uint8_t> valid{0, 0, 1, 1, 1, 1};
  for (auto mix : {AttentionMix::standard, AttentionMix::delta}) {
    AttentionSpec spec{&groups, ts, valid, true, mix};
    auto q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
    auto wout = random_tensor({6, 4}, rng);
    auto loss = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
      return sum(mul(grouped_attention(qq, kk, vv, 2, spec), wout));
    };
    auto qg = q.requiring_grad(), kg = k.requiring_grad(), vg = v.requiring_grad();
    auto grads = backward(loss(qg, kg, vg));
    auto fq = finite_diff_grad([&](const Tensor& t) { return loss(t, k, v).item(); }, q, 1e-5);
    auto fk = finite_diff_grad([&](const Tensor& t) { return loss(q, t, v).item(); }, k, 1e-5);
    auto fv = finite_diff_grad([&](const Tensor& t) { return loss(q, k, t).item(); }, v, 1e-5);
    CHECK(max_relative_error(grads.of(qg), fq) < 1e-6);
    CHECK(max_relative_error(grads.of(kg), fk) < 1e-6);
    CHECK(max_relative_error(grads.of(vg), fv) < 1e-6);
  }
}

TEST_CASE("patchify places pixels by index arithmetic") {
  auto cfg = tiny();
  std::vector<double> px(2 * 4 * 4);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(i);
  auto img = Tensor({2, 4, 4}, px);
  auto p = patchify(img, cfg);
  REQUIRE(p.shape() == Shape{4, 8});
  for (std::size_t pr = 0; pr < 2; ++pr)
    for (std::size_t pc = 0; pc < 2; ++pc)
      for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t c = 0; c < 2; ++c)
            CHECK(p.at(pr * 2 + pc, ch * 4 + r * 2 + c) ==
                  img[ch * 16 + (pr * 2 + r) * 4 + pc * 2 + c]);
  CHECK_THROWS_AS(patchify(Tensor::zeros({1, 4, 4}), cfg), ShapeError);
}

TEST_CASE("parameter count closed form") {
  for (auto cfg : {tiny(), ViTConfig::reference()}) {
    CHECK(ViTWeights::random(cfg, 1).parameter_count() == vit_parameter_count(cfg));
  }
}

TEST_CASE("config validation and json") {
  ViTConfig bad = tiny();
  bad.heads = 3;
  CHECK_THROWS(bad.validate());
  nlohmann::json j = tiny();
  CHECK(j.get<ViTConfig>() == tiny());
}

TEST_CASE("vit forward is deterministic and counts MACs") {
  auto cfg = tiny();
  auto w = ViTWeights::random(cfg, 11, true);
  std::mt19937_64 rng(8);
  auto img = random_tensor({2, 4, 4}, rng);
  std::uint64_t m1 = 0, m2 = 0;
  auto a = vit_forward(img, cfg, w, &m1);
  auto b = vit_forward(img, cfg, w, &m2);
  CHECK(bit_equal(a, b));
  CHECK(a.shape() == Shape{4, 4});
  CHECK(m1 == cfg.layers * 2 * 4 * 16);
  CHECK(m1 == m2);
}

TEST_CASE("vit gradients match finite differences") {
  auto cfg = tiny();
  cfg.layers = 1;
  auto w = ViTWeights::random(cfg, 12, true);
  std::mt19937_64 rng(9);
  auto img = random_tensor({2, 4, 4}, rng);
  auto readout = random_tensor({4, 4}, rng);
  auto wg = w.requiring_grad();
  auto grads = backward(sum(mul(vit_forward(img, cfg, wg), readout)));
  std::vector<Tensor> leaves;
  wg.for_each([&](const std::string&, const Tensor& t) { leaves.push_back(t); });
  std::size_t idx = 0;
  w.for_each([&](const std::string& name, const Tensor& t) {
    auto f = [&, name](const Tensor& x) {
      ViTWeights p = w;
      p.for_each_mut([&](const std::string& n2, Tensor& u) {
        if (n2 == name) u = x;
      });
      return sum(mul(vit_forward(img, cfg, p), readout)).item();
    };
    auto fd = finite_diff_grad(f, t, 1e-5);
    INFO(name);
    CHECK(max_relative_error(grads.of(leaves[idx]), fd) < 1e-5);
    ++idx;
  });
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto cfg = tiny();
  auto w = ViTWeights::random(cfg, 13, true);
  Checkpoint ck;
  ck.config["vit"] = cfg;
  add_vit_arrays(ck, w, "encoder.");
  const auto path = std::filesystem::temp_directory_path() / "mem_test_ckpt.bin";
  save_checkpoint(ck, path);
  auto back = load_checkpoint(path);
  auto w2 = vit_from_arrays(back, back.config.at("vit").get<ViTConfig>(), "encoder.");
  std::mt19937_64 rng(10);
  auto img = random_tensor({2, 4, 4}, rng);
  CHECK(bit_equal(vit_forward(img, cfg, w), vit_forward(img, cfg, w2)));
  CHECK_THROWS_AS(back.get("nope"), CheckpointError);
  {
    std::ofstream junk(path, std::ios::binary | std::ios::trunc);
    junk << "garbage!";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
}
