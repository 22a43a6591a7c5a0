#include "mem/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mem {

namespace {

const char* scope_name(BenchScope s) { return s == BenchScope::layer ? "layer" : "encoder"; }

BenchScope scope_from(const std::string& s) {
  if (s == "layer") return BenchScope::layer;
  if (s == "encoder") return BenchScope::encoder;
  throw std::invalid_argument("unknown bench scope: " + s);
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor(std::move(shape), std::move(v));
}

VideoClip random_clip(const ViTConfig& cfg, std::size_t k, std::mt19937_64& rng) {
  std::vector<Tensor> frames;
  for (std::size_t f = 0; f <= k; ++f) frames.push_back(random_tensor({cfg.channels, cfg.image_size, cfg.image_size}, rng));
  return VideoClip::from_frames(std::move(frames));
}

std::vector<int> frame_timestamps(std::size_t k) {
  std::vector<int> ts;
  for (std::size_t f = 0; f <= k; ++f) ts.push_back(static_cast<int>(f) - static_cast<int>(k));
  return ts;
}

template <class F>
double median_ms(const BenchConfig& cfg, F&& fn) {
  for (std::size_t i = 0; i < cfg.warmup; ++i) fn();
  std::vector<double> ms;
  for (std::size_t i = 0; i < cfg.repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t m = ms.size() / 2;
  return ms.size() % 2 ? ms[m] : 0.5 * (ms[m - 1] + ms[m]);
}

// Every frame's tokens in one causal group; the MLP runs as usual.
Tensor naive_layer(const Tensor& z, const ViTConfig& cfg, const LayerWeights& lw, const TokenGroups& groups,
                   std::span<const int> token_ts, std::uint64_t* macs) {
  AttentionSpec spec;
  spec.groups = &groups;
  spec.timestamps = token_ts;
  spec.causal = true;
  return mlp_sublayer(attention_sublayer(z, cfg, lw, spec, macs), lw);
}

std::string fmt_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

}  // namespace

void BenchConfig::validate() const {
  vit.validate();
  if (horizons.empty()) throw std::invalid_argument("bench needs at least one horizon");
  if (repeats == 0) throw std::invalid_argument("bench repeats must be positive");
  if (scopes.empty()) throw std::invalid_argument("bench needs at least one scope");
  for (auto k : horizons)
    if (k + 1 > kMaxClipFrames) throw std::invalid_argument("bench horizon exceeds the clip frame limit");
  if (budget_ms < 0.0) throw std::invalid_argument("budget_ms must be non-negative");
}

void to_json(nlohmann::json& j, const BenchConfig& c) {
  std::vector<std::string> scopes;
  for (auto s : c.scopes) scopes.emplace_back(scope_name(s));
  j = nlohmann::json{{"vit", c.vit},         {"horizons", c.horizons},     {"repeats", c.repeats},
                     {"warmup", c.warmup},   {"scopes", scopes},           {"max_tokens", c.max_tokens},
                     {"budget_ms", c.budget_ms}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BenchConfig& c) {
  BenchConfig d;
  c.vit = j.contains("vit") ? j.at("vit").get<ViTConfig>() : d.vit;
  c.horizons = j.value("horizons", d.horizons);
  c.repeats = j.value("repeats", d.repeats);
  c.warmup = j.value("warmup", d.warmup);
  c.scopes = d.scopes;
  if (j.contains("scopes")) {
    c.scopes.clear();
    for (const auto& s : j.at("scopes")) c.scopes.push_back(scope_from(s.get<std::string>()));
  }
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.budget_ms = j.value("budget_ms", d.budget_ms);
  c.seed = j.value("seed", d.seed);
}

std::uint64_t factorized_encoder_macs(const ViTConfig& cfg, std::size_t k) {
  const auto f = flop_count(cfg, k);
  const auto sched = STLayerSchedule::every_fourth(cfg.layers);
  return cfg.layers * f.spatial + sched.temporal_count() * f.temporal;
}

double analytic_mac_ratio(const ViTConfig& cfg, std::size_t k) {
  const auto f = flop_count(cfg, k);
  return static_cast<double>(f.naive_joint) / static_cast<double>(f.factorized);
}

Timing run_naive_joint(const BenchConfig& cfg, std::size_t k, BenchScope scope) {
  cfg.validate();
  const std::size_t n = cfg.vit.num_patches(), tokens = (k + 1) * n;
  if (tokens > cfg.max_tokens)
    throw std::invalid_argument("joint attention over " + std::to_string(tokens) + " tokens exceeds max_tokens");
  std::mt19937_64 rng(cfg.seed);
  const auto w = ViTWeights::random(cfg.vit, cfg.seed);
  const auto groups = TokenGroups::joint(tokens);
  std::vector<int> token_ts;
  for (int t : frame_timestamps(k))
    for (std::size_t p = 0; p < n; ++p) token_ts.push_back(t);

  Timing out;
  if (scope == BenchScope::layer) {
    const auto z = random_tensor({tokens, cfg.vit.model_dim}, rng);
    naive_layer(z, cfg.vit, w.layers[0], groups, token_ts, &out.mac_count);
    out.wall_ms_median = median_ms(cfg, [&] { (void)naive_layer(z, cfg.vit, w.layers[0], groups, token_ts, nullptr); });
    return out;
  }
  const auto clip = random_clip(cfg.vit, k, rng);
  auto run = [&](std::uint64_t* macs) {
    std::vector<Tensor> patches;
    for (const auto& f : clip.frames) patches.push_back(patchify(f, cfg.vit));
    auto z = embed_patches(patches.size() == 1 ? patches[0] : concat_rows(patches), w);
    z = add_temporal_embedding(z, clip.timestamps);
    for (std::size_t l = 0; l < cfg.vit.layers; ++l) z = naive_layer(z, cfg.vit, w.layers[l], groups, token_ts, macs);
    return rms_norm(slice_rows(z, k * n, n), w.final_norm);
  };
  run(&out.mac_count);
  out.wall_ms_median = median_ms(cfg, [&] { (void)run(nullptr); });
  return out;
}

Timing run_factorized(const BenchConfig& cfg, std::size_t k, BenchScope scope) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto w = ViTWeights::random(cfg.vit, cfg.seed);
  const auto f = flop_count(cfg.vit, k);
  Timing out;
  MacCounts macs;
  std::uint64_t expected = 0;
  if (scope == BenchScope::layer) {
    const auto ts = frame_timestamps(k);
    const std::vector<std::uint8_t> valid(k + 1, 1);
    const auto z = random_tensor({(k + 1) * cfg.vit.num_patches(), cfg.vit.model_dim}, rng);
    st_layer_forward(z, cfg.vit, w.layers[0], true, ts, valid, TemporalMask::causal, &macs);
    out.wall_ms_median =
        median_ms(cfg, [&] { (void)st_layer_forward(z, cfg.vit, w.layers[0], true, ts, valid); });
    expected = f.factorized;
  } else {
    const auto clip = random_clip(cfg.vit, k, rng);
    const auto sched = STLayerSchedule::every_fourth(cfg.vit.layers);
    encode_video(clip, cfg.vit, w, sched, {}, &macs);
    out.wall_ms_median = median_ms(cfg, [&] { (void)encode_video(clip, cfg.vit, w, sched); });
    expected = factorized_encoder_macs(cfg.vit, k);
  }
  out.mac_count = macs.total();
  if (out.mac_count != expected)
    throw std::logic_error("counted MACs " + std::to_string(out.mac_count) + " differ from the closed form " +
                           std::to_string(expected));
  return out;
}

std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  cfg.validate();
  auto ks = cfg.horizons;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::vector<BenchRow> rows;
  const std::size_t n = cfg.vit.num_patches();
  for (auto scope : cfg.scopes)
    for (auto k : ks) {
      const std::string suffix = std::string("_") + scope_name(scope);
      const auto nj = run_naive_joint(cfg, k, scope);
      rows.push_back({k, n, "naive_joint" + suffix, nj.mac_count, nj.wall_ms_median, cfg.repeats});
      const auto fz = run_factorized(cfg, k, scope);
      rows.push_back({k, n, "factorized" + suffix, fz.mac_count, fz.wall_ms_median, cfg.repeats});
    }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = std::string(kBenchCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.k) + ',' + std::to_string(r.n) + ',' + r.variant + ',' + std::to_string(r.mac_count) +
           ',' + fmt_double(r.wall_ms_median) + ',' + std::to_string(r.repeats) + '\n';
  }
  return out;
}

std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kBenchCsvHeader) throw std::runtime_error("bench csv: bad header");
  std::vector<BenchRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 6) throw std::runtime_error("bench csv line " + std::to_string(lineno) + ": expected 6 fields");
    try {
      BenchRow r;
      r.k = std::stoull(f[0]);
      r.n = std::stoull(f[1]);
      r.variant = f[2];
      r.mac_count = std::stoull(f[3]);
      r.wall_ms_median = std::stod(f[4]);
      r.repeats = std::stoull(f[5]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error("bench csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

std::string bench_plot_data(const std::vector<BenchRow>& rows, double budget_ms) {
  std::vector<std::string> variants;
  std::map<std::size_t, std::map<std::string, double>> by_k;
  for (const auto& r : rows) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    by_k[r.k][r.variant] = r.wall_ms_median;
  }
  std::string out = "# k";
  for (const auto& v : variants) out += ' ' + v;
  if (budget_ms > 0.0) out += " budget_ms";
  out += '\n';
  for (const auto& [k, vals] : by_k) {
    out += std::to_string(k);
    for (const auto& v : variants) {
      auto it = vals.find(v);
      out += ' ' + (it == vals.end() ? std::string("nan") : fmt_double(it->second));
    }
    if (budget_ms > 0.0) out += ' ' + fmt_double(budget_ms);
    out += '\n';
  }
  return out;
}

void emit_report(const std::vector<BenchRow>& rows, const BenchConfig& cfg, const std::filesystem::path& prefix) {
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + p.string());
  };
  const std::string base = prefix.string();
  write(base + ".csv", bench_csv(rows));
  write(base + ".plot.dat", bench_plot_data(rows, cfg.budget_ms));
  nlohmann::json ratios = nlohmann::json::object();
  for (auto k : cfg.horizons) ratios[std::to_string(k)] = analytic_mac_ratio(cfg.vit, k);
  nlohmann::json meta{{"config", cfg},
                      {"timer", "steady_clock, median of repeats after warmup"},
                      {"analytic_layer_mac_ratio", ratios},
                      {"rows", rows.size()}};
  write(base + ".meta.json", meta.dump(2) + "\n");
}

}  // namespace mem
