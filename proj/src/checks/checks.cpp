#include "mem/checks.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "mem/lang_memory.hpp"

namespace mem {

namespace {

// Runs body, which fills passed/detail, and stamps the elapsed time.
CheckResult timed(std::string name, const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Tensor random_image(const ViTConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(cfg.channels * cfg.image_size * cfg.image_size);
  for (auto& x : v) x = dist(rng);
  return Tensor({cfg.channels, cfg.image_size, cfg.image_size}, std::move(v));
}

VideoClip random_clip(const ViTConfig& cfg, std::size_t frames, std::mt19937_64& rng) {
  std::vector<Tensor> fs;
  for (std::size_t i = 0; i < frames; ++i) fs.push_back(random_image(cfg, rng));
  return VideoClip::from_frames(std::move(fs));
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

}  // namespace

ViTConfig gradient_check_config() {
  ViTConfig c;
  c.image_size = 4;
  c.patch_size = 2;
  c.channels = 2;
  c.layers = 4;
  c.heads = 2;
  c.model_dim = 8;
  c.mlp_dim = 16;
  return c;
}

CheckResult check_single_frame_equivalence(const ViTConfig& cfg, std::size_t draws, std::uint64_t seed) {
  return timed("single_frame_equivalence", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const auto sched = STLayerSchedule::every_fourth(cfg.layers);
    std::size_t equal = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      const auto w = ViTWeights::random(cfg, rng(), true);
      const auto clip = random_clip(cfg, 1, rng);
      if (bit_equal(encode_video(clip, cfg, w, sched), vit_forward(clip.frames[0], cfg, w))) ++equal;
    }
    r.passed = equal == draws;
    r.detail = std::to_string(equal) + "/" + std::to_string(draws) + " draws bit-identical";
  });
}

CheckResult check_causality(const ViTConfig& cfg, std::size_t horizon, std::size_t trials, std::uint64_t seed,
                            TemporalMask mask) {
  return timed("causality", [&](CheckResult& r) {
    if (horizon < 2) throw std::invalid_argument("causality check needs K >= 2");
    std::mt19937_64 rng(seed);
    const auto sched = STLayerSchedule::every_fourth(cfg.layers);
    EncoderOptions opts;
    opts.mask = mask;
    const std::size_t n = cfg.num_patches(), older = (horizon - 1) * n;
    double worst_leak = 0.0, weakest_reach = INFINITY;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto w = ViTWeights::random(cfg, rng(), true);
      const auto clip = random_clip(cfg, horizon + 1, rng);
      EncoderTrace base, pert;
      const auto out = encode_video(clip, cfg, w, sched, opts, nullptr, &base);
      auto changed = clip;
      changed.frames[horizon - 1] = random_image(cfg, rng);  // t = -1
      encode_video(changed, cfg, w, sched, opts, nullptr, &pert);
      for (std::size_t l = 0; l < cfg.layers; ++l)
        worst_leak = std::max(worst_leak, max_abs_diff(slice_rows(base.layer_outputs[l], 0, older),
                                                       slice_rows(pert.layer_outputs[l], 0, older)));
      auto far = clip;
      far.frames[0] = random_image(cfg, rng);  // oldest frame
      weakest_reach = std::min(weakest_reach, max_abs_diff(out, encode_video(far, cfg, w, sched, opts)));
    }
    r.passed = worst_leak <= 1e-12 && weakest_reach > 1e-9;
    r.detail = "max change at older frames " + fmt(worst_leak) + ", min change at t=0 from oldest frame " +
               fmt(weakest_reach);
  });
}

CheckResult check_no_new_parameters(std::size_t configs, std::uint64_t seed) {
  return timed("no_new_parameters", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::size_t ok = 0;
    std::ostringstream d;
    for (std::size_t i = 0; i < configs; ++i) {
      ViTConfig c;
      c.patch_size = std::size_t{2} << (rng() % 2);
      c.image_size = c.patch_size * (1 + rng() % 4);
      c.channels = 1 + rng() % 4;
      c.layers = 1 + rng() % 8;
      c.heads = std::size_t{1} << (rng() % 3);
      c.model_dim = c.heads * (2 + rng() % 6);
      c.mlp_dim = 4 + rng() % 64;
      const auto w = ViTWeights::random(c, rng());
      const VideoEncoder enc(c, w, STLayerSchedule::every_fourth(c.layers));
      const bool same = enc.parameter_count() == w.parameter_count() && w.parameter_count() == vit_parameter_count(c);
      ok += same;
      d << (i ? ", " : "") << enc.parameter_count() << (same ? "==" : "!=") << vit_parameter_count(c);
    }
    r.passed = ok == configs;
    r.detail = d.str();
  });
}

CheckResult check_encoder_gradients(const ViTConfig& cfg, std::size_t horizon, std::uint64_t seed,
                                    double tolerance) {
  return timed("encoder_gradients", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    const auto w = ViTWeights::random(cfg, rng(), true);
    const auto sched = STLayerSchedule::every_fourth(cfg.layers);
    const auto clip = random_clip(cfg, horizon + 1, rng);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<double> rv(cfg.num_patches() * cfg.model_dim);
    for (auto& x : rv) x = nd(rng);
    const Tensor readout({cfg.num_patches(), cfg.model_dim}, rv);

    const auto wg = w.requiring_grad();
    const auto grads = backward(sum(mul(encode_video(clip, cfg, wg, sched), readout)));
    std::vector<Tensor> leaves;
    wg.for_each([&](const std::string&, const Tensor& t) { leaves.push_back(t); });
    double worst = 0.0;
    std::string worst_name;
    std::size_t idx = 0, count = 0;
    w.for_each([&](const std::string& name, const Tensor& t) {
      auto f = [&](const Tensor& x) {
        ViTWeights p = w;
        p.for_each_mut([&](const std::string& other, Tensor& u) {
          if (other == name) u = x;
        });
        return sum(mul(encode_video(clip, cfg, p, sched), readout)).item();
      };
      const double e = max_relative_error(grads.of(leaves[idx++]), finite_diff_grad(f, t, 1e-5));
      count += t.numel();
      if (e > worst) {
        worst = e;
        worst_name = name;
      }
    });
    r.passed = worst < tolerance;
    r.detail = std::to_string(count) + " parameters, max relative error " + fmt(worst) + " (" + worst_name + ")";
  });
}

CheckResult check_mac_formula(const std::vector<std::size_t>& patch_counts, const std::vector<std::size_t>& horizons) {
  return timed("mac_formula", [&](CheckResult& r) {
    std::mt19937_64 rng(11);
    std::size_t ok = 0, total = 0;
    for (auto n : patch_counts) {
      ViTConfig c = ViTConfig::reference();
      const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n))));
      if (side * side != n) throw std::invalid_argument("patch count must be a square");
      c.patch_size = c.image_size / side;
      c.validate();
      const auto w = ViTWeights::random(c, 3);
      const auto sched = STLayerSchedule::every_fourth(c.layers);
      for (auto k : horizons) {
        ++total;
        const auto f = flop_count(c, k);
        MacCounts layer, enc;
        const auto z = Tensor::zeros({(k + 1) * n, c.model_dim});
        std::vector<int> ts;
        for (std::size_t i = 0; i <= k; ++i) ts.push_back(static_cast<int>(i) - static_cast<int>(k));
        const std::vector<std::uint8_t> valid(k + 1, 1);
        st_layer_forward(z, c, w.layers[0], true, ts, valid, TemporalMask::causal, &layer);
        encode_video(random_clip(c, k + 1, rng), c, w, sched, {}, &enc);
        if (layer.spatial == f.spatial && layer.temporal == f.temporal && enc.spatial == c.layers * f.spatial &&
            enc.temporal == sched.temporal_count() * f.temporal)
          ++ok;
      }
    }
    r.passed = ok == total;
    r.detail = std::to_string(ok) + "/" + std::to_string(total) + " (n, K) pairs exact";
  });
}

CheckResult check_numeric_oracles(std::uint64_t seed) {
  return timed("softmax_norm_oracles", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 3.0);
    const std::size_t rows = 8, cols = 13;
    std::vector<double> v(rows * cols), s(cols);
    for (auto& x : v) x = nd(rng);
    for (auto& x : s) x = 0.5 + std::abs(nd(rng));
    const Tensor x({rows, cols}, v), scale({cols}, s);
    const auto sm = softmax_rows(x);
    const auto rn = rms_norm(x, scale);
    double worst = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      long double mx = -INFINITY, z = 0, ss = 0;
      for (std::size_t j = 0; j < cols; ++j) mx = std::max<long double>(mx, x.at(i, j));
      for (std::size_t j = 0; j < cols; ++j) z += std::exp(static_cast<long double>(x.at(i, j)) - mx);
      for (std::size_t j = 0; j < cols; ++j) ss += static_cast<long double>(x.at(i, j)) * x.at(i, j);
      const long double inv = 1.0L / std::sqrt(ss / cols + static_cast<long double>(kRmsNormEps));
      for (std::size_t j = 0; j < cols; ++j) {
        const long double p = std::exp(static_cast<long double>(x.at(i, j)) - mx) / z;
        worst = std::max(worst, static_cast<double>(std::abs(sm.at(i, j) - p) / std::max(p, 1e-300L)));
        const long double y = x.at(i, j) * inv * s[j];
        worst = std::max(worst, static_cast<double>(std::abs(rn.at(i, j) - y) / std::max(std::abs(y), 1e-12L)));
      }
    }
    r.passed = worst < 1e-12;
    r.detail = "max relative error " + fmt(worst);
  });
}

CheckResult check_language_memory(std::size_t events, std::uint64_t seed) {
  return timed("language_memory", [&](CheckResult& r) {
    // Independent event threads, randomly interleaved with their own order kept.
    const char* colors[] = {"red", "blue", "green", "yellow", "white", "black", "pink", "grey"};
    std::vector<std::vector<SubtaskRecord>> threads(5);
    using O = SubtaskOutcome;
    for (const char* c : colors) {
      const std::string place = std::string("place ") + c + " bowl in cabinet";
      threads[0].push_back({place, O::failure, 0});
      threads[0].push_back({place, O::success, 0});
    }
    for (int k = 1; k <= 4; ++k) {
      threads[1].push_back({"open drawer " + std::to_string(k), O::success, 0});
      if (k != 3) threads[1].push_back({"close drawer " + std::to_string(k), O::success, 0});
    }
    const int r_fail = 3;
    for (int i = 0; i < r_fail; ++i) threads[2].push_back({"pick up sponge", O::failure, 0});
    threads[2].push_back({"pick up sponge", O::success, 0});
    std::size_t used = 0;
    for (auto& t : threads) used += t.size();
    if (events < used + 4) throw std::invalid_argument("stream too short for the scripted threads");
    for (std::size_t i = 0; i + used < events; ++i) {
      if (i % 3 == 0) threads[3].push_back({"wipe table", O::success, 0});
      else threads[4].push_back({i % 3 == 1 ? "place cup in sink" : "open fridge", O::failure, 0});
    }

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> cursor(threads.size(), 0);
    std::vector<SubtaskRecord> stream;
    while (stream.size() < events) {
      const std::size_t t = rng() % threads.size();
      if (cursor[t] < threads[t].size()) {
        stream.push_back(threads[t][cursor[t]++]);
        stream.back().step_index = static_cast<int>(stream.size()) - 1;
      }
    }

    RuleSummarizer s;
    LanguageMemory m;
    std::string naive;
    bool failure_invariant = true, bounded = true;
    for (const auto& e : stream) {
      const auto next = update_memory(m, e, s);
      if (e.outcome == O::failure && !(next == m)) failure_invariant = false;
      if (next.rendered().size() > kDefaultMemoryChars) bounded = false;
      m = next;
      naive = naive_concat_update(naive, e, 1 << 20);
    }
    const auto text = m.rendered();
    const bool aggregated = m.contains("placed 8 bowls in cabinet");
    const bool cancelled = m.contains("opened drawer 3") && occurrences(text, "opened drawer") == 1 &&
                           occurrences(text, "closed drawer") == 0;
    const bool deduped = occurrences(text, "picked up sponge") == 1 && occurrences(text, "wiped table") == 1;
    const bool naive_copies = occurrences(naive, "pick up sponge") == static_cast<std::size_t>(r_fail + 1);
    r.passed = failure_invariant && bounded && aggregated && cancelled && deduped && naive_copies;
    std::ostringstream d;
    d << stream.size() << " events; failure_invariant=" << failure_invariant << " bounded=" << bounded
      << " aggregated=" << aggregated << " open_close_cancelled=" << cancelled << " deduplicated=" << deduped
      << " naive_keeps_r+1=" << naive_copies << "; memory: \"" << text << "\"";
    r.detail = d.str();
  });
}

}  // namespace mem
