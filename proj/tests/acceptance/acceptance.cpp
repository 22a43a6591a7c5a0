// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// if any fails. Usage: acceptance <path-to-memctl> [--only N,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "mem/agent.hpp"
#include "mem/bench.hpp"
#include "mem/checks.hpp"

namespace fs = std::filesystem;
using namespace mem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

Outcome from_check(const CheckResult& r) { return {r.passed, r.detail}; }

bool near(double rate, double p, double tol) { return std::abs(rate - p) <= tol; }

constexpr std::size_t kEvalEpisodes = 400;
constexpr std::uint64_t kEvalSeed = 7777;

// Demonstrations shared by the memory experiments: reveal inside and outside
// the K = 5 window, HL memory on and off.
std::vector<Episode> reveal_demos(EnvKind kind) {
  DemoOptions o;
  o.env.kind = kind;
  o.count = 400;
  o.seed = 1;
  o.reveal_delays = {0, 6};
  o.hl_memory = {true, false};
  return generate_demos(o);
}

LowLevelPolicy train(const std::vector<Episode>& demos, EncoderVariant v, std::size_t steps) {
  PolicyConfig pc;
  pc.variant = v;
  TrainConfig tc;
  tc.steps = steps;
  tc.seed = 3;
  return LowLevelPolicy(pc, train_bc(demos, pc, tc).weights);
}

EvalReport run_eval(const LowLevelPolicy& p, EnvKind kind, int delay, bool hl_memory) {
  EvalConfig ec;
  ec.env.kind = kind;
  ec.env.reveal_delay = delay;
  ec.episodes = kEvalEpisodes;
  ec.seed = kEvalSeed;
  ec.hl.use_memory = hl_memory;
  return evaluate(&p, ec);
}

std::string pct(const EvalReport& r) { return fmt(100.0 * r.success_rate, 1) + "%"; }

// Trained policies reused across criteria.
struct Cache {
  std::map<std::pair<EnvKind, EncoderVariant>, std::unique_ptr<LowLevelPolicy>> policies;
  std::map<EnvKind, std::vector<Episode>> demos;

  const LowLevelPolicy& get(EnvKind kind, EncoderVariant v) {
    auto& slot = policies[{kind, v}];
    if (!slot) {
      if (!demos.count(kind)) demos[kind] = reveal_demos(kind);
      const std::size_t steps = v == EncoderVariant::single_frame ? 600 : 1000;
      slot = std::make_unique<LowLevelPolicy>(train(demos[kind], v, steps));
    }
    return *slot;
  }
};

Cache cache;

// ---------------------------------------------------------------------------

Outcome c1() { return from_check(check_single_frame_equivalence(ViTConfig::reference(), 20, 101)); }

Outcome c2() { return from_check(check_causality(ViTConfig::reference(), 3, 10, 202)); }

Outcome c3() { return from_check(check_no_new_parameters(5, 303)); }

Outcome c4() { return from_check(check_encoder_gradients(gradient_check_config(), 2, 404, 1e-4)); }

Outcome c5() {
  const auto macs = check_mac_formula({4, 16}, {0, 1, 5, 17});
  const auto ref = ViTConfig::reference();
  const double analytic = analytic_mac_ratio(ref, 17);

  BenchConfig bc;
  bc.repeats = 20;
  bc.warmup = 3;
  bc.horizons = {0, 1, 5, 11, 17};
  bc.scopes = {BenchScope::encoder};
  const auto naive17 = run_naive_joint(bc, 17, BenchScope::layer);
  const auto fact17 = run_factorized(bc, 17, BenchScope::layer);
  const double measured = static_cast<double>(naive17.mac_count) / static_cast<double>(fact17.mac_count);

  std::vector<double> ratios;
  for (auto k : bc.horizons) {
    const auto a = run_naive_joint(bc, k, BenchScope::encoder);
    const auto b = run_factorized(bc, k, BenchScope::encoder);
    ratios.push_back(a.wall_ms_median / b.wall_ms_median);
  }
  std::size_t inversions = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i)
    for (std::size_t j = i + 1; j < ratios.size(); ++j) inversions += ratios[i] > ratios[j];

  std::string rs;
  for (double r : ratios) rs += (rs.empty() ? "" : " ") + fmt(r, 2);
  return {macs.passed && measured > 3.0 && inversions <= 1,
          macs.detail + "; layer MAC ratio n=16 K=17 " + fmt(measured, 2) + " (analytic " + fmt(analytic, 2) +
              "); encoder wall ratio by K " + rs + ", inversions " + std::to_string(inversions)};
}

Outcome c6() { return from_check(check_language_memory(100, 606)); }

Outcome c7() {
  const auto& find = cache.get(EnvKind::find_object, EncoderVariant::single_frame);
  const auto& scoop = cache.get(EnvKind::scoop_count, EncoderVariant::single_frame);
  const auto f = run_eval(find, EnvKind::find_object, 6, false);
  const auto s = run_eval(scoop, EnvKind::scoop_count, 6, false);
  return {near(f.success_rate, 0.25, 0.07) && near(s.success_rate, 0.50, 0.08),
          "single_frame find_object " + pct(f) + " (25 +/- 7), scoop_count " + pct(s) + " (50 +/- 8)"};
}

Outcome c8() {
  bool ok = true;
  std::string d;
  for (auto [kind, chance, tol] : {std::tuple{EnvKind::find_object, 0.25, 0.07},
                                   std::tuple{EnvKind::scoop_count, 0.50, 0.08}}) {
    const auto& p = cache.get(kind, EncoderVariant::mem_video);
    const auto in_window = run_eval(p, kind, 0, false);
    const auto with_hl = run_eval(p, kind, 6, true);
    const auto video_only = run_eval(p, kind, 6, false);
    ok = ok && in_window.success_rate >= 0.90 && with_hl.success_rate >= 0.85 &&
         near(video_only.success_rate, chance, tol);
    d += (d.empty() ? "" : "; ") + to_string(kind) + ": in-window " + pct(in_window) + ", outside+HL memory " +
         pct(with_hl) + ", outside video-only " + pct(video_only);
  }
  return {ok, d};
}

Outcome c9() {
  DemoOptions o;
  o.env.kind = EnvKind::hinge_guess;
  o.count = 400;
  o.seed = 9;
  o.failure_fraction = 0.5;
  o.hl_memory = {false};
  const auto demos = generate_demos(o);
  std::size_t injected = 0;
  for (const auto& e : demos) injected += e.injected_failure;
  const auto mem = train(demos, EncoderVariant::mem_video, 2000);
  const auto single = train(demos, EncoderVariant::single_frame, 600);
  const auto m = run_eval(mem, EnvKind::hinge_guess, 0, false);
  const auto s = run_eval(single, EnvKind::hinge_guess, 0, false);

  // Single frame: first-pull success vs second-pull success after a failed first pull.
  std::size_t first = 0, failed_first = 0, second = 0;
  for (const auto& l : s.log) {
    if (l.first_success_attempt == 1) ++first;
    else {
      ++failed_first;
      second += l.first_success_attempt == 2;
    }
  }
  const double p1 = static_cast<double>(first) / s.log.size();
  const double p2 = failed_first ? static_cast<double>(second) / failed_first : 0.0;
  const double se = std::sqrt(p1 * (1 - p1) / s.log.size() + (failed_first ? p2 * (1 - p2) / failed_first : 0.0));
  const double band = 3.0 * std::sqrt(0.75 * 0.25 / kEvalEpisodes);
  const bool ok = m.success_rate >= 0.90 && std::abs(s.success_rate - 0.75) <= band && p2 <= p1 + 2.0 * se;
  return {ok, std::to_string(injected) + "/400 demos with injected failure; mem_video within 2 pulls " + pct(m) +
                  "; single_frame " + pct(s) + " (75 +/- " + fmt(100 * band, 1) + "), P(first pull) " + fmt(p1, 3) +
                  ", P(second | first failed) " + fmt(p2, 3)};
}

Outcome c10() {
  // Bitwise isolation on random inputs.
  PolicyConfig pool_cfg, prop_cfg;
  pool_cfg.variant = EncoderVariant::pool_memory;
  prop_cfg.variant = EncoderVariant::proprio_memory;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto image = [&] {
    std::vector<double> v(4 * 16 * 16);
    for (auto& x : v) x = u(rng);
    return Tensor({4, 16, 16}, v);
  };
  std::size_t pool_ok = 0, prop_ok = 0;
  const std::size_t trials = 10;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Tensor> frames;
    std::vector<std::vector<double>> prop;
    for (int f = 0; f < 6; ++f) {
      frames.push_back(image());
      prop.push_back({u(rng), u(rng), u(rng), u(rng)});
    }
    const auto clip = VideoClip::from_frames(frames, prop);
    const auto pw = PolicyWeights::random(pool_cfg, rng());
    auto shuffled = clip;
    std::shuffle(shuffled.frames.begin(), shuffled.frames.end() - 1, rng);
    pool_ok += bit_equal(encode_window(pool_cfg, pw, clip), encode_window(pool_cfg, pw, shuffled));
    const auto qw = PolicyWeights::random(prop_cfg, rng());
    auto perturbed = clip;
    for (std::size_t f = 0; f + 1 < perturbed.frames.size(); ++f) perturbed.frames[f] = image();
    prop_ok += bit_equal(encode_window(prop_cfg, qw, clip), encode_window(prop_cfg, qw, perturbed));
  }

  const auto& prop = cache.get(EnvKind::find_object, EncoderVariant::proprio_memory);
  const auto& video = cache.get(EnvKind::find_object, EncoderVariant::mem_video);
  const auto pr = run_eval(prop, EnvKind::find_object, 0, false);
  const auto vr = run_eval(video, EnvKind::find_object, 0, false);
  const bool ok = pool_ok == trials && prop_ok == trials && near(pr.success_rate, 0.25, 0.07) &&
                  vr.success_rate > 0.90;
  return {ok, "pool permutation-invariant " + std::to_string(pool_ok) + "/" + std::to_string(trials) +
                  ", proprio image-invariant " + std::to_string(prop_ok) + "/" + std::to_string(trials) +
                  "; find_object proprio_memory " + pct(pr) + ", mem_video " + pct(vr)};
}

Outcome c11() {
  bool ok = true;
  std::string d;
  for (auto kind : {EnvKind::find_object, EnvKind::scoop_count}) {
    const auto path = fs::temp_directory_path() / ("mem_acceptance_" + to_string(kind) + ".ckpt");
    save_policy(cache.get(kind, EncoderVariant::mem_video), path);
    const auto k5 = load_policy(path);
    fs::remove(path);
    const auto a = run_eval(k5, kind, 0, false);
    const auto b = run_eval(k5.with_horizon(17), kind, 0, false);
    ok = ok && b.success_rate >= a.success_rate - 0.05;
    d += (d.empty() ? "" : "; ") + to_string(kind) + " K=5 " + pct(a) + " vs padded K=17 " + pct(b);
  }
  return {ok, d};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome c12(const std::string& memctl) {
  if (memctl.empty()) return {false, "memctl path not given"};
  const auto root = fs::temp_directory_path() / "mem_acceptance_determinism";
  fs::remove_all(root);
  const char* outputs[] = {"data/episodes.jsonl", "data/pairs.jsonl", "run/policy.ckpt", "run/loss.csv",
                           "run/hl_table.json",   "eval/summary.json", "eval/episodes.csv"};
  for (const char* run : {"a", "b"}) {
    const auto dir = root / run;
    fs::create_directories(dir);
    const std::string common = " --env scoop_count --seed 5 --set datagen.reveal_delays=[0,6] --set train.steps=60"
                               " --set eval.episodes=40 --set paths.data_dir=" +
                               (dir / "data").string() + " --set paths.run_dir=" + (dir / "run").string() +
                               " --set paths.eval_dir=" + (dir / "eval").string();
    for (const char* cmd : {"datagen --count 40", "train", "eval"}) {
      const std::string line = "\"" + memctl + "\" " + cmd + common + " > /dev/null 2>&1";
      if (const int rc = std::system(line.c_str()); rc != 0)
        return {false, std::string(cmd) + " exited with " + std::to_string(rc)};
    }
  }
  std::size_t same = 0;
  std::string diff;
  for (const char* o : outputs) {
    const auto a = slurp(root / "a" / o), b = slurp(root / "b" / o);
    if (!a.empty() && a == b) ++same;
    else diff += std::string(" ") + o;
  }
  fs::remove_all(root);
  const std::size_t total = std::size(outputs);
  return {same == total, std::to_string(same) + "/" + std::to_string(total) + " outputs byte-identical" +
                             (diff.empty() ? "" : "; differing:" + diff)};
}

}  // namespace

int main(int argc, char** argv) {
  std::string memctl = argc > 1 ? argv[1] : "";
  std::set<int> only;
  for (int i = 2; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--only") {
      std::stringstream s(argv[i + 1]);
      for (std::string t; std::getline(s, t, ',');) only.insert(std::stoi(t));
    }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"k1_exact_equivalence", c1},
      {"causal_mask", c2},
      {"no_new_parameters", c3},
      {"gradient_check", c4},
      {"attention_complexity", c5},
      {"language_memory_properties", c6},
      {"memoryless_chance_rates", c7},
      {"memory_capability_matrix", c8},
      {"in_context_adaptation", c9},
      {"baseline_isolation", c10},
      {"horizon_extension", c11},
      {"cli_determinism", [&] { return c12(memctl); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("C%-2d %s %-28s %7.1fs  %s\n", id, o.passed ? "PASS" : "FAIL", criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
    failed += !o.passed;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
