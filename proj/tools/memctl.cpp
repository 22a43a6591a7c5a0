// memctl: self-test, demo generation, training, evaluation and benchmarks.
//
// Exit codes: 0 success, 1 unexpected error, 2 usage or config error,
// 3 data / IO error (missing or corrupt inputs, unwritable outputs),
// 4 invariant failure (self-test check failed, training diverged).

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mem/agent.hpp"
#include "mem/bench.hpp"
#include "mem/checks.hpp"
#include "mem/external_summarizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mem;

namespace {

enum Exit { kOk = 0, kGeneric = 1, kUsage = 2, kData = 3, kInvariant = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kConfigVersion = 1;

struct Paths {
  std::string data_dir = "data";
  std::string run_dir = "run";
  std::string eval_dir = "eval";
  std::string checkpoint;  // empty: <run_dir>/policy.ckpt
  std::string bench_prefix = "bench/bench";
};

struct SummarizerChoice {
  std::string kind = "rule";  // rule | external
  ExternalSummarizerConfig external;
};

struct DatagenSection {
  std::size_t count = 400;
  double failure_fraction = 0.0;
  std::vector<int> reveal_delays;
  std::vector<bool> hl_memory{true};
};

struct EvalSection {
  std::size_t episodes = 400;
  unsigned threads = 1;
  HLConfig hl;
  std::uint64_t seed_offset = 1000003;  // eval seeds differ from demo seeds
};

// Every run writes this back with defaults filled in.
struct RunConfig {
  std::uint64_t seed = 0;
  EnvConfig env;
  DatagenSection datagen;
  PolicyConfig policy;
  TrainConfig train;
  EvalSection eval;
  BenchConfig bench;
  SummarizerChoice summarizer;
  Paths paths;
};

json to_json(const RunConfig& c) {
  json ext = c.summarizer.external;
  return json{{"config_version", kConfigVersion},
              {"seed", c.seed},
              {"env", c.env},
              {"datagen",
               {{"count", c.datagen.count},
                {"failure_fraction", c.datagen.failure_fraction},
                {"reveal_delays", c.datagen.reveal_delays},
                {"hl_memory", c.datagen.hl_memory}}},
              {"policy", c.policy},
              {"train", c.train},
              {"eval",
               {{"episodes", c.eval.episodes},
                {"threads", c.eval.threads},
                {"hl", c.eval.hl},
                {"seed_offset", c.eval.seed_offset}}},
              {"bench", c.bench},
              {"summarizer", {{"kind", c.summarizer.kind}, {"external", ext}}},
              {"paths",
               {{"data_dir", c.paths.data_dir},
                {"run_dir", c.paths.run_dir},
                {"eval_dir", c.paths.eval_dir},
                {"checkpoint", c.paths.checkpoint},
                {"bench_prefix", c.paths.bench_prefix}}}};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw UsageError("unknown config key " + where + "." + k);
  }
}

RunConfig from_json_config(const json& j) {
  check_keys(j, {"config_version", "seed", "env", "datagen", "policy", "train", "eval", "bench", "summarizer", "paths"},
             "config");
  if (j.value("config_version", kConfigVersion) != kConfigVersion)
    throw UsageError("unsupported config_version " + j.at("config_version").dump());
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("env")) c.env = j.at("env").get<EnvConfig>();
    if (j.contains("datagen")) {
      const auto& d = j.at("datagen");
      check_keys(d, {"count", "failure_fraction", "reveal_delays", "hl_memory"}, "datagen");
      c.datagen.count = d.value("count", c.datagen.count);
      c.datagen.failure_fraction = d.value("failure_fraction", c.datagen.failure_fraction);
      c.datagen.reveal_delays = d.value("reveal_delays", c.datagen.reveal_delays);
      c.datagen.hl_memory = d.value("hl_memory", c.datagen.hl_memory);
    }
    if (j.contains("policy")) c.policy = j.at("policy").get<PolicyConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"episodes", "threads", "hl", "seed_offset"}, "eval");
      c.eval.episodes = e.value("episodes", c.eval.episodes);
      c.eval.threads = e.value("threads", c.eval.threads);
      if (e.contains("hl")) c.eval.hl = e.at("hl").get<HLConfig>();
      c.eval.seed_offset = e.value("seed_offset", c.eval.seed_offset);
    }
    if (j.contains("bench")) c.bench = j.at("bench").get<BenchConfig>();
    if (j.contains("summarizer")) {
      const auto& s = j.at("summarizer");
      check_keys(s, {"kind", "external"}, "summarizer");
      c.summarizer.kind = s.value("kind", c.summarizer.kind);
      if (s.contains("external")) c.summarizer.external = s.at("external").get<ExternalSummarizerConfig>();
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      check_keys(p, {"data_dir", "run_dir", "eval_dir", "checkpoint", "bench_prefix"}, "paths");
      c.paths.data_dir = p.value("data_dir", c.paths.data_dir);
      c.paths.run_dir = p.value("run_dir", c.paths.run_dir);
      c.paths.eval_dir = p.value("eval_dir", c.paths.eval_dir);
      c.paths.checkpoint = p.value("checkpoint", c.paths.checkpoint);
      c.paths.bench_prefix = p.value("bench_prefix", c.paths.bench_prefix);
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (c.summarizer.kind != "rule" && c.summarizer.kind != "external")
    throw UsageError("summarizer.kind must be rule or external");
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot read " + p.string());
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  try {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
  } catch (const fs::filesystem_error& e) {
    throw DataError(e.what());
  }
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("write failed: " + p.string());
}

// Shared flags for the config-driven subcommands.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;  // key.path=json overrides
  std::optional<std::uint64_t> seed;
  std::optional<std::string> env_kind;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "JSON run config");
  sub->add_option("--set", c.sets, "override a config value, e.g. --set train.steps=200 (value parsed as JSON)");
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--env", c.env_kind, "environment kind");
}

void apply_set(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + assignment);
  json* node = &j;
  std::stringstream keys(assignment.substr(0, eq));
  for (std::string k; std::getline(keys, k, '.');) {
    if (k.empty()) throw UsageError("empty key in --set " + assignment);
    if (!node->is_object()) *node = json::object();
    node = &(*node)[k];
  }
  const auto raw = assignment.substr(eq + 1);
  json v = json::parse(raw, nullptr, false);
  *node = v.is_discarded() ? json(raw) : v;
}

// defaults < config file < environment (paths, endpoint) < flags.
RunConfig resolve(const Common& c) {
  json j = json::object();
  if (!c.config_path.empty()) {
    try {
      j = json::parse(read_file(c.config_path));
    } catch (const json::exception& e) {
      throw UsageError("config " + c.config_path + ": " + e.what());
    }
  }
  for (const auto& s : c.sets) apply_set(j, s);
  if (c.seed) j["seed"] = *c.seed;
  if (c.env_kind) j["env"]["kind"] = *c.env_kind;
  auto cfg = from_json_config(j);
  auto env = [](const char* name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name); v && *v) return std::string(v);
    return std::nullopt;
  };
  if (auto v = env("MEM_DATA_DIR")) cfg.paths.data_dir = *v;
  if (auto v = env("MEM_RUN_DIR")) cfg.paths.run_dir = *v;
  if (auto v = env("MEM_EVAL_DIR")) cfg.paths.eval_dir = *v;
  if (auto v = env("MEM_CHECKPOINT")) cfg.paths.checkpoint = *v;
  if (auto v = env("MEM_SUMMARIZER_ENDPOINT")) cfg.summarizer.external.endpoint = *v;
  return cfg;
}

fs::path checkpoint_path(const RunConfig& c) {
  return c.paths.checkpoint.empty() ? fs::path(c.paths.run_dir) / "policy.ckpt" : fs::path(c.paths.checkpoint);
}

std::unique_ptr<Summarizer> make_summarizer(const RunConfig& c) {
  if (c.summarizer.kind == "external") return std::make_unique<ExternalSummarizer>(c.summarizer.external);
  return std::make_unique<RuleSummarizer>();
}

// ---------------------------------------------------------------------------

int cmd_selftest(const std::string& fault, const std::string& report_path) {
  TemporalMask mask = TemporalMask::causal;
  if (fault == "temporal-mask") mask = TemporalMask::full;
  else if (!fault.empty()) throw UsageError("unknown fault: " + fault);

  const auto ref = ViTConfig::reference();
  std::vector<CheckResult> results{
      check_single_frame_equivalence(ref, 5, 1),
      check_causality(ref, 3, 3, 2, mask),
      check_no_new_parameters(5, 3),
      check_encoder_gradients(gradient_check_config(), 2, 4),
      check_mac_formula({4, 16}, {0, 1, 5}),
      check_numeric_oracles(5),
      check_language_memory(100, 6),
  };
  bool ok = true;
  json report = json::array();
  for (const auto& r : results) {
    std::printf("%-26s %s  %8.3fs  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.seconds, r.detail.c_str());
    ok = ok && r.passed;
    report.push_back({{"name", r.name}, {"passed", r.passed}, {"seconds", r.seconds}, {"detail", r.detail}});
  }
  if (!report_path.empty()) write_file(report_path, report.dump(2) + "\n");
  std::printf("selftest: %s\n", ok ? "all checks passed" : "FAILED");
  return ok ? kOk : kInvariant;
}

int cmd_datagen(const RunConfig& c) {
  DemoOptions o;
  o.env = c.env;
  o.count = c.datagen.count;
  o.seed = c.seed;
  o.failure_fraction = c.datagen.failure_fraction;
  o.reveal_delays = c.datagen.reveal_delays;
  o.hl_memory = c.datagen.hl_memory;
  std::vector<Episode> episodes;
  try {
    episodes = generate_demos(o);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto summarizer = make_summarizer(c);
  const auto pairs = episode_training_pairs(episodes, *summarizer);
  const fs::path dir = c.paths.data_dir;
  write_file(dir / "episodes.jsonl", episodes_to_jsonl(episodes));
  write_file(dir / "pairs.jsonl", pairs_to_jsonl(pairs));
  write_file(dir / "resolved_config.json", to_json(c).dump(2) + "\n");
  std::size_t steps = 0, failures = 0, successes = 0;
  for (const auto& e : episodes) {
    steps += e.steps.size();
    failures += e.injected_failure;
    successes += e.success;
  }
  std::printf("datagen: %zu episodes (%zu steps, %zu with injected failure, %zu successful), %zu pairs -> %s\n",
              episodes.size(), steps, failures, successes, pairs.size(), dir.string().c_str());
  return kOk;
}

std::vector<Episode> load_episodes(const fs::path& dir) {
  try {
    return episodes_from_jsonl(read_file(dir / "episodes.jsonl"));
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

int cmd_train(const RunConfig& c) {
  const auto episodes = load_episodes(c.paths.data_dir);
  if (episodes.empty()) throw DataError("dataset " + c.paths.data_dir + " has no episodes");
  for (const auto& e : episodes)
    if (e.config.kind != c.env.kind)
      throw UsageError("dataset holds " + to_string(e.config.kind) + " episodes but env.kind is " +
                       to_string(c.env.kind));
  try {
    c.policy.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  auto tc = c.train;
  tc.seed = c.seed + tc.seed;  // train.seed offsets the master seed
  const std::size_t every = std::max<std::size_t>(1, tc.steps / 10);
  TrainResult r;
  try {
    r = train_bc(episodes, c.policy, tc, [&](std::size_t step, double loss) {
      if (step % every == 0 || step + 1 == tc.steps) std::fprintf(stderr, "step %zu loss %.6f\n", step, loss);
    });
  } catch (const TrainingError& e) {
    throw InvariantError(e.what());
  }
  const fs::path dir = c.paths.run_dir;
  const LowLevelPolicy policy(c.policy, r.weights);
  const auto ckpt = checkpoint_path(c);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  try {
    save_policy(policy, ckpt, {{"env", c.env}, {"seed", c.seed}});
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  std::ostringstream loss;
  loss << "step,loss\n";
  loss.precision(17);
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) loss << i << ',' << r.loss_curve[i] << '\n';
  write_file(dir / "loss.csv", loss.str());

  // The small learned HL is a table over the language-memory pairs, if any.
  if (fs::exists(fs::path(c.paths.data_dir) / "pairs.jsonl")) {
    std::vector<TrainingPair> pairs;
    try {
      pairs = pairs_from_jsonl(read_file(fs::path(c.paths.data_dir) / "pairs.jsonl"));
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
    write_file(dir / "hl_table.json", LearnedHL::fit(pairs).to_json().dump() + "\n");
  }
  write_file(dir / "resolved_config.json", to_json(c).dump(2) + "\n");
  std::printf("train: %zu steps, final loss %.6f -> %s\n", r.loss_curve.size(),
              r.loss_curve.empty() ? 0.0 : r.loss_curve.back(), ckpt.string().c_str());
  return kOk;
}

int cmd_eval(const RunConfig& c, bool expert, std::optional<std::size_t> horizon) {
  std::optional<LowLevelPolicy> policy;
  if (!expert) {
    try {
      policy = load_policy(checkpoint_path(c));
    } catch (const std::exception& e) {
      throw DataError(e.what());
    }
    if (horizon) policy = policy->with_horizon(*horizon);
  }
  std::optional<LearnedHL> table;
  if (c.eval.hl.mode == HLMode::learned_small) {
    const auto p = fs::path(c.paths.run_dir) / "hl_table.json";
    try {
      table = LearnedHL::from_json(json::parse(read_file(p)));
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(p.string() + ": " + e.what());
    }
  }
  EvalConfig ec;
  ec.env = c.env;
  ec.episodes = c.eval.episodes;
  ec.seed = c.seed + c.eval.seed_offset;
  ec.hl = c.eval.hl;
  ec.threads = c.eval.threads;
  EvalReport rep;
  try {
    rep = evaluate(policy ? &*policy : nullptr, ec, table ? &*table : nullptr);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  auto summary = rep.summary_json();
  summary["env"] = to_string(c.env.kind);
  summary["policy"] = expert ? json("expert") : json(to_string(policy->config().variant));
  summary["horizon"] = policy ? policy->config().horizon : 0;
  const fs::path dir = c.paths.eval_dir;
  write_file(dir / "summary.json", summary.dump(2) + "\n");
  write_file(dir / "episodes.csv", rep.log_csv());
  write_file(dir / "resolved_config.json", to_json(c).dump(2) + "\n");
  std::printf("eval: %s success %.4f +/- %.4f, mean score %.4f +/- %.4f over %zu episodes\n",
              to_string(c.env.kind).c_str(), rep.success_rate, rep.success_se, rep.mean_score, rep.score_se,
              rep.episodes);
  return kOk;
}

int cmd_bench(RunConfig c, std::optional<std::size_t> n, const std::vector<std::size_t>& ks,
              std::optional<std::size_t> repeats, std::optional<std::size_t> warmup,
              std::optional<std::string> out) {
  if (n) {
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(*n))));
    if (side == 0 || side * side != *n || c.bench.vit.image_size % side)
      throw UsageError("--n must be a square whose side divides the image size");
    c.bench.vit.patch_size = c.bench.vit.image_size / side;
  }
  if (!ks.empty()) c.bench.horizons = ks;
  if (repeats) c.bench.repeats = *repeats;
  if (warmup) c.bench.warmup = *warmup;
  if (out) c.paths.bench_prefix = *out;
  try {
    c.bench.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto rows = run_bench(c.bench);
  try {
    emit_report(rows, c.bench, c.paths.bench_prefix);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
  write_file(c.paths.bench_prefix + ".resolved_config.json", to_json(c).dump(2) + "\n");
  std::cout << bench_csv(rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memctl: multi-scale memory agent toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "memctl 1.0");

  std::string fault, report;
  auto* selftest = app.add_subcommand("selftest", "run the fast invariant suite");
  selftest->add_option("--inject-fault", fault, "corrupt a component on purpose (temporal-mask)");
  selftest->add_option("--report", report, "also write the report as JSON");

  Common dg, tr, ev, be;
  auto* datagen = app.add_subcommand("datagen", "generate demonstrations and language-memory pairs");
  add_common(datagen, dg);
  std::optional<std::size_t> count;
  std::optional<std::string> dg_out;
  datagen->add_option("--count", count, "number of episodes");
  datagen->add_option("--out", dg_out, "output directory");

  auto* train = app.add_subcommand("train", "behaviour-clone a low-level policy");
  add_common(train, tr);
  std::optional<std::string> tr_data, tr_out;
  train->add_option("--data", tr_data, "dataset directory");
  train->add_option("--out", tr_out, "run directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, ev);
  std::optional<std::string> ev_ckpt, ev_out;
  std::optional<std::size_t> ev_horizon;
  bool expert = false;
  eval->add_option("--checkpoint", ev_ckpt, "policy checkpoint");
  eval->add_option("--out", ev_out, "output directory");
  eval->add_option("--horizon", ev_horizon, "run the checkpoint with a different K");
  eval->add_flag("--expert", expert, "use the scripted expert instead of a checkpoint");

  auto* bench = app.add_subcommand("bench", "naive vs factorized attention cost");
  add_common(bench, be);
  std::optional<std::size_t> b_n, b_rep, b_warm;
  std::vector<std::size_t> b_ks;
  std::optional<std::string> b_out;
  bench->add_option("--n", b_n, "patches per frame");
  bench->add_option("--k", b_ks, "horizons K")->delimiter(',');
  bench->add_option("--repeats", b_rep, "timed repeats");
  bench->add_option("--warmup", b_warm, "untimed warmup runs");
  bench->add_option("--out", b_out, "output prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (selftest->parsed()) return cmd_selftest(fault, report);
    if (datagen->parsed()) {
      auto c = resolve(dg);
      if (count) c.datagen.count = *count;
      if (dg_out) c.paths.data_dir = *dg_out;
      return cmd_datagen(c);
    }
    if (train->parsed()) {
      auto c = resolve(tr);
      if (tr_data) c.paths.data_dir = *tr_data;
      if (tr_out) c.paths.run_dir = *tr_out;
      return cmd_train(c);
    }
    if (eval->parsed()) {
      auto c = resolve(ev);
      if (ev_ckpt) c.paths.checkpoint = *ev_ckpt;
      if (ev_out) c.paths.eval_dir = *ev_out;
      return cmd_eval(c, expert, ev_horizon);
    }
    if (bench->parsed()) return cmd_bench(resolve(be), b_n, b_ks, b_rep, b_warm, b_out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const TransportError& e) {
    std::fprintf(stderr, "summarizer endpoint: %s\n", e.what());
    return kData;
  } catch (const InvariantError& e) {
    std::fprintf(stderr, "invariant failure: %s\n", e.what());
    return kInvariant;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kGeneric;
  }
  return kGeneric;
}
