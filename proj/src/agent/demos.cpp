#include <random>
#include <sstream>

#include "mem/agent.hpp"

namespace mem {

namespace {

// Hinge demonstrations pull the cued handle first, then correct to the
// other side after a rattle.
Action demonstrator(const EnvState& s) {
  if (auto h = std::get_if<HingeState>(&s.task); h && h->attempts == 0) {
    if (h->docked < 0) return h->cue == 0 ? Action::left : Action::right;
    return Action::open;
  }
  return expert_action(s);
}

bool starts_with_failure(const EnvState& s) {
  const auto& h = std::get<HingeState>(s.task);
  return h.cue != h.hinge;
}

nlohmann::json record_json(const SubtaskRecord& r) {
  return {{"instruction", r.instruction}, {"outcome", to_string(r.outcome)}, {"step_index", r.step_index}};
}

SubtaskRecord record_from(const nlohmann::json& j) {
  return {j.at("instruction").get<std::string>(), outcome_from_string(j.at("outcome").get<std::string>()),
          j.at("step_index").get<int>()};
}

}  // namespace

AnnotatedEpisode Episode::annotated() const { return {goal_text(config.kind), records, observation_summaries}; }

void to_json(nlohmann::json& j, const DemoOptions& o) {
  j = nlohmann::json{{"env", o.env},
                     {"count", o.count},
                     {"seed", o.seed},
                     {"failure_fraction", o.failure_fraction},
                     {"reveal_delays", o.reveal_delays},
                     {"hl_memory", o.hl_memory}};
}

void from_json(const nlohmann::json& j, DemoOptions& o) {
  DemoOptions d;
  o.env = j.contains("env") ? j.at("env").get<EnvConfig>() : d.env;
  o.count = j.value("count", d.count);
  o.seed = j.value("seed", d.seed);
  o.failure_fraction = j.value("failure_fraction", d.failure_fraction);
  o.reveal_delays = j.value("reveal_delays", d.reveal_delays);
  o.hl_memory = j.value("hl_memory", d.hl_memory);
}

std::vector<Episode> generate_demos(const DemoOptions& opts) {
  opts.env.validate();
  if (opts.failure_fraction < 0.0 || opts.failure_fraction > 1.0)
    throw std::invalid_argument("failure_fraction must lie in [0, 1]");
  const bool hinge = opts.env.kind == EnvKind::hinge_guess;
  if (opts.failure_fraction > 0.0 && !hinge)
    throw std::invalid_argument("failure injection is only defined for hinge_guess");
  if (opts.hl_memory.empty()) throw std::invalid_argument("hl_memory choices must not be empty");

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Episode> out;
  out.reserve(opts.count);
  for (std::size_t i = 0; i < opts.count; ++i) {
    EnvConfig cfg = opts.env;
    if (!opts.reveal_delays.empty()) cfg.reveal_delay = opts.reveal_delays[rng() % opts.reveal_delays.size()];
    cfg.validate();
    const bool hl_memory = opts.hl_memory[rng() % opts.hl_memory.size()];

    std::uint64_t seed = episode_seed(opts.seed, i);
    if (hinge) {
      // Seed rejection: keep drawing until the first cue is (in)correct as wanted.
      const bool want_failure = unit(rng) < opts.failure_fraction;
      for (std::uint64_t attempt = 0;; ++attempt) {
        seed = splitmix64(episode_seed(opts.seed, i) + attempt);
        if (starts_with_failure(reset(cfg, seed).first) == want_failure) break;
      }
    }

    auto [s, obs] = reset(cfg, seed);
    Episode ep;
    ep.config = cfg;
    ep.seed = seed;
    ep.hidden = s.hidden_value();
    ep.hl_memory = hl_memory;
    ep.injected_failure = hinge && starts_with_failure(s);
    HighLevelPolicy hl(cfg.kind, HLConfig{HLMode::scripted_oracle, hl_memory});
    while (!s.done) {
      auto h = hl.step(obs);
      (void)vocab_id(h.instruction);
      for (auto& e : h.events) {
        ep.records.push_back(e);
        ep.observation_summaries.push_back(observation_summary(cfg.kind, obs));
      }
      const Action a = demonstrator(s);
      ep.steps.push_back({obs, h.instruction, a});
      obs = step(s, {a}).observation;
    }
    ep.records.push_back({hl.last_instruction(), s.success ? SubtaskOutcome::success : SubtaskOutcome::failure,
                          s.step});
    ep.observation_summaries.push_back(observation_summary(cfg.kind, obs));
    ep.success = s.success;
    ep.score = s.score;
    out.push_back(std::move(ep));
  }
  return out;
}

std::string episodes_to_jsonl(const std::vector<Episode>& episodes) {
  std::string out;
  for (const auto& ep : episodes) {
    nlohmann::json j{{"schema_version", kEpisodeSchemaVersion},
                     {"config", ep.config},
                     {"seed", ep.seed},
                     {"hidden", ep.hidden},
                     {"hl_memory", ep.hl_memory},
                     {"injected_failure", ep.injected_failure},
                     {"actions", nlohmann::json::array()},
                     {"instructions", nlohmann::json::array()},
                     {"records", nlohmann::json::array()},
                     {"observation_summaries", ep.observation_summaries},
                     {"success", ep.success},
                     {"score", ep.score}};
    for (const auto& st : ep.steps) {
      j["actions"].push_back(to_string(st.action));
      j["instructions"].push_back(st.instruction);
    }
    for (const auto& r : ep.records) j["records"].push_back(record_json(r));
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Episode> episodes_from_jsonl(const std::string& text) {
  std::vector<Episode> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "episode line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + e.what());
    }
    if (j.value("schema_version", -1) != kEpisodeSchemaVersion)
      throw std::runtime_error(where + "unsupported schema_version");
    Episode ep;
    ep.config = j.at("config").get<EnvConfig>();
    ep.seed = j.at("seed").get<std::uint64_t>();
    ep.hidden = j.at("hidden").get<int>();
    ep.hl_memory = j.at("hl_memory").get<bool>();
    ep.injected_failure = j.at("injected_failure").get<bool>();
    ep.observation_summaries = j.at("observation_summaries").get<std::vector<std::string>>();
    ep.success = j.at("success").get<bool>();
    ep.score = j.at("score").get<double>();
    for (const auto& r : j.at("records")) ep.records.push_back(record_from(r));
    const auto& actions = j.at("actions");
    const auto& instr = j.at("instructions");
    if (actions.size() != instr.size()) throw std::runtime_error(where + "actions and instructions differ in length");

    // Frames come back by replaying the actions.
    auto [s, obs] = reset(ep.config, ep.seed, ep.hidden);
    for (std::size_t t = 0; t < actions.size(); ++t) {
      if (s.done) throw std::runtime_error(where + "episode ends before its last action");
      const Action a = action_from_string(actions[t].get<std::string>());
      ep.steps.push_back({obs, instr[t].get<std::string>(), a});
      obs = step(s, {a}).observation;
    }
    if (!s.done || s.success != ep.success || s.score != ep.score)
      throw std::runtime_error(where + "replay does not reproduce the recorded outcome");
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<TrainingPair> episode_training_pairs(const std::vector<Episode>& episodes, const Summarizer& s) {
  std::vector<TrainingPair> out;
  for (const auto& ep : episodes) {
    HighLevelPolicy hl(ep.config.kind, HLConfig{HLMode::scripted_oracle, ep.hl_memory}, &s);
    for (const auto& st : ep.steps) {
      TrainingPair p;
      p.m_t = hl.memory();
      auto h = hl.step(st.observation);
      p.observation_summary = observation_summary(ep.config.kind, st.observation);
      p.goal = hl.goal();
      p.l_next = h.instruction;
      p.m_next = h.memory;
      p.outcome = h.events.empty() ? SubtaskOutcome::ongoing : h.events.back().outcome;
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace mem
