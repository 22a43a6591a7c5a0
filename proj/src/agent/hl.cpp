#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

#include "mem/agent.hpp"

namespace mem {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

const std::array<const char*, 16> kOrdinals{"first",   "second",     "third",      "fourth",
                                            "fifth",   "sixth",      "seventh",    "eighth",
                                            "ninth",   "tenth",      "eleventh",   "twelfth",
                                            "thirteenth", "fourteenth", "fifteenth", "sixteenth"};

std::string ordinal(unsigned k) {  // 1-based
  if (k == 0 || k > kOrdinals.size()) throw std::out_of_range("ordinal out of range");
  return kOrdinals[k - 1];
}

std::vector<std::string> build_vocabulary() {
  std::vector<std::string> v{"wait", "done"};
  for (auto k : all_env_kinds()) v.push_back(goal_text(k));
  for (auto k : all_env_kinds())
    for (auto& s : subtask_vocabulary(k)) v.push_back(s);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& s : v)
    if (seen.insert(s).second) out.push_back(s);
  return out;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

int trailing_number(const std::string& s) {
  static const std::regex num(R"((\d+)\s*$)");
  std::smatch m;
  if (!std::regex_search(s, m, num)) return -1;
  return std::stoi(m[1].str());
}

// Number at the end of the location of a placed fact of this class, e.g. the
// drawer in "placed object in drawer 2".
std::optional<int> placed_at(const LanguageMemory& m, const std::string& cls, const std::string& where) {
  std::optional<int> out;
  for (const auto& f : m.facts)
    if (f.kind == FactKind::placed && base_class(f.object) == cls && f.location &&
        starts_with(*f.location, where))
      out = trailing_number(*f.location);
  return out;
}

unsigned placed_count(const LanguageMemory& m, const std::string& cls, const std::string& location) {
  unsigned n = 0;
  for (const auto& f : m.facts)
    if (f.kind == FactKind::placed && base_class(f.object) == cls && f.location == location)
      n += f.count.value_or(1);
  return n;
}

std::optional<unsigned> last_counted(const LanguageMemory& m, const std::string& cls) {
  std::optional<unsigned> out;
  for (const auto& f : m.facts)
    if (f.kind == FactKind::counted && singularize(base_class(f.object)) == cls) out = f.count.value_or(0);
  return out;
}

std::optional<int> completed_at(const LanguageMemory& m, const std::string& prefix) {
  std::optional<int> out;
  for (const auto& f : m.facts)
    if (f.kind == FactKind::completed_step && starts_with(f.object, prefix)) out = trailing_number(f.object);
  return out;
}

int step_from_proprio(const Observation& obs, int period) {
  return static_cast<int>(std::lround(obs.proprio.at(3) * period));
}

SubtaskRecord ok(std::string s, int step) { return {std::move(s), SubtaskOutcome::success, step}; }

OracleDecision decide_find(const Observation& obs, const LanguageMemory& m, const std::string& prev) {
  const auto v = decode(EnvKind::find_object, obs);
  OracleDecision d;
  bool any_open = std::find(v.opened.begin(), v.opened.end(), true) != v.opened.end();
  if (obs.step == 0 && v.marker >= 0 && !any_open)
    d.events.push_back(ok("the person put object into drawer " + std::to_string(v.marker + 1), obs.step));
  for (int k = 0; k < static_cast<int>(v.opened.size()); ++k)
    if (v.opened[k] && prev == "open drawer " + std::to_string(k + 1)) d.events.push_back(ok(prev, obs.step));
  if (!v.go) {
    d.instruction = "wait";
  } else if (v.marker >= 0 && v.opened[v.marker]) {
    d.instruction = "pick up object";
  } else {
    // Memory may already hold the reveal; a fact from this very frame counts too.
    LanguageMemory probe = m;
    for (auto& e : d.events) probe.facts.push_back(parse_instruction(e.instruction));
    if (auto k = placed_at(probe, "object", "in drawer ")) d.instruction = "open drawer " + std::to_string(*k);
    else d.instruction = "find the object";
  }
  return d;
}

OracleDecision decide_scoop(const Observation& obs, const LanguageMemory& m, const std::string& prev,
                            bool memory_known) {
  const auto v = decode(EnvKind::scoop_count, obs);
  OracleDecision d;
  if (obs.step == 0 && v.person_scoop)
    d.events.push_back(ok("the person added first scoop into grinder", obs.step));
  if (v.opened[0] && prev == "open lid") d.events.push_back(ok(prev, obs.step));
  if (v.scoop_flash && starts_with(prev, "add ") && prev != "add scoops")
    d.events.push_back(ok(prev + " into grinder", obs.step));
  if (!v.go) {
    d.instruction = "wait";
    return d;
  }
  if (!v.opened[0]) {
    d.instruction = "open lid";
    return d;
  }
  if (!memory_known) {
    d.instruction = "add scoops";
    return d;
  }
  LanguageMemory probe = m;
  for (auto& e : d.events) probe.facts.push_back(parse_instruction(e.instruction));
  const unsigned n = placed_count(compress(probe), "scoop", "in grinder");
  d.instruction = n < 2 ? "add " + ordinal(n + 1) + " scoop" : "close lid";
  return d;
}

OracleDecision decide_grocery(const Observation& obs, const LanguageMemory& m, const std::string& prev,
                              bool memory_known) {
  const auto v = decode(EnvKind::grocery_unpack, obs);
  OracleDecision d;
  if (v.wrist_count >= 0) {
    d.events.push_back(ok("count " + std::to_string(v.wrist_count) + (v.wrist_count == 1 ? " item" : " items") +
                              " in bag",
                          obs.step));
  }
  if (!v.holding && starts_with(prev, "place ") && prev.find("item on table") != std::string::npos &&
      prev != "place item on table")
    d.events.push_back(ok(prev, obs.step));
  LanguageMemory probe = m;
  for (auto& e : d.events) probe.facts.push_back(parse_instruction(e.instruction));
  probe = compress(probe);
  if (!memory_known) {
    d.instruction = v.holding ? "place item on table" : "unpack bag";
    return d;
  }
  const unsigned placed = placed_count(probe, "item", "on table");
  if (v.holding) {
    d.instruction = "place " + ordinal(placed + 1) + " item on table";
  } else {
    const auto left = last_counted(probe, "item");
    d.instruction = left && *left == 0 ? "done" : "pick up item from bag";
  }
  return d;
}

OracleDecision decide_cook(const Observation& obs, const LanguageMemory& m, const std::string& prev,
                           bool memory_known, int period) {
  const auto v = decode(EnvKind::cook_timer, obs);
  const int step = step_from_proprio(obs, period);
  OracleDecision d;
  if (obs.step == 0)
    d.events.push_back(ok("count " + std::to_string(v.precook_shown) + " seconds in pan", obs.step));
  if (v.flip_flash && prev == "flip steak")
    d.events.push_back(ok("flip steak at step " + std::to_string(step - 1), obs.step));
  if (!memory_known) {
    d.instruction = "cook steak";
    return d;
  }
  LanguageMemory probe = m;
  for (auto& e : d.events) probe.facts.push_back(parse_instruction(e.instruction));
  const int side = 10;
  const auto precook = last_counted(probe, "second");
  const auto flipped = completed_at(probe, "flipped steak");
  if (!flipped) d.instruction = static_cast<int>(precook.value_or(0)) + step >= side ? "flip steak" : "wait";
  else d.instruction = step - *flipped >= side ? "done" : "wait";
  return d;
}

OracleDecision decide_hinge(const Observation& obs, const std::string& prev) {
  const auto v = decode(EnvKind::hinge_guess, obs);
  OracleDecision d;
  if (v.rattle) d.events.push_back({prev.empty() ? "open the door" : prev, SubtaskOutcome::failure, obs.step});
  d.instruction = v.opened[0] ? "done" : "open the door";
  return d;
}

OracleDecision decide_mug(const Observation& obs, const LanguageMemory& m, const std::string& prev,
                          bool memory_known) {
  const auto v = decode(EnvKind::mug_swap, obs);
  OracleDecision d;
  if (v.marker >= 0 && prev == "return mug")
    d.events.push_back(ok("place used mug on slot " + std::to_string(v.marker + 1), obs.step));
  if (v.mug_under_machine && !v.holding && starts_with(prev, "brew mug from slot"))
    d.events.push_back(ok(prev, obs.step));
  if (!memory_known) {
    d.instruction = "brew mugs";
    return d;
  }
  LanguageMemory probe = m;
  for (auto& e : d.events) probe.facts.push_back(parse_instruction(e.instruction));
  if (v.holding) {
    d.instruction = starts_with(prev, "brew mug from slot") ? prev : "return mug";
    return d;
  }
  if (v.mug_under_machine) {
    d.instruction = "return mug";
    return d;
  }
  std::set<int> used;
  for (const auto& f : probe.facts)
    if (f.kind == FactKind::placed && base_class(f.object) == "mug" && f.location)
      used.insert(trailing_number(*f.location) - 1);
  for (int k = 0; k < MugSwapState::kSlots; ++k) {
    if (v.mug_at[k] && !used.count(k)) {
      d.instruction = "brew mug from slot " + std::to_string(k + 1);
      return d;
    }
  }
  d.instruction = "done";
  return d;
}

OracleDecision decide(EnvKind kind, const Observation& obs, const LanguageMemory& m, const std::string& prev,
                      bool memory_known, int period) {
  switch (kind) {
    case EnvKind::find_object: return decide_find(obs, m, prev);
    case EnvKind::scoop_count: return decide_scoop(obs, m, prev, memory_known);
    case EnvKind::grocery_unpack: return decide_grocery(obs, m, prev, memory_known);
    case EnvKind::cook_timer: return decide_cook(obs, m, prev, memory_known, period);
    case EnvKind::hinge_guess: return decide_hinge(obs, prev);
    case EnvKind::mug_swap: return decide_mug(obs, m, prev, memory_known);
  }
  throw std::invalid_argument("unknown env kind");
}

std::string memory_key(const LanguageMemory& m) { return m.rendered(); }

}  // namespace

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = build_vocabulary();
  return v;
}

int vocab_id(const std::string& text) {
  const auto& v = vocabulary();
  auto it = std::find(v.begin(), v.end(), text);
  if (it == v.end()) throw std::out_of_range("'" + text + "' is not in the instruction vocabulary");
  return static_cast<int>(it - v.begin());
}

std::vector<std::string> subtask_vocabulary(EnvKind kind) {
  std::vector<std::string> v{"wait", "done"};
  switch (kind) {
    case EnvKind::find_object:
      v.push_back("find the object");
      for (int k = 1; k <= 4; ++k) v.push_back("open drawer " + std::to_string(k));
      v.push_back("pick up object");
      break;
    case EnvKind::scoop_count:
      v.insert(v.end(), {"open lid", "add scoops", "add first scoop", "add second scoop", "close lid"});
      break;
    case EnvKind::grocery_unpack:
      v.insert(v.end(), {"unpack bag", "pick up item from bag", "place item on table"});
      for (unsigned k = 1; k <= kOrdinals.size(); ++k) v.push_back("place " + ordinal(k) + " item on table");
      break;
    case EnvKind::cook_timer: v.insert(v.end(), {"cook steak", "flip steak"}); break;
    case EnvKind::hinge_guess: v.push_back("open the door"); break;
    case EnvKind::mug_swap:
      v.insert(v.end(), {"brew mugs", "return mug"});
      for (int k = 1; k <= MugSwapState::kSlots; ++k) v.push_back("brew mug from slot " + std::to_string(k));
      break;
  }
  return v;
}

std::string observation_summary(EnvKind kind, const Observation& obs) {
  const auto v = decode(kind, obs);
  std::string s = "arm " + std::to_string(v.arm.row) + "," + std::to_string(v.arm.col);
  if (v.holding) s += "; holding";
  if (v.go) s += "; go";
  if (obs.step < kRevealFrames) s += "; reveal";
  for (std::size_t i = 0; i < v.opened.size(); ++i)
    if (v.opened[i]) s += "; open " + std::to_string(i + 1);
  if (v.marker >= 0) s += "; marker " + std::to_string(v.marker + 1);
  if (v.person_scoop) s += "; person scoop";
  if (v.scoop_flash) s += "; scoop flash";
  if (v.wrist_count >= 0) s += "; wrist " + std::to_string(v.wrist_count);
  if (v.on_table) s += "; table";
  if (v.flip_flash) s += "; flip flash";
  if (v.rattle) s += "; rattle";
  if (v.cue >= 0) s += "; cue " + std::to_string(v.cue);
  if (kind == EnvKind::cook_timer) {
    if (obs.step < kRevealFrames) s += "; precook " + std::to_string(v.precook_shown);
    s += "; step " + std::to_string(obs.step);
  }
  if (kind == EnvKind::mug_swap) {
    s += "; mugs";
    for (int k = 0; k < MugSwapState::kSlots; ++k) s += v.mug_at[k] ? " x" : " .";
    if (v.mug_under_machine) s += "; brewing";
  }
  return s;
}

std::string to_string(HLMode m) { return m == HLMode::scripted_oracle ? "scripted_oracle" : "learned_small"; }

HLMode hl_mode_from_string(const std::string& s) {
  if (s == "scripted_oracle") return HLMode::scripted_oracle;
  if (s == "learned_small") return HLMode::learned_small;
  throw std::invalid_argument("unknown high-level mode '" + s + "'");
}

void to_json(nlohmann::json& j, const HLConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)},
                     {"use_memory", c.use_memory},
                     {"record_failures", c.record_failures},
                     {"max_chars", c.max_chars},
                     {"window", c.window}};
}

void from_json(const nlohmann::json& j, HLConfig& c) {
  HLConfig d;
  c.mode = hl_mode_from_string(j.value("mode", to_string(d.mode)));
  c.use_memory = j.value("use_memory", d.use_memory);
  c.record_failures = j.value("record_failures", d.record_failures);
  c.max_chars = j.value("max_chars", d.max_chars);
  c.window = j.value("window", d.window);
}

OracleDecision oracle_decide(EnvKind kind, const Observation& obs, const LanguageMemory& m,
                             const std::string& previous) {
  return decide(kind, obs, m, previous, true, EnvConfig{}.proprio_period);
}

// ---------------------------------------------------------------------------

namespace {

std::string pack(const std::string& instruction, const LanguageMemory& m) {
  return instruction + '\n' + nlohmann::json(m.facts).dump();
}

std::optional<LearnedHL::Prediction> best(const std::map<std::string, std::map<std::string, int>>& table,
                                          const std::string& key) {
  auto it = table.find(key);
  if (it == table.end()) return std::nullopt;
  const std::string* arg = nullptr;
  int top = -1;
  for (const auto& [k, n] : it->second)  // ties break to the lexicographically first
    if (n > top) {
      top = n;
      arg = &k;
    }
  const auto cut = arg->find('\n');
  LearnedHL::Prediction p;
  p.instruction = arg->substr(0, cut);
  p.memory.facts = nlohmann::json::parse(arg->substr(cut + 1)).get<std::vector<SemanticFact>>();
  return p;
}

}  // namespace

LearnedHL LearnedHL::fit(const std::vector<TrainingPair>& pairs) {
  LearnedHL h;
  for (const auto& p : pairs) {
    const auto v = pack(p.l_next, p.m_next);
    ++h.exact_[p.goal + '|' + memory_key(p.m_t) + '|' + p.observation_summary][v];
    ++h.by_obs_[p.goal + '|' + p.observation_summary][v];
    ++h.by_goal_[p.goal][v];
  }
  return h;
}

std::optional<LearnedHL::Prediction> LearnedHL::predict(const LanguageMemory& m, const std::string& observation,
                                                        const std::string& goal) const {
  if (auto p = best(exact_, goal + '|' + memory_key(m) + '|' + observation)) return p;
  if (auto p = best(by_obs_, goal + '|' + observation)) {
    p->memory = m;  // unseen memory: keep it rather than copy another context's
    return p;
  }
  if (auto p = best(by_goal_, goal)) {
    p->memory = m;
    return p;
  }
  return std::nullopt;
}

nlohmann::json LearnedHL::to_json() const {
  return nlohmann::json{{"exact", exact_}, {"by_obs", by_obs_}, {"by_goal", by_goal_}};
}

LearnedHL LearnedHL::from_json(const nlohmann::json& j) {
  LearnedHL h;
  j.at("exact").get_to(h.exact_);
  j.at("by_obs").get_to(h.by_obs_);
  j.at("by_goal").get_to(h.by_goal_);
  return h;
}

// ---------------------------------------------------------------------------

HighLevelPolicy::HighLevelPolicy(EnvKind kind, HLConfig cfg, const Summarizer* summarizer,
                                 const LearnedHL* learned)
    : kind_(kind),
      cfg_(cfg),
      rule_(RuleSummarizerOptions{cfg.max_chars, cfg.record_failures}),
      summarizer_(summarizer ? summarizer : &rule_),
      learned_(learned),
      goal_(goal_text(kind)) {
  if (cfg_.mode == HLMode::learned_small && !learned_)
    throw std::invalid_argument("learned high-level policy needs a fitted table");
}

void HighLevelPolicy::reset() {
  memory_ = {};
  last_.clear();
  past_.clear();
}

HighLevelPolicy::Output HighLevelPolicy::step(const Observation& obs) {
  Output out;
  if (cfg_.mode == HLMode::learned_small) {
    const auto p = learned_->predict(memory_, observation_summary(kind_, obs), goal_);
    out.instruction = p ? p->instruction : "wait";
    if (p && cfg_.use_memory) memory_ = p->memory;
  } else {
    const int period = EnvConfig{}.proprio_period;
    // Windowed view: events still visible in recent frames stand in for memory.
    LanguageMemory view = memory_;
    const bool windowed = !cfg_.use_memory && cfg_.window > 0;
    if (windowed)
      for (const auto& o : past_)
        for (const auto& e : decide(kind_, o, {}, "", true, period).events) view = update_memory(view, e, *summarizer_);
    auto d = decide(kind_, obs, view, last_, cfg_.use_memory || windowed, period);
    if (windowed) {
      past_.push_back(obs);
      if (past_.size() > cfg_.window) past_.pop_front();
    }
    if (cfg_.use_memory) {
      for (const auto& e : d.events) memory_ = update_memory(memory_, e, *summarizer_);
    }
    out.events = std::move(d.events);
    out.instruction = std::move(d.instruction);
  }
  last_ = out.instruction;
  out.memory = memory_;
  return out;
}

}  // namespace mem
