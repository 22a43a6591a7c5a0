#include "mem/lang_memory.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>
#include <sstream>

namespace mem {

namespace {

std::string normalize_space(const std::string& s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string strip_article(const std::string& s) {
  for (const char* a : {"a ", "an ", "the "}) {
    const std::string art(a);
    if (s.rfind(art, 0) == 0) return s.substr(art.size());
  }
  return s;
}

std::string normalize_prep(const std::string& p) {
  if (p == "into") return "in";
  if (p == "onto") return "on";
  return p;
}

bool is_vowel(char c) { return std::string_view("aeiou").find(c) != std::string_view::npos; }

std::string past_tense(const std::string& verb) {
  static const std::map<std::string, std::string> irregular{
      {"put", "put"},     {"take", "took"},   {"go", "went"},     {"get", "got"},
      {"make", "made"},   {"cut", "cut"},     {"set", "set"},     {"find", "found"},
      {"flip", "flipped"}, {"grab", "grabbed"}, {"stop", "stopped"}, {"drop", "dropped"},
      {"done", "done"},   {"wait", "waited"}};
  if (auto it = irregular.find(verb); it != irregular.end()) return it->second;
  if (verb.size() > 2 && verb.ends_with("ed")) return verb;
  if (verb.ends_with("e")) return verb + "d";
  if (verb.size() > 1 && verb.back() == 'y' && !is_vowel(verb[verb.size() - 2]))
    return verb.substr(0, verb.size() - 1) + "ied";
  return verb + "ed";
}

std::uint32_t count_of(const SemanticFact& f) { return f.count.value_or(1); }

std::string join_facts(const std::vector<SemanticFact>& facts) {
  std::string out;
  for (const auto& f : facts) {
    if (!out.empty()) out += "; ";
    out += f.text();
  }
  return out;
}

std::vector<SemanticFact> dedupe(const std::vector<SemanticFact>& facts) {
  std::vector<SemanticFact> out;
  std::vector<std::string> seen;
  for (const auto& f : facts) {
    auto t = f.text();
    if (std::find(seen.begin(), seen.end(), t) != seen.end()) continue;
    seen.push_back(std::move(t));
    out.push_back(f);
  }
  return out;
}

}  // namespace

std::string to_string(FactKind k) {
  switch (k) {
    case FactKind::placed: return "placed";
    case FactKind::opened: return "opened";
    case FactKind::closed: return "closed";
    case FactKind::counted: return "counted";
    case FactKind::completed_step: return "completed_step";
    case FactKind::custom: return "custom";
  }
  return "custom";
}

FactKind fact_kind_from_string(const std::string& s) {
  for (auto k : {FactKind::placed, FactKind::opened, FactKind::closed, FactKind::counted,
                 FactKind::completed_step, FactKind::custom}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown fact kind '" + s + "'");
}

std::string pluralize(const std::string& noun) {
  if (noun.empty()) return noun;
  if (noun.ends_with("s") || noun.ends_with("x") || noun.ends_with("ch") || noun.ends_with("sh"))
    return noun + "es";
  if (noun.size() > 1 && noun.back() == 'y' && !is_vowel(noun[noun.size() - 2]))
    return noun.substr(0, noun.size() - 1) + "ies";
  return noun + "s";
}

std::string singularize(const std::string& noun) {
  if (noun.size() > 3 && noun.ends_with("ies")) return noun.substr(0, noun.size() - 3) + "y";
  for (const char* suf : {"ses", "xes", "ches", "shes"}) {
    if (noun.ends_with(suf)) return noun.substr(0, noun.size() - 2);
  }
  if (noun.size() > 1 && noun.ends_with("s") && !noun.ends_with("ss"))
    return noun.substr(0, noun.size() - 1);
  return noun;
}

std::string base_class(const std::string& object) {
  auto o = strip_article(normalize_space(object));
  auto pos = o.rfind(' ');
  return pos == std::string::npos ? o : o.substr(pos + 1);
}

std::string SemanticFact::text() const {
  const std::string loc = location ? " " + *location : "";
  switch (kind) {
    case FactKind::placed:
      if (count_of(*this) > 1)
        return "placed " + std::to_string(*count) + " " + pluralize(object) + loc;
      return "placed " + object + loc;
    case FactKind::opened: return "opened " + object;
    case FactKind::closed: return "closed " + object;
    case FactKind::counted: return "counted " + std::to_string(count_of(*this)) + " " + object + loc;
    case FactKind::completed_step: return object;
    case FactKind::custom:
      return count ? object + " (" + std::to_string(*count) + " times)" : object;
  }
  return object;
}

void to_json(nlohmann::json& j, const SemanticFact& f) {
  j = nlohmann::json{{"kind", to_string(f.kind)}, {"object", f.object}};
  if (f.location) j["location"] = *f.location;
  if (f.count) j["count"] = *f.count;
}

void from_json(const nlohmann::json& j, SemanticFact& f) {
  f.kind = fact_kind_from_string(j.at("kind").get<std::string>());
  f.object = j.at("object").get<std::string>();
  f.location = j.contains("location") ? std::optional(j["location"].get<std::string>())
                                      : std::nullopt;
  f.count = j.contains("count") ? std::optional(j["count"].get<std::uint32_t>()) : std::nullopt;
}

std::string LanguageMemory::rendered() const { return join_facts(facts); }

bool LanguageMemory::contains(const std::string& fact_text) const {
  return std::any_of(facts.begin(), facts.end(),
                     [&](const SemanticFact& f) { return f.text() == fact_text; });
}

std::string to_string(SubtaskOutcome o) {
  switch (o) {
    case SubtaskOutcome::success: return "success";
    case SubtaskOutcome::failure: return "failure";
    case SubtaskOutcome::ongoing: return "ongoing";
  }
  return "ongoing";
}

SubtaskOutcome outcome_from_string(const std::string& s) {
  if (s == "success") return SubtaskOutcome::success;
  if (s == "failure") return SubtaskOutcome::failure;
  if (s == "ongoing") return SubtaskOutcome::ongoing;
  throw std::invalid_argument("unknown subtask outcome '" + s + "'");
}

SemanticFact parse_instruction(const std::string& instruction) {
  static const std::regex pick(R"(^pick(?:ed)? up (.+)$)");
  static const std::regex place(
      R"(^(?:the person )?(?:place[sd]?|puts?|add(?:s|ed)?) (.+?) (in|into|on|onto|under|to) (.+)$)");
  static const std::regex open(R"(^open(?:ed|s)? (.+)$)");
  static const std::regex close(R"(^close[sd]? (.+)$)");
  static const std::regex count(R"(^count(?:ed|s)? (\d+) (.+?)(?: (in|on) (.+))?$)");
  const auto s = normalize_space(instruction);
  if (s.empty()) throw std::invalid_argument("empty instruction");
  std::smatch m;
  SemanticFact f;
  if (std::regex_match(s, m, pick)) {
    f.kind = FactKind::completed_step;
    f.object = "picked up " + m[1].str();
  } else if (std::regex_match(s, m, place)) {
    f.kind = FactKind::placed;
    f.object = strip_article(m[1].str());
    f.location = normalize_prep(m[2].str()) + " " + strip_article(m[3].str());
  } else if (std::regex_match(s, m, open)) {
    f.kind = FactKind::opened;
    f.object = strip_article(m[1].str());
  } else if (std::regex_match(s, m, close)) {
    f.kind = FactKind::closed;
    f.object = strip_article(m[1].str());
  } else if (std::regex_match(s, m, count)) {
    f.kind = FactKind::counted;
    f.count = static_cast<std::uint32_t>(std::stoul(m[1].str()));
    f.object = m[2].str();
    if (m[3].matched) f.location = m[3].str() + " " + strip_article(m[4].str());
  } else {
    f.kind = FactKind::completed_step;
    const auto sp = s.find(' ');
    f.object = sp == std::string::npos ? past_tense(s) : past_tense(s.substr(0, sp)) + s.substr(sp);
  }
  return f;
}

SemanticFact parse_fact(const std::string& text) {
  static const std::regex placed_n(R"(^placed (\d+) (.+?) (in|on|under|to) (.+)$)");
  static const std::regex placed(R"(^placed (.+?) (in|on|under|to) (.+)$)");
  static const std::regex opened(R"(^opened (.+)$)");
  static const std::regex closed(R"(^closed (.+)$)");
  static const std::regex counted(R"(^counted (\d+) (.+?)(?: (in|on) (.+))?$)");
  static const std::regex repeated(R"(^(.+) \((\d+) times\)$)");
  const auto s = normalize_space(text);
  std::smatch m;
  SemanticFact f;
  if (std::regex_match(s, m, placed_n)) {
    f.kind = FactKind::placed;
    f.count = static_cast<std::uint32_t>(std::stoul(m[1].str()));
    f.object = *f.count > 1 ? singularize(m[2].str()) : m[2].str();
    f.location = m[3].str() + " " + m[4].str();
  } else if (std::regex_match(s, m, placed)) {
    f.kind = FactKind::placed;
    f.object = m[1].str();
    f.location = m[2].str() + " " + m[3].str();
  } else if (std::regex_match(s, m, opened)) {
    f.kind = FactKind::opened;
    f.object = m[1].str();
  } else if (std::regex_match(s, m, closed)) {
    f.kind = FactKind::closed;
    f.object = m[1].str();
  } else if (std::regex_match(s, m, counted)) {
    f.kind = FactKind::counted;
    f.count = static_cast<std::uint32_t>(std::stoul(m[1].str()));
    f.object = m[2].str();
    if (m[3].matched) f.location = m[3].str() + " " + m[4].str();
  } else if (std::regex_match(s, m, repeated)) {
    f.kind = FactKind::custom;
    f.object = m[1].str();
    f.count = static_cast<std::uint32_t>(std::stoul(m[2].str()));
  } else {
    f.kind = FactKind::custom;
    f.object = s;
  }
  return f;
}

LanguageMemory compress(const LanguageMemory& m, std::size_t max_chars) {
  auto facts = dedupe(m.facts);

  // Count aggregation: placements of one base class at one location merge.
  std::vector<SemanticFact> merged;
  std::vector<bool> used(facts.size(), false);
  for (std::size_t i = 0; i < facts.size(); ++i) {
    if (used[i]) continue;
    const auto& f = facts[i];
    if (f.kind != FactKind::placed || !f.location) {
      merged.push_back(f);
      continue;
    }
    const auto cls = base_class(f.object);
    std::uint32_t total = count_of(f);
    std::size_t members = 1;
    for (std::size_t j = i + 1; j < facts.size(); ++j) {
      if (used[j] || facts[j].kind != FactKind::placed || facts[j].location != f.location) continue;
      if (base_class(facts[j].object) != cls) continue;
      total += count_of(facts[j]);
      used[j] = true;
      ++members;
    }
    auto out = f;
    if (members > 1) out.count = total;
    merged.push_back(out);
  }

  // Cancellation: "closed X" removes the latest earlier "opened X" and itself.
  std::vector<bool> drop(merged.size(), false);
  for (std::size_t i = 0; i < merged.size(); ++i) {
    if (merged[i].kind != FactKind::closed) continue;
    for (std::size_t j = i; j-- > 0;) {
      if (!drop[j] && merged[j].kind == FactKind::opened && merged[j].object == merged[i].object) {
        drop[i] = drop[j] = true;
        break;
      }
    }
  }
  std::vector<SemanticFact> kept;
  for (std::size_t i = 0; i < merged.size(); ++i)
    if (!drop[i]) kept.push_back(merged[i]);

  // Attribute erasure on aggregated placements.
  for (auto& f : kept) {
    if (f.kind == FactKind::placed && count_of(f) > 1) f.object = base_class(f.object);
  }

  LanguageMemory out{dedupe(kept)};
  const auto len = out.rendered().size();
  if (len > max_chars) {
    throw MemoryOverflow("memory renders to " + std::to_string(len) + " chars, budget " +
                         std::to_string(max_chars));
  }
  return out;
}

LanguageMemory RuleSummarizer::update(const LanguageMemory& m, const SubtaskRecord& event) const {
  std::vector<SemanticFact> facts = m.facts;
  if (event.outcome == SubtaskOutcome::ongoing) return m;
  if (event.outcome == SubtaskOutcome::failure) {
    if (!opts_.record_failures) return m;
    const std::string key = "failed " + normalize_space(event.instruction);
    auto it = std::find_if(facts.begin(), facts.end(), [&](const SemanticFact& f) {
      return f.kind == FactKind::custom && f.object == key;
    });
    if (it != facts.end()) {
      it->count = count_of(*it) + 1;
    } else {
      facts.push_back({FactKind::custom, key, std::nullopt, 1u});
    }
  } else {
    auto fact = parse_instruction(event.instruction);
    if (m.contains(fact.text())) return m;
    facts.push_back(std::move(fact));
  }
  while (true) {
    try {
      return compress(LanguageMemory{facts}, opts_.max_chars);
    } catch (const MemoryOverflow&) {
      if (facts.size() <= 1) throw;
      facts.erase(facts.begin());
    }
  }
}

LanguageMemory update_memory(const LanguageMemory& m, const SubtaskRecord& event,
                             const Summarizer& s) {
  return s.update(m, event);
}

std::string naive_concat_update(const std::string& m, const SubtaskRecord& event,
                                std::size_t max_len) {
  std::string text = m.empty() ? event.instruction : m + "; " + event.instruction;
  while (text.size() > max_len) {
    const auto sep = text.find("; ");
    if (sep == std::string::npos) return text.substr(text.size() - max_len);
    text.erase(0, sep + 2);
  }
  return text;
}

std::vector<TrainingPair> generate_training_pairs(const AnnotatedEpisode& episode,
                                                  const Summarizer& s) {
  if (episode.records.empty()) {
    throw std::invalid_argument("episode carries no subtask annotations");
  }
  if (!episode.observation_summaries.empty() &&
      episode.observation_summaries.size() != episode.records.size()) {
    throw std::invalid_argument("need one observation summary per subtask record");
  }
  std::vector<TrainingPair> pairs;
  LanguageMemory m;
  for (std::size_t i = 0; i < episode.records.size(); ++i) {
    const auto& r = episode.records[i];
    if (i > 0 && r.step_index < episode.records[i - 1].step_index) {
      throw std::invalid_argument("subtask step indices must be nondecreasing");
    }
    TrainingPair p;
    p.m_t = m;
    p.observation_summary =
        episode.observation_summaries.empty() ? "" : episode.observation_summaries[i];
    p.goal = episode.goal;
    p.l_next = i + 1 < episode.records.size() ? episode.records[i + 1].instruction
                                              : std::string(kDoneInstruction);
    p.m_next = update_memory(m, r, s);
    p.outcome = r.outcome;
    m = p.m_next;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

nlohmann::json pair_to_json(const TrainingPair& p) {
  nlohmann::json j;
  j["schema_version"] = kDatasetSchemaVersion;
  j["m_t"] = p.m_t.rendered();
  j["m_t_facts"] = p.m_t.facts;
  j["observation_summary"] = p.observation_summary;
  j["goal"] = p.goal;
  j["l_next"] = p.l_next;
  j["m_next"] = p.m_next.rendered();
  j["m_next_facts"] = p.m_next.facts;
  j["outcome"] = to_string(p.outcome);
  return j;
}

TrainingPair pair_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", 0) != kDatasetSchemaVersion) {
    throw std::invalid_argument("unsupported dataset schema version");
  }
  TrainingPair p;
  p.m_t.facts = j.at("m_t_facts").get<std::vector<SemanticFact>>();
  p.observation_summary = j.at("observation_summary").get<std::string>();
  p.goal = j.at("goal").get<std::string>();
  p.l_next = j.at("l_next").get<std::string>();
  p.m_next.facts = j.at("m_next_facts").get<std::vector<SemanticFact>>();
  p.outcome = outcome_from_string(j.at("outcome").get<std::string>());
  if (p.m_t.rendered() != j.at("m_t").get<std::string>() ||
      p.m_next.rendered() != j.at("m_next").get<std::string>()) {
    throw std::invalid_argument("dataset record: rendered memory disagrees with its facts");
  }
  return p;
}

std::string pairs_to_jsonl(const std::vector<TrainingPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) out += pair_to_json(p).dump() + "\n";
  return out;
}

std::vector<TrainingPair> pairs_from_jsonl(const std::string& text) {
  std::vector<TrainingPair> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(pair_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace mem
