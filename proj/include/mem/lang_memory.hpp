#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mem {

inline constexpr std::size_t kDefaultMemoryChars = 512;

class MemoryOverflow : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FactKind { placed, opened, closed, counted, completed_step, custom };

std::string to_string(FactKind k);
FactKind fact_kind_from_string(const std::string& s);

/// One remembered event. `text()` is a pure function of the fields.
///   placed:         "placed <object> <location>"  (count > 1 pluralises the object)
///   opened/closed:  "opened <object>"
///   counted:        "counted <count> <object> [<location>]"
///   completed_step: <object> verbatim (already past tense, e.g. "picked up a bowl")
///   custom:         <object> verbatim, plus " (<count> times)" when counted
/// `location` keeps its preposition ("in cabinet").
struct SemanticFact {
  FactKind kind = FactKind::custom;
  std::string object;
  std::optional<std::string> location;
  std::optional<std::uint32_t> count;

  std::string text() const;
  friend bool operator==(const SemanticFact&, const SemanticFact&) = default;
};

void to_json(nlohmann::json& j, const SemanticFact& f);
void from_json(const nlohmann::json& j, SemanticFact& f);

/// Last word of the object with articles removed: "light green bowl" -> "bowl".
std::string base_class(const std::string& object);
std::string pluralize(const std::string& noun);
std::string singularize(const std::string& noun);

/// Facts in insertion order. Value type; every update returns a new memory.
struct LanguageMemory {
  std::vector<SemanticFact> facts;

  /// Fact texts joined with "; ". Empty memory renders as "".
  std::string rendered() const;
  bool empty() const { return facts.empty(); }
  bool contains(const std::string& fact_text) const;
  friend bool operator==(const LanguageMemory&, const LanguageMemory&) = default;
};

enum class SubtaskOutcome { success, failure, ongoing };

std::string to_string(SubtaskOutcome o);
SubtaskOutcome outcome_from_string(const std::string& s);

struct SubtaskRecord {
  std::string instruction;
  SubtaskOutcome outcome = SubtaskOutcome::success;
  int step_index = 0;

  friend bool operator==(const SubtaskRecord&, const SubtaskRecord&) = default;
};

/// Instruction text -> fact, by a small set of verb rules:
///   "pick up X"                      -> completed_step "picked up X"
///   "[the person] place/put/add X in|into|on|onto|under|to Y" -> placed X <prep> Y
///   "open X" / "close X"             -> opened / closed
///   "count N X [in Y]"               -> counted
///   anything else                    -> completed_step with the first word put in past tense
SemanticFact parse_instruction(const std::string& instruction);

/// Inverse of SemanticFact::text for the fixed forms; unknown text becomes custom.
SemanticFact parse_fact(const std::string& text);

/// Aggregate same-class placements, cancel open/close pairs, erase attributes
/// of aggregated objects, drop duplicates. Throws MemoryOverflow when the
/// result still renders longer than `max_chars`.
LanguageMemory compress(const LanguageMemory& m, std::size_t max_chars = kDefaultMemoryChars);

class Summarizer {
 public:
  virtual ~Summarizer() = default;
  virtual LanguageMemory update(const LanguageMemory& m, const SubtaskRecord& event) const = 0;
};

struct RuleSummarizerOptions {
  std::size_t max_chars = kDefaultMemoryChars;
  /// Keep a "failed <instruction> (k times)" fact per repeatedly failing subtask.
  bool record_failures = false;
};

/// Deterministic default. Failures and ongoing subtasks leave the memory as is;
/// successes append the parsed fact and compress. If compression cannot meet
/// the budget the oldest facts are evicted until it does.
class RuleSummarizer : public Summarizer {
 public:
  explicit RuleSummarizer(RuleSummarizerOptions opts = {}) : opts_(opts) {}
  LanguageMemory update(const LanguageMemory& m, const SubtaskRecord& event) const override;
  const RuleSummarizerOptions& options() const { return opts_; }

 private:
  RuleSummarizerOptions opts_;
};

LanguageMemory update_memory(const LanguageMemory& m, const SubtaskRecord& event,
                             const Summarizer& s);

/// Appends every instruction regardless of outcome, "; " separated. When the
/// text exceeds max_len, whole oldest entries are dropped; a single entry
/// longer than max_len keeps its last max_len characters.
std::string naive_concat_update(const std::string& m, const SubtaskRecord& event,
                                std::size_t max_len = kDefaultMemoryChars);

/// Subtask-annotated episode: one observation summary per record.
struct AnnotatedEpisode {
  std::string goal;
  std::vector<SubtaskRecord> records;
  std::vector<std::string> observation_summaries;
};

struct TrainingPair {
  LanguageMemory m_t;
  std::string observation_summary;
  std::string goal;
  std::string l_next;  // next instruction, or "done" after the last subtask
  LanguageMemory m_next;
  SubtaskOutcome outcome = SubtaskOutcome::success;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

inline constexpr int kDatasetSchemaVersion = 1;
inline constexpr const char* kDoneInstruction = "done";

/// m_0 is empty; one pair per subtask boundary. Throws std::invalid_argument
/// for an episode without annotations or with decreasing step indices.
std::vector<TrainingPair> generate_training_pairs(const AnnotatedEpisode& episode,
                                                  const Summarizer& s);

/// One JSON object per line:
/// {"schema_version", "m_t", "m_t_facts", "observation_summary", "goal",
///  "l_next", "m_next", "m_next_facts", "outcome"}.
nlohmann::json pair_to_json(const TrainingPair& p);
TrainingPair pair_from_json(const nlohmann::json& j);
std::string pairs_to_jsonl(const std::vector<TrainingPair>& pairs);
std::vector<TrainingPair> pairs_from_jsonl(const std::string& text);

}  // namespace mem
