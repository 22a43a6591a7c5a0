#pragma once

#include <string>

#include "mem/lang_memory.hpp"

namespace mem {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SummarizerParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDefaultPromptTemplate =
    "You maintain a short memory of what a robot has done so far.\n"
    "Current memory: {memory}\n"
    "Latest subtask: {instruction} ({outcome})\n"
    "Return JSON {\"facts\": [...]} with the updated memory as short past-tense facts. "
    "Drop details that no longer matter and merge repeated placements into counts.";

/// POST <endpoint> with {"prompt": ..., "memory": [...], "instruction", "outcome"};
/// the reply must be {"facts": ["placed 2 bowls in cabinet", ...]}.
struct ExternalSummarizerConfig {
  std::string endpoint = "http://127.0.0.1:8080/summarize";  // scheme://host[:port]/path
  double timeout_seconds = 30.0;
  int retries = 1;  // extra attempts after a transport failure
  std::string prompt_template = kDefaultPromptTemplate;
  std::size_t max_chars = kDefaultMemoryChars;
};

void to_json(nlohmann::json& j, const ExternalSummarizerConfig& c);
void from_json(const nlohmann::json& j, ExternalSummarizerConfig& c);

/// Fills {memory}, {instruction} and {outcome}.
std::string render_prompt(const std::string& tmpl, const LanguageMemory& m,
                          const SubtaskRecord& event);

/// Parses {"facts": [...]} into a compressed memory; oldest facts are evicted
/// if the reply does not fit the budget even after compression.
LanguageMemory parse_summarizer_reply(const std::string& body, std::size_t max_chars);

class ExternalSummarizer : public Summarizer {
 public:
  explicit ExternalSummarizer(ExternalSummarizerConfig cfg);
  /// Throws TransportError or SummarizerParseError; never returns a partial memory.
  LanguageMemory update(const LanguageMemory& m, const SubtaskRecord& event) const override;
  const ExternalSummarizerConfig& config() const { return cfg_; }

 private:
  ExternalSummarizerConfig cfg_;
  std::string base_;  // scheme://host:port
  std::string path_;
};

}  // namespace mem
