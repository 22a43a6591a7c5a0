#include "mem/external_summarizer.hpp"

#include <httplib.h>

#include <regex>

namespace mem {

void to_json(nlohmann::json& j, const ExternalSummarizerConfig& c) {
  j = nlohmann::json{{"endpoint", c.endpoint},
                     {"timeout_seconds", c.timeout_seconds},
                     {"retries", c.retries},
                     {"prompt_template", c.prompt_template},
                     {"max_chars", c.max_chars}};
}

void from_json(const nlohmann::json& j, ExternalSummarizerConfig& c) {
  ExternalSummarizerConfig d;
  c.endpoint = j.value("endpoint", d.endpoint);
  c.timeout_seconds = j.value("timeout_seconds", d.timeout_seconds);
  c.retries = j.value("retries", d.retries);
  c.prompt_template = j.value("prompt_template", d.prompt_template);
  c.max_chars = j.value("max_chars", d.max_chars);
}

namespace {

void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

}  // namespace

std::string render_prompt(const std::string& tmpl, const LanguageMemory& m,
                          const SubtaskRecord& event) {
  std::string out = tmpl;
  replace_all(out, "{memory}", m.empty() ? "(empty)" : m.rendered());
  replace_all(out, "{instruction}", event.instruction);
  replace_all(out, "{outcome}", to_string(event.outcome));
  return out;
}

LanguageMemory parse_summarizer_reply(const std::string& body, std::size_t max_chars) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw SummarizerParseError(std::string("summarizer reply is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("facts") || !j["facts"].is_array()) {
    throw SummarizerParseError("summarizer reply lacks a \"facts\" array");
  }
  std::vector<SemanticFact> facts;
  for (const auto& f : j["facts"]) {
    if (!f.is_string()) throw SummarizerParseError("summarizer facts must be strings");
    const auto text = f.get<std::string>();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    facts.push_back(parse_fact(text));
  }
  while (true) {
    try {
      return compress(LanguageMemory{facts}, max_chars);
    } catch (const MemoryOverflow&) {
      if (facts.size() <= 1) throw;
      facts.erase(facts.begin());
    }
  }
}

ExternalSummarizer::ExternalSummarizer(ExternalSummarizerConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url)) {
    throw std::invalid_argument("summarizer endpoint must look like http://host:port/path, got '" +
                                cfg_.endpoint + "'");
  }
  base_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
  if (cfg_.timeout_seconds <= 0) throw std::invalid_argument("summarizer timeout must be positive");
  if (cfg_.retries < 0) throw std::invalid_argument("summarizer retries must be >= 0");
}

LanguageMemory ExternalSummarizer::update(const LanguageMemory& m,
                                          const SubtaskRecord& event) const {
  nlohmann::json req{{"prompt", render_prompt(cfg_.prompt_template, m, event)},
                     {"memory", nlohmann::json::array()},
                     {"instruction", event.instruction},
                     {"outcome", to_string(event.outcome)}};
  for (const auto& f : m.facts) req["memory"].push_back(f.text());

  httplib::Client client(base_);
  const auto sec = static_cast<time_t>(cfg_.timeout_seconds);
  const auto usec = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(sec)) * 1e6);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);

  std::string last_error;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    auto res = client.Post(path_, req.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    return parse_summarizer_reply(res->body, cfg_.max_chars);
  }
  throw TransportError("summarizer at " + cfg_.endpoint + " failed after " +
                       std::to_string(cfg_.retries + 1) + " attempt(s): " + last_error);
}

}  // namespace mem
