#include <doctest.h>

#include <httplib.h>

#include <random>
#include <thread>

#include "mem/external_summarizer.hpp"
#include "mem/lang_memory.hpp"

using namespace mem;

namespace {

LanguageMemory facts_of(std::initializer_list<const char*> instructions) {
  LanguageMemory m;
  for (const char* i : instructions) m.facts.push_back(parse_instruction(i));
  return m;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("instruction parsing") {
  CHECK(parse_instruction("pick up a bowl").text() == "picked up a bowl");
  CHECK(parse_instruction("Place the plate in the cabinet").text() == "placed plate in cabinet");
  CHECK(parse_instruction("put red cup into sink").text() == "placed red cup in sink");
  CHECK(parse_instruction("the person added a scoop to grinder").text() ==
        "placed scoop to grinder");
  CHECK(parse_instruction("open drawer 2").kind == FactKind::opened);
  CHECK(parse_instruction("close the drawer 2").text() == "closed drawer 2");
  CHECK(parse_instruction("count 3 items in bag").text() == "counted 3 items in bag");
  CHECK(parse_instruction("flip steak").text() == "flipped steak");
  CHECK(parse_instruction("wipe table").text() == "wiped table");
  CHECK(parse_instruction("carry tray").text() == "carried tray");
  CHECK_THROWS(parse_instruction("   "));
}

TEST_CASE("rendering is a function of the fields") {
  SemanticFact a{FactKind::placed, "bowl", "in cabinet", 3u};
  SemanticFact b = a;
  CHECK(a.text() == b.text());
  CHECK(a.text() == "placed 3 bowls in cabinet");
  CHECK(SemanticFact{FactKind::placed, "box", "on shelf", 2u}.text() == "placed 2 boxes on shelf");
  for (auto f : {a, parse_instruction("open drawer 2"), parse_instruction("count 2 cups in sink"),
                 SemanticFact{FactKind::custom, "failed pick up bowl", std::nullopt, 3u}}) {
    CHECK(parse_fact(f.text()).text() == f.text());
  }
  CHECK(parse_fact("placed 3 bowls in cabinet") == a);
}

TEST_CASE("compress aggregates placements of one class") {
  auto m = facts_of({"place light green bowl in cabinet", "place dark blue bowl in cabinet",
                     "place bright yellow bowl in cabinet"});
  auto c = compress(m);
  REQUIRE(c.facts.size() == 1);
  CHECK(c.rendered() == "placed 3 bowls in cabinet");
  // Different location or class stays apart.
  auto mixed = compress(facts_of({"place bowl in cabinet", "place bowl in sink", "place cup in sink"}));
  CHECK(mixed.facts.size() == 3);
}

TEST_CASE("compress cancels open/close pairs") {
  CHECK(compress(facts_of({"open drawer 2", "close drawer 2"})).empty());
  auto c = compress(facts_of({"open drawer 1", "open drawer 2", "close drawer 2"}));
  CHECK(c.rendered() == "opened drawer 1");
  CHECK(compress(LanguageMemory{}).empty());
}

TEST_CASE("compress enforces the budget") {
  LanguageMemory m;
  for (int i = 0; i < 40; ++i) m.facts.push_back(parse_instruction("wipe table " + std::to_string(i)));
  CHECK_THROWS_AS(compress(m, 100), MemoryOverflow);
}

TEST_CASE("rule summarizer update") {
  RuleSummarizer s;
  LanguageMemory empty;
  CHECK(update_memory(empty, {"pick up bowl", SubtaskOutcome::failure, 0}, s) == empty);
  CHECK(update_memory(empty, {"pick up bowl", SubtaskOutcome::ongoing, 0}, s) == empty);
  auto m = facts_of({"place plate in cabinet"});
  auto m1 = update_memory(m, {"pick up a bowl", SubtaskOutcome::success, 1}, s);
  CHECK(m1.rendered() == "placed plate in cabinet; picked up a bowl");
  auto m2 = update_memory(m1, {"pick up a bowl", SubtaskOutcome::success, 2}, s);
  CHECK(m2 == m1);

  RuleSummarizer counting({kDefaultMemoryChars, true});
  auto f = update_memory(empty, {"pick up bowl", SubtaskOutcome::failure, 0}, counting);
  f = update_memory(f, {"pick up bowl", SubtaskOutcome::failure, 1}, counting);
  CHECK(f.rendered() == "failed pick up bowl (2 times)");
}

TEST_CASE("failure events never change memory") {
  RuleSummarizer s;
  std::mt19937_64 rng(1);
  const char* verbs[] = {"place cup in sink", "open drawer 1", "pick up bowl", "wipe table",
                         "close drawer 1", "place red bowl in cabinet"};
  for (int trial = 0; trial < 200; ++trial) {
    LanguageMemory m;
    const int len = static_cast<int>(rng() % 8);
    for (int i = 0; i < len; ++i)
      m = update_memory(m, {verbs[rng() % 6], SubtaskOutcome::success, i}, s);
    const SubtaskRecord fail{verbs[rng() % 6], SubtaskOutcome::failure, len};
    CHECK(update_memory(m, fail, s) == m);
  }
}

TEST_CASE("memory stays bounded while naive concat grows") {
  RuleSummarizer s;
  LanguageMemory m;
  std::string naive;
  std::size_t naive_peak = 0;
  for (int i = 0; i < 100; ++i) {
    const auto instr = "wipe shelf " + std::to_string(i);
    m = update_memory(m, {instr, SubtaskOutcome::success, i}, s);
    naive = naive_concat_update(naive, {instr, SubtaskOutcome::success, i}, 100000);
    CHECK(m.rendered().size() <= kDefaultMemoryChars);
    naive_peak = std::max(naive_peak, naive.size());
  }
  CHECK(naive_peak > 2 * kDefaultMemoryChars);
  CHECK(m.contains("wiped shelf 99"));
  CHECK_FALSE(m.contains("wiped shelf 0"));
}

TEST_CASE("naive concat") {
  SubtaskRecord fail{"pick up bowl", SubtaskOutcome::failure, 0};
  std::string t;
  for (int i = 0; i < 3; ++i) t = naive_concat_update(t, fail);
  CHECK(occurrences(t, "pick up bowl") == 3);
  CHECK(naive_concat_update("", {"open lid", SubtaskOutcome::success, 0}) == "open lid");
  auto over = naive_concat_update("aaaa; bbbb", {"cccc", SubtaskOutcome::success, 0}, 10);
  CHECK(over == "bbbb; cccc");
  CHECK(naive_concat_update("", {"abcdefghijkl", SubtaskOutcome::success, 0}, 5) == "hijkl");
}

TEST_CASE("repeated failure is remembered once") {
  RuleSummarizer s;
  LanguageMemory m;
  std::string naive;
  const int r = 4;
  for (int i = 0; i <= r; ++i) {
    SubtaskRecord e{"pick up bowl", i < r ? SubtaskOutcome::failure : SubtaskOutcome::success, i};
    m = update_memory(m, e, s);
    naive = naive_concat_update(naive, e);
  }
  CHECK(occurrences(m.rendered(), "picked up bowl") == 1);
  CHECK(occurrences(naive, "pick up bowl") == r + 1);
}

TEST_CASE("training pairs") {
  RuleSummarizer s;
  AnnotatedEpisode one{"clean up", {{"pick up bowl", SubtaskOutcome::success, 0}}, {"bowl on table"}};
  auto p = generate_training_pairs(one, s);
  REQUIRE(p.size() == 1);
  CHECK(p[0].m_t.empty());
  CHECK(p[0].m_next.rendered() == "picked up bowl");
  CHECK(p[0].l_next == "done");

  AnnotatedEpisode kitchen{"put dishes away",
                           {{"open cabinet", SubtaskOutcome::success, 0},
                            {"pick up bowl", SubtaskOutcome::failure, 4},
                            {"pick up bowl", SubtaskOutcome::success, 9},
                            {"place bowl in cabinet", SubtaskOutcome::success, 15},
                            {"close cabinet", SubtaskOutcome::success, 20}},
                           {}};
  auto pairs = generate_training_pairs(kitchen, s);
  REQUIRE(pairs.size() == 5);
  CHECK(pairs[1].m_next == pairs[1].m_t);
  CHECK(pairs[1].l_next == "pick up bowl");
  CHECK(pairs[4].m_next.rendered() == "picked up bowl; placed bowl in cabinet");

  auto text = pairs_to_jsonl(pairs);
  CHECK(pairs_from_jsonl(text) == pairs);
  CHECK(nlohmann::json::parse(text.substr(0, text.find('\n')))["schema_version"] == 1);

  CHECK_THROWS(generate_training_pairs(AnnotatedEpisode{"g", {}, {}}, s));
  AnnotatedEpisode backwards{"g", {{"a", SubtaskOutcome::success, 3}, {"b", SubtaskOutcome::success, 1}}, {}};
  CHECK_THROWS(generate_training_pairs(backwards, s));
}

TEST_CASE("external summarizer against a local server") {
  httplib::Server server;
  std::string last_prompt;
  server.Post("/summarize", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body);
    last_prompt = body["prompt"].get<std::string>();
    if (body["instruction"] == "garbage") {
      res.set_content("not json", "text/plain");
      return;
    }
    nlohmann::json facts = nlohmann::json::array();
    if (body["instruction"] == "flood") {
      for (int i = 0; i < 60; ++i) facts.push_back("wiped shelf number " + std::to_string(i));
    } else {
      facts = {"placed red bowl in cabinet", "placed blue bowl in cabinet", "opened drawer 1"};
    }
    res.set_content(nlohmann::json{{"facts", facts}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ExternalSummarizerConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/summarize";
  cfg.timeout_seconds = 5;
  ExternalSummarizer ext(cfg);
  auto m = ext.update(facts_of({"open drawer 1"}), {"place bowl in cabinet", SubtaskOutcome::success, 0});
  CHECK(m.rendered() == "placed 2 bowls in cabinet; opened drawer 1");
  CHECK(last_prompt.find("opened drawer 1") != std::string::npos);
  CHECK(last_prompt.find("place bowl in cabinet (success)") != std::string::npos);

  auto flooded = ext.update({}, {"flood", SubtaskOutcome::success, 0});
  CHECK(flooded.rendered().size() <= kDefaultMemoryChars);
  CHECK_THROWS_AS(ext.update({}, {"garbage", SubtaskOutcome::success, 0}), SummarizerParseError);

  server.stop();
  th.join();

  ExternalSummarizerConfig dead = cfg;
  dead.timeout_seconds = 0.5;
  dead.retries = 0;
  const LanguageMemory before = facts_of({"open drawer 1"});
  LanguageMemory kept = before;
  CHECK_THROWS_AS(kept = ExternalSummarizer(dead).update(before, {"x", SubtaskOutcome::success, 0}),
                  TransportError);
  CHECK(kept == before);
  CHECK_THROWS(ExternalSummarizer(ExternalSummarizerConfig{"ftp:/x"}));
}
