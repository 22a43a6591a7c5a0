#include <doctest.h>

#include "mem/memenv.hpp"

using namespace mem;

namespace {

EnvConfig config_for(EnvKind k) {
  EnvConfig c;
  c.kind = k;
  return c;
}

// Plays the expert to the end; returns the final state.
EnvState run_expert(const EnvConfig& cfg, std::uint64_t seed) {
  auto [s, obs] = reset(cfg, seed);
  while (!s.done) step(s, {expert_action(s)});
  return s;
}

}  // namespace

TEST_CASE("names round trip") {
  for (auto k : all_env_kinds()) CHECK(env_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(env_kind_from_string("laundry"), std::invalid_argument);
  for (std::size_t a = 0; a < kNumActions; ++a)
    CHECK(action_from_string(to_string(static_cast<Action>(a))) == static_cast<Action>(a));
}

TEST_CASE("reset is deterministic") {
  for (auto k : all_env_kinds()) {
    auto cfg = config_for(k);
    auto [a, oa] = reset(cfg, 7);
    auto [b, ob] = reset(cfg, 7);
    CHECK(bit_equal(oa.image, ob.image));
    // Same actions, same trajectory.
    for (int i = 0; i < 40 && !a.done; ++i) {
      const auto act = expert_action(a);
      auto ra = step(a, {act});
      auto rb = step(b, {act});
      CHECK(bit_equal(ra.observation.image, rb.observation.image));
      CHECK(ra.observation.proprio == rb.observation.proprio);
      CHECK(ra.reward == rb.reward);
    }
  }
}

TEST_CASE("find_object reveal then occlusion") {
  auto cfg = config_for(EnvKind::find_object);
  auto [s, obs] = reset(cfg, 7);
  const int target = s.hidden_value();
  CHECK(target >= 0);
  CHECK(target < 4);
  for (int t = 0; t < 6; ++t) {
    const auto v = decode(cfg.kind, obs);
    CHECK(v.marker == (t < kRevealFrames ? target : -1));
    CHECK(v.go == (t >= cfg.go_step()));
    obs = step(s, {Action::wait}).observation;
  }
}

TEST_CASE("scoop_count starts with no robot scoops") {
  auto [s, obs] = reset(config_for(EnvKind::scoop_count), 3);
  CHECK(std::get<ScoopCountState>(s.task).scoops_added == 0);
  CHECK(obs.legal == (1u << static_cast<int>(Action::wait)));
}

TEST_CASE("occluded observations do not depend on the hidden value") {
  for (auto k : all_env_kinds()) {
    auto cfg = config_for(k);
    cfg.reveal_delay = 2;
    // Visible-only history: waits plus moves that reveal nothing.
    ActionChunk history(8, Action::wait);
    if (k == EnvKind::find_object) history.insert(history.end(), {Action::up, Action::down, Action::left});
    if (k == EnvKind::grocery_unpack) history.insert(history.end(), {Action::left, Action::right, Action::right});
    if (k == EnvKind::hinge_guess) history.insert(history.end(), {Action::release, Action::wait});
    std::vector<std::vector<Tensor>> frames;
    for (int h = 0; h < hidden_cardinality(cfg); ++h) {
      auto [s, obs] = reset(cfg, 11, h);
      std::vector<Tensor> f;
      for (Action a : history) f.push_back(step(s, {a}).observation.image);
      frames.push_back(f);
    }
    INFO(to_string(k));
    for (std::size_t h = 1; h < frames.size(); ++h)
      for (std::size_t t = kRevealFrames; t < history.size(); ++t)
        CHECK(bit_equal(frames[0][t], frames[h][t]));
  }
  // Mug identities stay hidden through a full expert episode.
  auto cfg = config_for(EnvKind::mug_swap);
  std::vector<std::vector<Tensor>> runs;
  for (int h = 0; h < 6; ++h) {
    auto [s, obs] = reset(cfg, 5, h);
    std::vector<Tensor> f;
    while (!s.done) f.push_back(step(s, {expert_action(s)}).observation.image);
    runs.push_back(f);
  }
  for (int h = 1; h < 6; ++h) {
    REQUIRE(runs[h].size() == runs[0].size());
    for (std::size_t t = 0; t < runs[0].size(); ++t) CHECK(bit_equal(runs[0][t], runs[h][t]));
  }
}

TEST_CASE("expert reaches the rubric maximum") {
  for (auto k : all_env_kinds()) {
    auto cfg = config_for(k);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto s = run_expert(cfg, seed);
      INFO(to_string(k) << " seed " << seed);
      CHECK(s.success);
      CHECK(s.score == max_score(s));
      CHECK(s.illegal_actions == 0);
    }
  }
  auto [g, o] = reset(config_for(EnvKind::grocery_unpack), 1, 4);
  CHECK(max_score(g) == 6.0);
}

TEST_CASE("random resolver matches the chance rate") {
  for (auto k : all_env_kinds()) {
    auto cfg = config_for(k);
    const int episodes = 10000;
    int wins = 0;
    for (int e = 0; e < episodes; ++e) {
      auto [s, obs] = reset(cfg, 1000 + static_cast<std::uint64_t>(e));
      RandomResolver r(static_cast<std::uint64_t>(e) * 7919 + 1);
      while (!s.done) step(s, {r.act(s)});
      wins += s.success ? 1 : 0;
    }
    const double rate = static_cast<double>(wins) / episodes;
    INFO(to_string(k) << " rate " << rate << " chance " << chance_rate(cfg));
    CHECK(std::abs(rate - chance_rate(cfg)) < 0.02);
  }
}

TEST_CASE("chance rates") {
  CHECK(chance_rate(config_for(EnvKind::find_object)) == 0.25);
  CHECK(chance_rate(config_for(EnvKind::scoop_count)) == 0.5);
  CHECK(chance_rate(config_for(EnvKind::hinge_guess)) == 0.75);
  CHECK(chance_rate(config_for(EnvKind::grocery_unpack)) == doctest::Approx(0.2));
  CHECK(chance_rate(config_for(EnvKind::cook_timer)) == doctest::Approx((31.0 / 72) * (31.0 / 72)));
  CHECK(chance_rate(config_for(EnvKind::mug_swap)) == doctest::Approx(2.0 / 9));
}

TEST_CASE("task rubrics") {
  SUBCASE("find_object wrong drawer fails") {
    auto cfg = config_for(EnvKind::find_object);
    auto [s, obs] = reset(cfg, 2, 0);
    step(s, {Action::wait, Action::wait, Action::wait});
    auto r = step(s, {Action::right, Action::open});
    CHECK(r.done);
    CHECK_FALSE(r.info.success);
    CHECK(r.reward == 0.0);
  }
  SUBCASE("find_object correct drawer then grasp") {
    auto [s, obs] = reset(config_for(EnvKind::find_object), 2, 0);
    auto r = step(s, {Action::wait, Action::wait, Action::wait, Action::up, Action::open, Action::grasp});
    CHECK(r.info.success);
    CHECK(r.reward == 1.0);
  }
  SUBCASE("scoop_count needs exactly two") {
    for (int extra : {1, 2, 3}) {
      auto [s, obs] = reset(config_for(EnvKind::scoop_count), 4, 0);
      ActionChunk c{Action::wait, Action::wait, Action::wait, Action::open};
      for (int i = 0; i < extra; ++i) c.push_back(Action::scoop);
      c.push_back(Action::close);
      auto r = step(s, c);
      CHECK(r.done);
      CHECK(r.info.success == (extra == 2));
    }
  }
  SUBCASE("hinge_guess counts attempts") {
    auto [s, obs] = reset(config_for(EnvKind::hinge_guess), 4, 1);
    auto r = step(s, {Action::left, Action::open});
    CHECK(decode(EnvKind::hinge_guess, r.observation).rattle);
    r = step(s, {Action::release, Action::right, Action::open});
    CHECK(r.info.success);
    CHECK(r.info.attempts == 2);
  }
  SUBCASE("grocery premature done fails") {
    auto [s, obs] = reset(config_for(EnvKind::grocery_unpack), 4, 2);
    auto r = step(s, {Action::left, Action::grasp});
    CHECK(decode(EnvKind::grocery_unpack, r.observation).wrist_count == 2);
    r = step(s, {Action::right, Action::right, Action::release, Action::done});
    CHECK(r.done);
    CHECK_FALSE(r.info.success);
    CHECK(r.info.score == 1.0);
  }
  SUBCASE("cook_timer window") {
    auto [s, obs] = reset(config_for(EnvKind::cook_timer), 4, 0);
    ActionChunk wait5(5, Action::wait);
    step(s, {Action::flip});  // side one after zero steps
    for (int i = 0; i < 2; ++i) step(s, wait5);
    auto r = step(s, {Action::done});
    CHECK(r.info.score == 1.0);
    CHECK_FALSE(r.info.success);
  }
  SUBCASE("mug_swap repeat ends the episode") {
    auto [s, obs] = reset(config_for(EnvKind::mug_swap), 9);
    auto& t = std::get<MugSwapState>(s.task);
    int k = 0;
    while (t.slot[k] < 0) ++k;
    const ActionChunk to_slot = k == 0 ? ActionChunk{Action::left} : k == 1 ? ActionChunk{Action::right}
                               : k == 2 ? ActionChunk{Action::down} : ActionChunk{Action::down, Action::right};
    step(s, to_slot);
    step(s, {Action::grasp});
    const int mug = t.held;
    while (t.place != 0) step(s, {k == 0 ? Action::right : k == 1 ? Action::left : Action::up});
    auto r = step(s, {Action::up, Action::release});
    CHECK(r.reward == 1.0);
    CHECK(t.used[mug]);
    step(s, {Action::grasp, Action::down, Action::left, Action::release});
    const int landed = t.landed_slot;
    CHECK(t.slot[landed] == mug);
    // Fetch the same mug again and brew it: failure.
    step(s, {Action::right});
    const ActionChunk back = landed == 0 ? ActionChunk{Action::left} : landed == 1 ? ActionChunk{Action::right}
                            : landed == 2 ? ActionChunk{Action::down} : ActionChunk{Action::down, Action::right};
    step(s, back);
    step(s, {Action::grasp});
    while (t.place != 0) step(s, {landed == 0 ? Action::right : landed == 1 ? Action::left : Action::up});
    r = step(s, {Action::up, Action::release});
    CHECK(r.done);
    CHECK_FALSE(r.info.success);
  }
}

TEST_CASE("illegal actions are flagged no-ops") {
  auto [s, obs] = reset(config_for(EnvKind::find_object), 1);
  auto r = step(s, {Action::up});
  CHECK(r.info.illegal_actions == 1);
  CHECK(decode(EnvKind::find_object, r.observation).arm == Cell{7, 7});
  CHECK_THROWS(step(s, {}));
  CHECK_THROWS(step(s, ActionChunk(9, Action::wait)));
  auto fin = run_expert(config_for(EnvKind::find_object), 1);
  CHECK_THROWS_AS(step(fin, {Action::wait}), std::logic_error);
  CHECK(observe(fin).legal == 0);
}

TEST_CASE("episodes time out") {
  auto cfg = config_for(EnvKind::hinge_guess);
  auto [s, obs] = reset(cfg, 1);
  int n = 0;
  while (!s.done) {
    step(s, {Action::wait});
    ++n;
  }
  CHECK(n == cfg.step_limit());
  CHECK_FALSE(s.success);
}

TEST_CASE("debug rendering") {
  auto cfg = config_for(EnvKind::find_object);
  std::vector<std::string> after;
  std::string before;
  for (int h = 0; h < 4; ++h) {
    auto [s, obs] = reset(cfg, 3, h);
    if (h == 0) before = render_debug(s);
    step(s, {Action::wait, Action::wait, Action::wait});
    after.push_back(render_debug(s));
  }
  CHECK(std::count(before.begin(), before.end(), '\n') == 16);
  CHECK(before.find('#') != std::string::npos);
  CHECK(before != after[0]);
  for (const auto& a : after) CHECK(a == after[0]);
}

TEST_CASE("proprio and config") {
  auto cfg = config_for(EnvKind::grocery_unpack);
  auto [s, obs] = reset(cfg, 1);
  REQUIRE(obs.proprio.size() == kProprioDim);
  CHECK(obs.proprio[0] == 7.0 / 15);
  auto r = step(s, {Action::left, Action::grasp});
  CHECK(r.observation.proprio[2] == 1.0);
  CHECK(r.observation.proprio[3] == 2.0 / cfg.proprio_period);
  nlohmann::json j = cfg;
  CHECK(j.get<EnvConfig>().kind == cfg.kind);
  EnvConfig bad;
  bad.drawers = 7;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS_AS(reset(config_for(EnvKind::find_object), 1, 9), std::out_of_range);
}
