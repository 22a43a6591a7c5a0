#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mem/agent.hpp"

using namespace mem;

namespace {

Tensor random_image(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::vector<double> v(kImageChannels * kImageSize * kImageSize);
  for (auto& x : v) x = n(rng);
  return Tensor({kImageChannels, kImageSize, kImageSize}, std::move(v));
}

PolicyInput random_input(std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Tensor> frames;
  std::vector<std::vector<double>> prop;
  for (std::size_t i = 0; i <= k; ++i) {
    frames.push_back(random_image(rng));
    prop.push_back({u(rng), u(rng), u(rng), u(rng)});
  }
  return {VideoClip::from_frames(frames, prop), vocab_id("find the object"), vocab_id(goal_text(EnvKind::find_object))};
}

PolicyConfig config_for(EncoderVariant v, std::size_t k = 3) {
  PolicyConfig c;
  c.variant = v;
  c.horizon = k;
  return c;
}

Tensor logits_of(const PolicyConfig& c, const PolicyWeights& w, const PolicyInput& in) {
  return policy_logits(c, w, in);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mem_test_agent_" + name);
}

}  // namespace

TEST_CASE("vocabulary") {
  const auto& v = vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(vocab_id(v[i]) == static_cast<int>(i));
  for (auto k : all_env_kinds()) {
    CHECK_NOTHROW(vocab_id(goal_text(k)));
    for (const auto& s : subtask_vocabulary(k)) CHECK_NOTHROW(vocab_id(s));
  }
  CHECK_THROWS_AS(vocab_id("juggle"), std::out_of_range);
}

TEST_CASE("oracle hierarchy solves every task") {
  for (auto k : all_env_kinds()) {
    EvalConfig ec;
    ec.env.kind = k;
    ec.env.reveal_delay = 4;
    ec.episodes = 40;
    ec.seed = 5;
    INFO(to_string(k));
    CHECK(evaluate(nullptr, ec).success_rate == 1.0);
  }
}

TEST_CASE("scripted high-level policy") {
  SUBCASE("find_object remembers the reveal") {
    EnvConfig cfg;
    cfg.reveal_delay = 6;
    for (int target = 0; target < 4; ++target) {
      auto [s, obs] = reset(cfg, 1, target);
      HighLevelPolicy hl(EnvKind::find_object, {});
      HighLevelPolicy blind(EnvKind::find_object, HLConfig{HLMode::scripted_oracle, false});
      std::string with, without;
      while (s.step < cfg.go_step()) {
        with = hl.step(obs).instruction;
        without = blind.step(obs).instruction;
        CHECK(with == "wait");
        obs = step(s, {Action::wait}).observation;
      }
      CHECK(hl.step(obs).instruction == "open drawer " + std::to_string(target + 1));
      CHECK(hl.memory().rendered() == "placed object in drawer " + std::to_string(target + 1));
      CHECK(blind.step(obs).instruction == "find the object");
      CHECK(blind.memory().empty());
    }
  }
  SUBCASE("windowed view without memory") {
    EnvConfig cfg;
    cfg.reveal_delay = 6;
    for (std::size_t w : {8u, 9u}) {
      auto [s, obs] = reset(cfg, 1, 2);
      HLConfig hc{HLMode::scripted_oracle, false};
      hc.window = w;
      HighLevelPolicy hl(EnvKind::find_object, hc);
      while (s.step < cfg.go_step()) {
        hl.step(obs);
        obs = step(s, {Action::wait}).observation;
      }
      // The reveal frame is step 0; the go step is 9.
      CHECK(hl.step(obs).instruction == (w >= 9 ? "open drawer 3" : "find the object"));
      CHECK(hl.memory().empty());
    }
  }
  SUBCASE("failure re-emits the instruction and keeps memory") {
    auto [s, obs] = reset(EnvConfig{EnvKind::hinge_guess}, 2, 1);
    HighLevelPolicy hl(EnvKind::hinge_guess, {});
    const auto first = hl.step(obs);
    obs = step(s, {Action::left, Action::open}).observation;
    const auto after = hl.step(obs);
    REQUIRE(after.events.size() == 1);
    CHECK(after.events[0].outcome == SubtaskOutcome::failure);
    CHECK(after.instruction == first.instruction);
    CHECK(after.memory == first.memory);
  }
  SUBCASE("all subtasks complete gives done") {
    EnvConfig cfg{EnvKind::grocery_unpack};
    auto [s, obs] = reset(cfg, 3, 0);  // one item
    HighLevelPolicy hl(cfg.kind, {});
    std::string last;
    while (!s.done) {
      last = hl.step(obs).instruction;
      obs = step(s, {expert_action(s)}).observation;
    }
    CHECK(last == "done");
    CHECK(hl.memory().contains("placed first item on table"));
  }
  SUBCASE("scoop counting uses ordinal facts") {
    EnvConfig cfg{EnvKind::scoop_count};
    auto [s, obs] = reset(cfg, 4, 0);
    HighLevelPolicy hl(cfg.kind, {});
    std::vector<std::string> seen;
    while (!s.done) {
      seen.push_back(hl.step(obs).instruction);
      obs = step(s, {expert_action(s)}).observation;
    }
    CHECK(std::count(seen.begin(), seen.end(), "add first scoop") == 1);
    CHECK(std::count(seen.begin(), seen.end(), "add second scoop") == 1);
    CHECK(seen.back() == "close lid");
    CHECK(hl.memory().contains("placed 2 scoops in grinder"));
  }
}

TEST_CASE("variant isolation") {
  const std::size_t k = 3;
  auto in = random_input(k, 11);
  std::mt19937_64 rng(99);
  auto perturbed_past = in;
  perturbed_past.window.frames[1] = random_image(rng);
  auto perturbed_prop = in;
  perturbed_prop.window.proprio[0][1] += 0.5;

  SUBCASE("single_frame ignores the past") {
    auto c = config_for(EncoderVariant::single_frame, k);
    auto w = PolicyWeights::random(c, 1);
    CHECK(bit_equal(logits_of(c, w, in), logits_of(c, w, perturbed_past)));
  }
  SUBCASE("mem_video sees the past") {
    auto c = config_for(EncoderVariant::mem_video, k);
    auto w = PolicyWeights::random(c, 1);
    CHECK(max_abs_diff(logits_of(c, w, in), logits_of(c, w, perturbed_past)) > 0.0);
  }
  SUBCASE("pool_memory is symmetric in past frames") {
    auto c = config_for(EncoderVariant::pool_memory, k);
    auto w = PolicyWeights::random(c, 1);
    auto perm = in;
    std::swap(perm.window.frames[0], perm.window.frames[2]);
    std::swap(perm.window.frames[1], perm.window.frames[2]);
    CHECK(bit_equal(logits_of(c, w, in), logits_of(c, w, perm)));
    CHECK_FALSE(bit_equal(logits_of(c, w, in), logits_of(c, w, perturbed_past)));

    // Token equals the direct mean of per-frame encodings.
    auto tok = pool_memory_token(in.window, c.vit, w.vit);
    std::vector<double> ref(c.vit.model_dim, 0.0);
    for (std::size_t f = 0; f < k; ++f) {
      auto e = vit_forward(in.window.frames[f], c.vit, w.vit);
      for (std::size_t r = 0; r < e.rows(); ++r)
        for (std::size_t j = 0; j < ref.size(); ++j) ref[j] += e.at(r, j) / static_cast<double>(e.rows() * k);
    }
    for (std::size_t j = 0; j < ref.size(); ++j) CHECK(tok[j] == doctest::Approx(ref[j]).epsilon(1e-12));

    // Two identical past frames pool to the token of one.
    auto twice = VideoClip::from_frames({in.window.frames[0], in.window.frames[0], in.window.frames[3]});
    auto once = VideoClip::from_frames({in.window.frames[0], in.window.frames[3]});
    CHECK(bit_equal(pool_memory_token(twice, c.vit, w.vit), pool_memory_token(once, c.vit, w.vit)));
  }
  SUBCASE("proprio_memory sees states, not past images") {
    auto c = config_for(EncoderVariant::proprio_memory, k);
    auto w = PolicyWeights::random(c, 1);
    CHECK(bit_equal(logits_of(c, w, in), logits_of(c, w, perturbed_past)));
    CHECK_FALSE(bit_equal(logits_of(c, w, in), logits_of(c, w, perturbed_prop)));
  }
  SUBCASE("without history the baselines reduce to single_frame") {
    auto one = random_input(0, 12);
    auto sf = config_for(EncoderVariant::single_frame, 0);
    auto w = PolicyWeights::random(sf, 4);
    for (auto v : {EncoderVariant::pool_memory, EncoderVariant::proprio_memory, EncoderVariant::mem_video}) {
      CHECK(bit_equal(logits_of(config_for(v, 0), w, one), logits_of(sf, w, one)));
    }
  }
}

TEST_CASE("padding and horizon extension") {
  FrameWindow fw(4);
  auto [s, obs] = reset(EnvConfig{}, 1);
  fw.push(obs);
  auto clip = fw.clip();
  CHECK(clip.num_frames() == 5);
  CHECK(clip.valid == std::vector<std::uint8_t>{0, 0, 0, 0, 1});
  CHECK(clip.timestamps.front() == -4);

  // Padding frames are invisible: a short window padded to a longer one gives the same logits.
  auto c5 = config_for(EncoderVariant::mem_video, 5);
  auto w = PolicyWeights::random(c5, 2);
  FrameWindow a(5), b(17);
  for (int t = 0; t < 4; ++t) {
    a.push(obs);
    b.push(obs);
    obs = step(s, {Action::wait}).observation;
  }
  const int id = vocab_id("wait"), g = vocab_id(goal_text(EnvKind::find_object));
  auto c17 = c5;
  c17.horizon = 17;
  CHECK(bit_equal(policy_logits(c5, w, {a.clip(), id, g}), policy_logits(c17, w, {b.clip(), id, g})));
  CHECK_THROWS(policy_logits(c5, w, {b.clip(), id, g}));
}

TEST_CASE("greedy decoding respects legality") {
  Tensor l({1, kNumActions}, {0, 5, 1, 1, 1, 1, 1, 1, 1, 1, 2, 1});
  CHECK(greedy_chunk(l, 0) == ActionChunk{Action::down});
  CHECK(greedy_chunk(l, 1u << static_cast<int>(Action::wait)) == ActionChunk{Action::wait});
}

TEST_CASE("demonstrations") {
  DemoOptions o;
  o.count = 30;
  o.seed = 4;
  o.reveal_delays = {0, 6};
  auto d = generate_demos(o);
  REQUIRE(d.size() == 30);
  for (const auto& ep : d) {
    CHECK(ep.success);
    REQUIRE(ep.records.size() == 3);
    CHECK(ep.records[0].instruction.rfind("the person put object", 0) == 0);
    CHECK(ep.records[1].instruction == "open drawer " + std::to_string(ep.hidden + 1));
    CHECK(ep.records[2].instruction == "pick up object");
    CHECK(ep.records.size() == ep.observation_summaries.size());
  }

  SUBCASE("jsonl round trip replays frames") {
    auto text = episodes_to_jsonl(d);
    auto back = episodes_from_jsonl(text);
    REQUIRE(back.size() == d.size());
    for (std::size_t e = 0; e < d.size(); ++e) {
      REQUIRE(back[e].steps.size() == d[e].steps.size());
      for (std::size_t t = 0; t < d[e].steps.size(); ++t) {
        CHECK(bit_equal(back[e].steps[t].observation.image, d[e].steps[t].observation.image));
        CHECK(back[e].steps[t].instruction == d[e].steps[t].instruction);
      }
      CHECK(back[e].records == d[e].records);
    }
    CHECK(episodes_to_jsonl(back) == text);
    auto bad = text;
    bad.replace(bad.find("\"up\""), 4, "\"down\"");
    CHECK_THROWS(episodes_from_jsonl(bad));
    CHECK_THROWS(episodes_from_jsonl("{\"schema_version\": 9}"));
  }
  SUBCASE("empty dataset") {
    o.count = 0;
    CHECK(generate_demos(o).empty());
    CHECK(episodes_to_jsonl({}).empty());
    CHECK(episodes_from_jsonl("").empty());
  }
  SUBCASE("hinge failure injection") {
    DemoOptions h;
    h.env.kind = EnvKind::hinge_guess;
    h.count = 200;
    h.seed = 8;
    h.failure_fraction = 0.5;
    auto hd = generate_demos(h);
    int injected = 0;
    for (const auto& ep : hd) {
      CHECK(ep.success);
      bool failed = false;
      for (auto& r : ep.records) failed |= r.outcome == SubtaskOutcome::failure;
      CHECK(failed == ep.injected_failure);
      injected += ep.injected_failure;
    }
    CHECK(injected > 70);
    CHECK(injected < 130);
    h.failure_fraction = 0.0;
    for (const auto& ep : generate_demos(h)) CHECK_FALSE(ep.injected_failure);
    o.failure_fraction = 0.5;
    CHECK_THROWS_AS(generate_demos(o), std::invalid_argument);
  }
}

TEST_CASE("learned high-level table reproduces the oracle on its data") {
  DemoOptions o;
  o.env.kind = EnvKind::scoop_count;
  o.count = 40;
  o.seed = 2;
  RuleSummarizer rs;
  auto d = generate_demos(o);
  auto pairs = episode_training_pairs(d, rs);
  auto table = LearnedHL::fit(pairs);
  CHECK(LearnedHL::from_json(table.to_json()).to_json() == table.to_json());

  HLConfig cfg;
  cfg.mode = HLMode::learned_small;
  for (const auto& ep : d) {
    HighLevelPolicy hl(ep.config.kind, cfg, nullptr, &table);
    for (const auto& st : ep.steps) CHECK(hl.step(st.observation).instruction == st.instruction);
  }
  CHECK_THROWS(HighLevelPolicy(EnvKind::scoop_count, cfg));
}

TEST_CASE("behaviour cloning") {
  DemoOptions o;
  o.count = 1;
  o.seed = 1;
  auto d = generate_demos(o);
  auto c = config_for(EncoderVariant::single_frame, 0);

  SUBCASE("initial loss is near uniform") {
    TrainConfig tc;
    tc.steps = 1;
    tc.skip_forced = false;
    auto r = train_bc(d, c, tc);
    CHECK(r.loss_curve[0] == doctest::Approx(std::log(12.0)).epsilon(0.01));
  }
  SUBCASE("one example is memorised") {
    Episode one = d[0];
    const auto s = training_samples(d, true);
    REQUIRE(!s.empty());
    one.steps = {d[0].steps[s[0].step]};
    TrainConfig tc;
    tc.steps = 150;
    tc.batch_size = 1;
    tc.learning_rate = 1e-2;
    auto r = train_bc({one}, c, tc);
    CHECK(r.loss_curve.back() < 0.01);
  }
  SUBCASE("identical configs give identical curves") {
    TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 4;
    auto a = train_bc(d, c, tc), b = train_bc(d, c, tc);
    CHECK(a.loss_curve == b.loss_curve);
    bool same = true;
    a.weights.for_each([&, i = 0](const std::string&, const Tensor& t) mutable {
      std::size_t j = 0;
      b.weights.for_each([&](const std::string&, const Tensor& u) {
        if (j++ == static_cast<std::size_t>(i)) same &= bit_equal(t, u);
      });
      ++i;
    });
    CHECK(same);
  }
  SUBCASE("divergence aborts with diagnostics") {
    TrainConfig tc;
    tc.steps = 3;
    auto bad = PolicyWeights::random(c, 0);
    bad.head_w2 = Tensor::full(bad.head_w2.shape(), 1e308);
    CHECK_THROWS_AS(train_bc(d, c, bad, tc), TrainingError);
  }
  SUBCASE("empty data is rejected") {
    TrainConfig tc;
    CHECK_THROWS_AS(train_bc({}, c, tc), std::invalid_argument);
  }
}

TEST_CASE("evaluation report") {
  auto c = config_for(EncoderVariant::single_frame, 0);
  LowLevelPolicy p(c, PolicyWeights::random(c, 3));
  EvalConfig ec;
  ec.episodes = 30;
  ec.seed = 7;
  auto a = evaluate(&p, ec);
  ec.threads = 3;
  auto b = evaluate(&p, ec);
  CHECK(a.log_csv() == b.log_csv());
  CHECK(a.summary_json() == b.summary_json());
  double m = 0, v = 0;
  for (auto& l : a.log) m += l.success;
  m /= 30;
  for (auto& l : a.log) v += (l.success - m) * (l.success - m);
  CHECK(a.success_se == doctest::Approx(std::sqrt(v / 30) / std::sqrt(30.0)));
  CHECK(a.success_rate == doctest::Approx(m));
  const auto csv = a.log_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
}

TEST_CASE("policy checkpoints") {
  auto c = config_for(EncoderVariant::mem_video, 5);
  LowLevelPolicy p(c, PolicyWeights::random(c, 6));
  const auto path = temp_path("policy.ckpt");
  save_policy(p, path, {{"note", "test"}});
  auto q = load_policy(path);
  CHECK(q.config().horizon == 5);
  auto in = random_input(5, 3);
  CHECK(bit_equal(p.logits(in), q.logits(in)));
  auto q17 = q.with_horizon(17);
  CHECK(q17.logits(random_input(17, 3)).shape() == Shape{1, kNumActions});

  Checkpoint ck = load_checkpoint(path);
  ck.put("head.w1", Tensor::zeros({2, 2}));
  save_checkpoint(ck, path);
  CHECK_THROWS_AS(load_policy(path), CheckpointError);
  ck.config["vocabulary"] = nlohmann::json::array({"x"});
  save_checkpoint(ck, path);
  CHECK_THROWS_AS(load_policy(path), CheckpointError);
  std::filesystem::remove(path);
}
