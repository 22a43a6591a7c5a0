#include <cmath>
#include <sstream>
#include <thread>

#include "mem/agent.hpp"

namespace mem {

std::uint64_t episode_seed(std::uint64_t master, std::size_t index) {
  return splitmix64(splitmix64(master) + static_cast<std::uint64_t>(index));
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{
      {"env", c.env}, {"episodes", c.episodes}, {"seed", c.seed}, {"hl", c.hl}, {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  EvalConfig d;
  c.env = j.contains("env") ? j.at("env").get<EnvConfig>() : d.env;
  c.episodes = j.value("episodes", d.episodes);
  c.seed = j.value("seed", d.seed);
  c.hl = j.contains("hl") ? j.at("hl").get<HLConfig>() : d.hl;
  c.threads = j.value("threads", d.threads);
}

namespace {

EpisodeLog run_episode(const LowLevelPolicy* policy, const EvalConfig& cfg, const LearnedHL* learned,
                       std::size_t index) {
  EpisodeLog log;
  log.index = index;
  log.seed = episode_seed(cfg.seed, index);
  auto [s, obs] = reset(cfg.env, log.seed);
  log.hidden = s.hidden_value();
  HighLevelPolicy hl(cfg.env.kind, cfg.hl, nullptr, learned);
  FrameWindow window(policy ? policy->config().horizon : 0);
  const int goal = vocab_id(goal_text(cfg.env.kind));
  StepResult r;
  while (!s.done) {
    const auto h = hl.step(obs);
    window.push(obs);
    ActionChunk chunk;
    if (policy) chunk = policy->act({window.clip(), vocab_id(h.instruction), goal}, obs.legal);
    else chunk = {expert_action(s)};
    r = step(s, chunk);
    obs = r.observation;
  }
  log.success = s.success;
  log.score = s.score;
  log.max_score = max_score(s);
  log.steps = s.step;
  log.illegal_actions = s.illegal_actions;
  log.attempts = r.info.attempts;
  log.first_success_attempt = r.info.first_success_attempt;
  return log;
}

double se_of(const std::vector<double>& xs, double mean) {
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  v /= static_cast<double>(xs.size());
  return std::sqrt(v) / std::sqrt(static_cast<double>(xs.size()));
}

}  // namespace

EvalReport evaluate(const LowLevelPolicy* policy, const EvalConfig& cfg, const LearnedHL* learned) {
  cfg.env.validate();
  if (cfg.episodes == 0) throw std::invalid_argument("evaluation needs at least one episode");
  EvalReport rep;
  rep.episodes = cfg.episodes;
  rep.log.resize(cfg.episodes);
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.episodes)));
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](unsigned t) {
    try {
      for (std::size_t i = t; i < cfg.episodes; i += threads) rep.log[i] = run_episode(policy, cfg, learned, i);
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<double> succ, score;
  std::map<int, std::pair<int, int>> by_hidden;
  for (const auto& l : rep.log) {
    succ.push_back(l.success ? 1.0 : 0.0);
    score.push_back(l.score);
    auto& h = by_hidden[l.hidden];
    h.first += l.success ? 1 : 0;
    ++h.second;
  }
  const double n = static_cast<double>(cfg.episodes);
  for (double x : succ) rep.success_rate += x;
  rep.success_rate /= n;
  for (double x : score) rep.mean_score += x;
  rep.mean_score /= n;
  rep.success_se = se_of(succ, rep.success_rate);
  rep.score_se = se_of(score, rep.mean_score);
  for (const auto& [k, v] : by_hidden) rep.success_by_hidden[k] = static_cast<double>(v.first) / v.second;
  return rep;
}

nlohmann::json EvalReport::summary_json() const {
  nlohmann::json by = nlohmann::json::object();
  for (const auto& [k, v] : success_by_hidden) by[std::to_string(k)] = v;
  nlohmann::json j{{"episodes", episodes},     {"success_rate", success_rate}, {"success_se", success_se},
                   {"mean_score", mean_score}, {"score_se", score_se},         {"success_by_hidden", by}};
  // Attempt breakdown for tasks that count attempts.
  std::map<int, int> first;
  bool any = false;
  for (const auto& l : log) {
    if (l.attempts > 0) any = true;
    ++first[l.first_success_attempt];
  }
  if (any) {
    nlohmann::json h = nlohmann::json::object();
    for (const auto& [k, v] : first) h[std::to_string(k)] = v;
    j["first_success_attempt_counts"] = h;
  }
  return j;
}

std::string EvalReport::log_csv() const {
  std::ostringstream out;
  out << "index,seed,hidden,success,score,max_score,steps,illegal_actions,attempts,first_success_attempt\n";
  for (const auto& l : log) {
    out << l.index << ',' << l.seed << ',' << l.hidden << ',' << (l.success ? 1 : 0) << ',' << l.score << ','
        << l.max_score << ',' << l.steps << ',' << l.illegal_actions << ',' << l.attempts << ','
        << l.first_success_attempt << '\n';
  }
  return out.str();
}

}  // namespace mem
