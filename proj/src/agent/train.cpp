#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "mem/agent.hpp"

namespace mem {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"steps", c.steps}, {"batch_size", c.batch_size},
                     {"seed", c.seed},   {"beta1", c.beta1},     {"beta2", c.beta2},
                     {"epsilon", c.epsilon}, {"skip_forced", c.skip_forced}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.skip_forced = j.value("skip_forced", d.skip_forced);
}

std::vector<SampleRef> training_samples(const std::vector<Episode>& episodes, bool skip_forced) {
  std::vector<SampleRef> out;
  for (std::size_t e = 0; e < episodes.size(); ++e)
    for (std::size_t t = 0; t < episodes[e].steps.size(); ++t) {
      if (skip_forced && std::popcount(static_cast<unsigned>(episodes[e].steps[t].observation.legal)) <= 1) continue;
      out.push_back({e, t});
    }
  return out;
}

PolicyInput make_input(const Episode& ep, std::size_t step, std::size_t horizon) {
  FrameWindow w(horizon);
  for (std::size_t t = step >= horizon ? step - horizon : 0; t <= step; ++t) w.push(ep.steps.at(t).observation);
  return {w.clip(), vocab_id(ep.steps[step].instruction), vocab_id(goal_text(ep.config.kind))};
}

std::vector<int> chunk_targets(const Episode& ep, std::size_t step, std::size_t chunk) {
  std::vector<int> out;
  for (std::size_t i = 0; i < chunk; ++i)
    out.push_back(step + i < ep.steps.size() ? static_cast<int>(ep.steps[step + i].action) : -1);
  return out;
}

TrainResult train_bc(const std::vector<Episode>& data, const PolicyConfig& cfg, const TrainConfig& tc,
                     const StepCallback& on_step) {
  return train_bc(data, cfg, PolicyWeights::random(cfg, tc.seed), tc, on_step);
}

TrainResult train_bc(const std::vector<Episode>& data, const PolicyConfig& cfg, const PolicyWeights& init,
                     const TrainConfig& tc, const StepCallback& on_step) {
  cfg.validate();
  const auto samples = training_samples(data, tc.skip_forced);
  if (samples.empty()) throw std::invalid_argument("training set has no usable samples");
  if (tc.batch_size == 0) throw std::invalid_argument("batch_size must be positive");

  TrainResult r;
  r.weights = init;
  std::vector<std::vector<double>> m1, m2;
  r.weights.for_each([&](const std::string&, const Tensor& t) {
    m1.emplace_back(t.numel(), 0.0);
    m2.emplace_back(t.numel(), 0.0);
  });

  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  for (std::size_t step = 0; step < tc.steps; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    const auto wg = r.weights.requiring_grad();
    double loss_value = 0.0;
    Gradients grads;
    try {
      Tensor total;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& s = samples[batch[b]];
        const auto& ep = data[s.episode];
        const auto logits = policy_logits(cfg, wg, make_input(ep, s.step, cfg.horizon));
        const auto targets = chunk_targets(ep, s.step, cfg.chunk);
        const auto l = cross_entropy(logits, targets);
        total = b == 0 ? l : add(total, l);
      }
      const auto loss = scale(total, 1.0 / static_cast<double>(batch.size()));
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw NumericError("loss is not finite");
      grads = backward(loss);
    } catch (const NumericError& e) {
      std::string ids;
      for (auto b : batch) ids += " " + std::to_string(samples[b].episode) + ":" + std::to_string(samples[b].step);
      throw TrainingError("training diverged at step " + std::to_string(step) + " (" + e.what() +
                          "); batch episode:step =" + ids);
    }

    // Adam with bias correction.
    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(tc.beta1, t), c2 = 1.0 - std::pow(tc.beta2, t);
    std::size_t p = 0;
    std::vector<Tensor> leaves;
    wg.for_each([&](const std::string&, const Tensor& leaf) { leaves.push_back(leaf); });
    r.weights.for_each_mut([&](const std::string&, Tensor& w) {
      const auto g = grads.of(leaves[p]);
      std::vector<double> next(w.vec());
      auto& a = m1[p];
      auto& v = m2[p];
      for (std::size_t i = 0; i < next.size(); ++i) {
        const double gi = g[i];
        a[i] = tc.beta1 * a[i] + (1.0 - tc.beta1) * gi;
        v[i] = tc.beta2 * v[i] + (1.0 - tc.beta2) * gi * gi;
        next[i] -= tc.learning_rate * (a[i] / c1) / (std::sqrt(v[i] / c2) + tc.epsilon);
      }
      w = Tensor(w.shape(), std::move(next));
      ++p;
    });

    r.loss_curve.push_back(loss_value);
    if (on_step) on_step(step, loss_value);
  }
  return r;
}

}  // namespace mem
