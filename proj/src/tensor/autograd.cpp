#include <cmath>
#include <unordered_set>

#include "mem/tensor.hpp"

namespace mem {

Tensor Gradients::of(const Tensor& t) const {
  if (t.requires_grad()) {
    auto it = grads_.find(t.node().get());
    if (it != grads_.end()) return Tensor(t.shape(), it->second);
  }
  return Tensor::zeros(t.shape());
}

GradTape::GradTape(const Tensor& loss) : loss_(loss) {
  if (loss.numel() != 1) {
    throw GradientError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw GradientError("loss is detached from every tensor that requires grad");
  }
  // Iterative post-order DFS so deep graphs do not exhaust the stack.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

Gradients GradTape::backward() const {
  Gradients out;
  out.grads_[loss_.node().get()] = {1.0};
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const auto& node = *it;
    if (!node->backward) continue;
    auto g = out.grads_.find(node.get());
    if (g == out.grads_.end()) continue;
    auto parent_grads = node->backward(g->second);
    ++out.ops_replayed_;
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const auto& p = node->parents[i];
      if (!p) continue;
      auto& acc = out.grads_[p.get()];
      const auto& src = parent_grads.at(i);
      if (acc.empty()) {
        acc = src;
      } else {
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += src[k];
      }
    }
  }
  return out;
}

Gradients backward(const Tensor& loss) { return GradTape(loss).backward(); }

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad step must be positive");
  std::vector<double> g(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double plus = f(x.with_element(i, x[i] + step));
    const double minus = f(x.with_element(i, x[i] - step));
    if (std::isnan(plus) || std::isnan(minus)) {
      throw NumericError("finite_diff_grad: function returned NaN at coordinate " +
                         std::to_string(i));
    }
    g[i] = (plus - minus) / (2.0 * step);
  }
  return Tensor(x.shape(), std::move(g));
}

}  // namespace mem
