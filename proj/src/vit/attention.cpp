#include "mem/attention.hpp"

#include <algorithm>
#include <cmath>

namespace mem {

TokenGroups TokenGroups::per_frame(std::size_t frames, std::size_t patches) {
  TokenGroups g;
  g.members.resize(frames);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t p = 0; p < patches; ++p) g.members[f].push_back(f * patches + p);
  return g;
}

TokenGroups TokenGroups::per_patch(std::size_t frames, std::size_t patches) {
  TokenGroups g;
  g.members.resize(patches);
  for (std::size_t p = 0; p < patches; ++p)
    for (std::size_t f = 0; f < frames; ++f) g.members[p].push_back(f * patches + p);
  return g;
}

TokenGroups TokenGroups::joint(std::size_t tokens) {
  TokenGroups g;
  g.members.resize(1);
  for (std::size_t i = 0; i < tokens; ++i) g.members[0].push_back(i);
  return g;
}

namespace {

using Vec = std::vector<double>;

struct Layout {
  std::size_t tokens, d, heads, dh;
  double scale;
};

Layout check_inputs(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                    const AttentionSpec& spec) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention q/k/v must be equal-shaped matrices, got " +
                     shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                     shape_str(v.shape()));
  }
  const std::size_t tokens = q.dim(0), d = q.dim(1);
  if (heads == 0 || d % heads != 0) throw ShapeError("model dim not divisible by heads");
  if (!spec.groups) throw std::invalid_argument("attention spec without groups");
  if (spec.causal && spec.timestamps.size() != tokens) {
    throw ShapeError("causal attention needs one timestamp per token");
  }
  if (!spec.valid.empty() && spec.valid.size() != tokens) {
    throw ShapeError("validity mask size mismatch");
  }
  for (const auto& g : spec.groups->members) {
    for (auto i : g) {
      if (i >= tokens) throw ShapeError("attention group references a missing token");
    }
  }
  const std::size_t dh = d / heads;
  return {tokens, d, heads, dh, 1.0 / std::sqrt(static_cast<double>(dh))};
}

bool allowed(const AttentionSpec& spec, std::size_t qi, std::size_t kj) {
  if (qi == kj) return true;
  if (!spec.valid.empty() && !spec.valid[kj]) return false;
  if (spec.causal && spec.timestamps[kj] > spec.timestamps[qi]) return false;
  return true;
}

// Probabilities for one group and head, [g x g], masked entries exactly zero.
void group_probs(const double* q, const double* k, const Layout& L, const AttentionSpec& spec,
                 const std::vector<std::size_t>& idx, std::size_t h, Vec& probs,
                 std::uint64_t* macs) {
  const std::size_t g = idx.size();
  probs.assign(g * g, 0.0);
  Vec scores(g * g);
  for (std::size_t a = 0; a < g; ++a) {
    const double* qa = q + idx[a] * L.d + h * L.dh;
    for (std::size_t b = 0; b < g; ++b) {
      const double* kb = k + idx[b] * L.d + h * L.dh;
      double s = 0.0;
      for (std::size_t c = 0; c < L.dh; ++c) s += qa[c] * kb[c];
      scores[a * g + b] = s * L.scale;
    }
  }
  if (macs) *macs += static_cast<std::uint64_t>(g) * g * L.dh;
  for (std::size_t a = 0; a < g; ++a) {
    double mx = -INFINITY;
    for (std::size_t b = 0; b < g; ++b) {
      if (allowed(spec, idx[a], idx[b])) mx = std::max(mx, scores[a * g + b]);
    }
    double total = 0.0;
    for (std::size_t b = 0; b < g; ++b) {
      if (!allowed(spec, idx[a], idx[b])) continue;
      probs[a * g + b] = std::exp(scores[a * g + b] - mx);
      total += probs[a * g + b];
    }
    for (std::size_t b = 0; b < g; ++b) probs[a * g + b] /= total;
  }
}

}  // namespace

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                         const AttentionSpec& spec, std::uint64_t* macs) {
  const Layout L = check_inputs(q, k, v, heads, spec);
  const auto& groups = spec.groups->members;
  Vec out(L.tokens * L.d, 0.0);
  // Saved probabilities, one block per (group, head).
  std::vector<Vec> saved;
  saved.reserve(groups.size() * heads);
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  for (const auto& idx : groups) {
    const std::size_t g = idx.size();
    for (std::size_t h = 0; h < heads; ++h) {
      Vec probs;
      group_probs(qd, kd, L, spec, idx, h, probs, macs);
      for (std::size_t a = 0; a < g; ++a) {
        double* oa = out.data() + idx[a] * L.d + h * L.dh;
        for (std::size_t b = 0; b < g; ++b) {
          const double p = probs[a * g + b];
          const double* vb = vd + idx[b] * L.d + h * L.dh;
          for (std::size_t c = 0; c < L.dh; ++c) oa[c] += p * vb[c];
        }
        if (spec.mix == AttentionMix::delta) {
          const double* va = vd + idx[a] * L.d + h * L.dh;
          for (std::size_t c = 0; c < L.dh; ++c) oa[c] -= va[c];
        }
      }
      if (macs) *macs += static_cast<std::uint64_t>(g) * g * L.dh;
      saved.push_back(std::move(probs));
    }
  }
  Tensor result({L.tokens, L.d}, std::move(out));
  if (!q.requires_grad() && !k.requires_grad() && !v.requires_grad()) {
    return Tensor::record(std::move(result), "grouped_attention", {}, {});
  }
  auto groups_copy = std::make_shared<const TokenGroups>(*spec.groups);
  const AttentionMix mix = spec.mix;
  return Tensor::record(
      std::move(result), "grouped_attention", {q, k, v},
      [q, k, v, L, groups_copy, saved = std::move(saved), mix](const Vec& dout) {
        Vec dq(L.tokens * L.d, 0.0), dk(L.tokens * L.d, 0.0), dv(L.tokens * L.d, 0.0);
        const double* qd = q.data().data();
        const double* kd = k.data().data();
        const double* vd = v.data().data();
        std::size_t block = 0;
        for (const auto& idx : groups_copy->members) {
          const std::size_t g = idx.size();
          for (std::size_t h = 0; h < L.heads; ++h, ++block) {
            const Vec& p = saved[block];
            const std::size_t off = h * L.dh;
            Vec dp(g * g, 0.0);
            for (std::size_t a = 0; a < g; ++a) {
              const double* ga = dout.data() + idx[a] * L.d + off;
              for (std::size_t b = 0; b < g; ++b) {
                const double* vb = vd + idx[b] * L.d + off;
                double s = 0.0;
                for (std::size_t c = 0; c < L.dh; ++c) s += ga[c] * vb[c];
                dp[a * g + b] = s;
                double* dvb = dv.data() + idx[b] * L.d + off;
                const double pab = p[a * g + b];
                for (std::size_t c = 0; c < L.dh; ++c) dvb[c] += pab * ga[c];
              }
              if (mix == AttentionMix::delta) {
                double* dva = dv.data() + idx[a] * L.d + off;
                for (std::size_t c = 0; c < L.dh; ++c) dva[c] -= ga[c];
              }
            }
            for (std::size_t a = 0; a < g; ++a) {
              double dot = 0.0;
              for (std::size_t b = 0; b < g; ++b) dot += p[a * g + b] * dp[a * g + b];
              const double* qa = qd + idx[a] * L.d + off;
              double* dqa = dq.data() + idx[a] * L.d + off;
              for (std::size_t b = 0; b < g; ++b) {
                const double ds = p[a * g + b] * (dp[a * g + b] - dot) * L.scale;
                if (ds == 0.0) continue;
                const double* kb = kd + idx[b] * L.d + off;
                double* dkb = dk.data() + idx[b] * L.d + off;
                for (std::size_t c = 0; c < L.dh; ++c) {
                  dqa[c] += ds * kb[c];
                  dkb[c] += ds * qa[c];
                }
              }
            }
          }
        }
        return std::vector<Vec>{dq, dk, dv};
      });
}

std::vector<std::vector<double>> attention_weights(const Tensor& q, const Tensor& k,
                                                   std::size_t heads, std::size_t head,
                                                   const AttentionSpec& spec) {
  const Layout L = check_inputs(q, k, k, heads, spec);
  if (head >= heads) throw std::out_of_range("head index");
  std::vector<std::vector<double>> out;
  for (const auto& idx : spec.groups->members) {
    Vec probs;
    group_probs(q.data().data(), k.data().data(), L, spec, idx, head, probs, nullptr);
    out.push_back(std::move(probs));
  }
  return out;
}

}  // namespace mem
