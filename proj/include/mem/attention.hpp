#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mem/tensor.hpp"

namespace mem {

/// How attended values are combined.
enum class AttentionMix {
  standard,  // sum_j a_ij v_j
  delta,     // sum_j a_ij v_j - v_i; exactly zero when a token can only see itself
};

/// Partition of token rows into independent attention groups. Members are
/// listed in ascending timestamp order within a group.
struct TokenGroups {
  std::vector<std::vector<std::size_t>> members;

  /// One group per frame: rows [f*n, (f+1)*n).
  static TokenGroups per_frame(std::size_t frames, std::size_t patches);
  /// One group per patch index across frames: rows {f*n + p}.
  static TokenGroups per_patch(std::size_t frames, std::size_t patches);
  /// Everything in one group.
  static TokenGroups joint(std::size_t tokens);
};

struct AttentionSpec {
  const TokenGroups* groups = nullptr;
  /// Per-token timestamps; when causal, token i sees token j only if ts[j] <= ts[i].
  std::span<const int> timestamps;
  /// Per-token validity; invalid keys are hidden from every query but themselves.
  std::span<const std::uint8_t> valid;
  bool causal = false;
  AttentionMix mix = AttentionMix::standard;
};

/// Multi-head scaled dot-product attention evaluated independently in each
/// group. q, k, v are [tokens x d]; heads split d into equal column blocks.
/// Scores are computed for every (query, key) pair of a group and masked
/// afterwards, so `macs` (when non-null) is incremented by exactly
/// 2 * d * sum(group_size^2).
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                         const AttentionSpec& spec, std::uint64_t* macs = nullptr);

/// Attention probabilities for one head, row-major per group, for inspection
/// in tests (rows sum to one over allowed keys).
std::vector<std::vector<double>> attention_weights(const Tensor& q, const Tensor& k,
                                                   std::size_t heads, std::size_t head,
                                                   const AttentionSpec& spec);

}  // namespace mem
