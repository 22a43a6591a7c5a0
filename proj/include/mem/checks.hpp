#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mem/video_encoder.hpp"

namespace mem {

/// Outcome of one invariant check, shared by the self-test and acceptance runs.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// 4 layers, d = 8, n = 4, 2 heads: small enough for finite differences on every parameter.
ViTConfig gradient_check_config();

/// Single-frame clips through encode_video equal vit_forward bit for bit.
CheckResult check_single_frame_equivalence(const ViTConfig& cfg, std::size_t draws, std::uint64_t seed);

/// Perturbing t = -1 leaves every layer's activations at older frames unchanged
/// (within 1e-12), and perturbing the oldest frame moves the t = 0 output.
CheckResult check_causality(const ViTConfig& cfg, std::size_t horizon, std::size_t trials, std::uint64_t seed,
                            TemporalMask mask = TemporalMask::causal);

/// Video encoder parameter count equals the image encoder's for random configs.
CheckResult check_no_new_parameters(std::size_t configs, std::uint64_t seed);

/// Central finite differences against backward for every parameter of
/// encode_video followed by a fixed random linear readout.
CheckResult check_encoder_gradients(const ViTConfig& cfg, std::size_t horizon, std::uint64_t seed,
                                    double tolerance = 1e-4);

/// Instrumented MACs equal flop_count for every (patches per frame, K) pair.
CheckResult check_mac_formula(const std::vector<std::size_t>& patch_counts, const std::vector<std::size_t>& horizons);

/// Softmax and RMS norm against long double references.
CheckResult check_numeric_oracles(std::uint64_t seed);

/// Failure invariance, duplicate suppression, count aggregation, open/close
/// cancellation and the character budget over a synthetic event stream; also
/// that naive concatenation keeps r+1 copies of an r-times-failed subtask.
CheckResult check_language_memory(std::size_t events, std::uint64_t seed);

}  // namespace mem
