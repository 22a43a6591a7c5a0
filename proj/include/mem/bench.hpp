#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mem/video_encoder.hpp"

namespace mem {

/// Scope of a timed unit: one temporal-enabled layer, or the whole encoder.
enum class BenchScope { layer, encoder };

struct BenchConfig {
  ViTConfig vit = ViTConfig::reference();
  std::vector<std::size_t> horizons{0, 1, 5, 11, 17};
  std::size_t repeats = 20;
  std::size_t warmup = 3;
  std::vector<BenchScope> scopes{BenchScope::layer, BenchScope::encoder};
  std::size_t max_tokens = 4096;  // refuse joint attention beyond this many tokens
  double budget_ms = 0.0;         // optional latency budget line for plots, 0 = none
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const BenchConfig& c);
void from_json(const nlohmann::json& j, BenchConfig& c);

struct BenchRow {
  std::size_t k = 0;
  std::size_t n = 0;
  std::string variant;  // naive_joint_layer, factorized_layer, naive_joint_encoder, factorized_encoder
  std::uint64_t mac_count = 0;
  double wall_ms_median = 0.0;
  std::size_t repeats = 0;

  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct Timing {
  std::uint64_t mac_count = 0;
  double wall_ms_median = 0.0;
};

/// Joint attention over all (K+1)*n tokens in every timed layer.
Timing run_naive_joint(const BenchConfig& cfg, std::size_t k, BenchScope scope);
/// Space-time factorized layer or encoder; the MAC count is checked against
/// flop_count and a mismatch throws std::logic_error.
Timing run_factorized(const BenchConfig& cfg, std::size_t k, BenchScope scope);

/// Both variants for every horizon and scope, horizons in ascending order.
std::vector<BenchRow> run_bench(const BenchConfig& cfg);

/// MACs of the whole factorized encoder under the every-fourth schedule.
std::uint64_t factorized_encoder_macs(const ViTConfig& cfg, std::size_t k);
/// Per temporal-layer naive / factorized ratio.
double analytic_mac_ratio(const ViTConfig& cfg, std::size_t k);

inline constexpr const char* kBenchCsvHeader = "k,n,variant,mac_count,wall_ms_median,repeats";

std::string bench_csv(const std::vector<BenchRow>& rows);
/// Throws std::runtime_error on a malformed file.
std::vector<BenchRow> parse_bench_csv(const std::string& text);
/// Whitespace table: one line per K, one latency column per variant.
std::string bench_plot_data(const std::vector<BenchRow>& rows, double budget_ms);

/// Writes <prefix>.csv, <prefix>.plot.dat and <prefix>.meta.json. Throws
/// std::runtime_error when a file cannot be written.
void emit_report(const std::vector<BenchRow>& rows, const BenchConfig& cfg, const std::filesystem::path& prefix);

}  // namespace mem
