#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mem/checkpoint.hpp"
#include "mem/lang_memory.hpp"
#include "mem/memenv.hpp"
#include "mem/video_encoder.hpp"

namespace mem {

std::uint64_t splitmix64(std::uint64_t x);

// ---------------------------------------------------------------------------
// Closed vocabulary of instructions and goals. Ids index the token table.

const std::vector<std::string>& vocabulary();
/// Throws std::out_of_range for strings outside the vocabulary.
int vocab_id(const std::string& text);
/// Instructions the high-level policy may emit for a task, "done" included.
std::vector<std::string> subtask_vocabulary(EnvKind kind);

/// Short text description of what is visible in an observation.
std::string observation_summary(EnvKind kind, const Observation& obs);

// ---------------------------------------------------------------------------
// High-level policy

enum class HLMode { scripted_oracle, learned_small };
std::string to_string(HLMode m);
HLMode hl_mode_from_string(const std::string& s);

struct HLConfig {
  HLMode mode = HLMode::scripted_oracle;
  bool use_memory = true;    // false: memory stays empty, instructions fall back to generic ones
  bool record_failures = false;
  std::size_t max_chars = kDefaultMemoryChars;
  /// Scripted mode without memory: also read events from this many past
  /// observations. 0 decides on the current observation alone.
  std::size_t window = 0;
};

void to_json(nlohmann::json& j, const HLConfig& c);
void from_json(const nlohmann::json& j, HLConfig& c);

/// Lookup table learned from language-memory training pairs: the most frequent
/// (next instruction, next memory) per (goal, memory, observation) context,
/// backing off to (goal, observation) and then to the goal alone.
class LearnedHL {
 public:
  static LearnedHL fit(const std::vector<TrainingPair>& pairs);
  struct Prediction {
    std::string instruction;
    LanguageMemory memory;
  };
  std::optional<Prediction> predict(const LanguageMemory& m, const std::string& observation,
                                    const std::string& goal) const;
  std::size_t size() const { return exact_.size(); }

  nlohmann::json to_json() const;
  static LearnedHL from_json(const nlohmann::json& j);

 private:
  using Counts = std::map<std::string, int>;  // key: instruction + '\n' + memory text
  std::map<std::string, Counts> exact_, by_obs_, by_goal_;
};

/// Fires once per executed chunk. Tracks the memory and the last instruction,
/// and reports the subtask events it detected on the latest observation.
class HighLevelPolicy {
 public:
  HighLevelPolicy(EnvKind kind, HLConfig cfg, const Summarizer* summarizer = nullptr,
                  const LearnedHL* learned = nullptr);

  struct Output {
    std::string instruction;
    LanguageMemory memory;
    std::vector<SubtaskRecord> events;
  };

  void reset();
  Output step(const Observation& obs);

  const LanguageMemory& memory() const { return memory_; }
  const std::string& last_instruction() const { return last_; }
  EnvKind kind() const { return kind_; }
  const std::string& goal() const { return goal_; }

 private:
  EnvKind kind_;
  HLConfig cfg_;
  RuleSummarizer rule_;
  const Summarizer* summarizer_;
  const LearnedHL* learned_;
  std::string goal_;
  LanguageMemory memory_;
  std::string last_;
  std::deque<Observation> past_;
};

/// One scripted-oracle decision: detected events and the next instruction
/// given the visible observation, the memory and the previous instruction.
struct OracleDecision {
  std::vector<SubtaskRecord> events;
  std::string instruction;
};
OracleDecision oracle_decide(EnvKind kind, const Observation& obs, const LanguageMemory& m,
                             const std::string& previous);

// ---------------------------------------------------------------------------
// Low-level policy

enum class EncoderVariant { mem_video, single_frame, pool_memory, proprio_memory };
std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& s);

struct PolicyConfig {
  ViTConfig vit = small_vit();
  std::vector<std::size_t> temporal_layers{3};
  EncoderVariant variant = EncoderVariant::mem_video;
  std::size_t horizon = 5;  // K: the window holds K+1 frames
  std::size_t chunk = 1;    // H actions per call
  std::size_t head_hidden = 64;

  /// d = 16, L = 4, 2 heads, mlp 32, 4x4 patches of a 16x16x4 image.
  static ViTConfig small_vit();
  STLayerSchedule schedule() const;
  /// Width of the head input: n*d patch features plus memory, proprio,
  /// instruction and goal slots of width d.
  std::size_t head_input() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

struct PolicyWeights {
  ViTWeights vit;
  Tensor proprio_w;  // [d x kProprioDim]
  Tensor proprio_b;  // [d]
  Tensor tokens;     // [vocab x d]
  Tensor head_w1;    // [hidden x head_input]
  Tensor head_b1;    // [hidden]
  Tensor head_w2;    // [H*12 x hidden], tiny at init so logits start near uniform
  Tensor head_b2;    // [H*12]

  static PolicyWeights random(const PolicyConfig& cfg, std::uint64_t seed);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void for_each_mut(const std::function<void(const std::string&, Tensor&)>& fn);
  std::size_t parameter_count() const;
  PolicyWeights requiring_grad() const;
};

/// K+1 frames oldest first; frames before the episode start are zero and
/// marked invalid.
struct PolicyInput {
  VideoClip window;
  int instruction = 0;
  int goal = 0;
};

/// Mean of the past frames' patch encodings (each frame through the plain
/// ViT), summed in an order that does not depend on frame order. [1 x d];
/// zeros when no valid past frame exists.
Tensor pool_memory_token(const VideoClip& window, const ViTConfig& cfg, const ViTWeights& w);
/// Mean of the past frames' proprio tokens. [1 x d]; zeros without history.
Tensor proprio_memory_token(const VideoClip& window, const Tensor& proj_w, const Tensor& proj_b);

/// Tokens the head sees for this variant: [n + 1 x d], the last row being
/// the memory slot (zero for mem_video and single_frame).
Tensor encode_window(const PolicyConfig& cfg, const PolicyWeights& w, const VideoClip& window,
                     MacCounts* macs = nullptr);

/// [H x 12] action logits.
Tensor policy_logits(const PolicyConfig& cfg, const PolicyWeights& w, const PolicyInput& in,
                     MacCounts* macs = nullptr);

/// Argmax per slot over the legal actions.
ActionChunk greedy_chunk(const Tensor& logits, ActionMask legal);

class LowLevelPolicy {
 public:
  LowLevelPolicy(PolicyConfig cfg, PolicyWeights weights);
  ActionChunk act(const PolicyInput& in, ActionMask legal) const;
  Tensor logits(const PolicyInput& in) const;

  const PolicyConfig& config() const { return cfg_; }
  const PolicyWeights& weights() const { return weights_; }
  /// Same weights, different window length.
  LowLevelPolicy with_horizon(std::size_t k) const;

 private:
  PolicyConfig cfg_;
  PolicyWeights weights_;
};

/// Throws CheckpointError on a shape or config mismatch.
void save_policy(const LowLevelPolicy& p, const std::filesystem::path& path,
                 const nlohmann::json& extra = nlohmann::json::object());
LowLevelPolicy load_policy(const std::filesystem::path& path);

/// Rolling window of the last K+1 observations.
class FrameWindow {
 public:
  explicit FrameWindow(std::size_t horizon);
  void push(const Observation& obs);
  VideoClip clip() const;
  std::size_t horizon() const { return horizon_; }

 private:
  std::size_t horizon_;
  std::vector<Observation> frames_;  // newest last, at most K+1
};

// ---------------------------------------------------------------------------
// Demonstrations

struct DemoStep {
  Observation observation;
  std::string instruction;
  Action action = Action::wait;
};

struct Episode {
  EnvConfig config;
  std::uint64_t seed = 0;
  int hidden = 0;
  bool hl_memory = true;
  bool injected_failure = false;
  std::vector<DemoStep> steps;
  std::vector<SubtaskRecord> records;
  std::vector<std::string> observation_summaries;  // one per record
  bool success = false;
  double score = 0.0;

  AnnotatedEpisode annotated() const;
};

struct DemoOptions {
  EnvConfig env;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  /// Fraction of episodes that start with a failed attempt followed by the
  /// correction. Only hinge_guess has a recoverable failure.
  double failure_fraction = 0.0;
  /// Each episode draws its reveal delay and HL memory flag from these.
  std::vector<int> reveal_delays;        // empty: env.reveal_delay
  std::vector<bool> hl_memory{true};
};

void to_json(nlohmann::json& j, const DemoOptions& o);
void from_json(const nlohmann::json& j, DemoOptions& o);

/// Scripted demonstrator with subtask annotations from the oracle HL.
std::vector<Episode> generate_demos(const DemoOptions& opts);

inline constexpr int kEpisodeSchemaVersion = 1;
/// One JSON object per line. Frames are not stored: loading replays the
/// recorded actions, which the deterministic env turns back into frames.
std::string episodes_to_jsonl(const std::vector<Episode>& episodes);
std::vector<Episode> episodes_from_jsonl(const std::string& text);

/// Language-memory training pairs from every annotated episode.
std::vector<TrainingPair> episode_training_pairs(const std::vector<Episode>& episodes,
                                                 const Summarizer& s);

// ---------------------------------------------------------------------------
// Behaviour cloning

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 3e-3;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Drop steps where only one action is legal; they carry no signal.
  bool skip_forced = true;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct SampleRef {
  std::size_t episode = 0;
  std::size_t step = 0;
};

std::vector<SampleRef> training_samples(const std::vector<Episode>& episodes, bool skip_forced);
PolicyInput make_input(const Episode& ep, std::size_t step, std::size_t horizon);
std::vector<int> chunk_targets(const Episode& ep, std::size_t step, std::size_t chunk);

struct TrainResult {
  PolicyWeights weights;
  std::vector<double> loss_curve;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

TrainResult train_bc(const std::vector<Episode>& data, const PolicyConfig& cfg,
                     const TrainConfig& tc, const StepCallback& on_step = {});
TrainResult train_bc(const std::vector<Episode>& data, const PolicyConfig& cfg,
                     const PolicyWeights& init, const TrainConfig& tc,
                     const StepCallback& on_step = {});

// ---------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
  EnvConfig env;
  std::size_t episodes = 400;
  std::uint64_t seed = 0;
  HLConfig hl;
  unsigned threads = 1;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EpisodeLog {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  int hidden = 0;
  bool success = false;
  double score = 0.0;
  double max_score = 0.0;
  int steps = 0;
  int illegal_actions = 0;
  int attempts = 0;
  int first_success_attempt = -1;
};

struct EvalReport {
  std::size_t episodes = 0;
  double success_rate = 0.0;
  double success_se = 0.0;
  double mean_score = 0.0;
  double score_se = 0.0;
  /// Success rate per hidden value.
  std::map<int, double> success_by_hidden;
  std::vector<EpisodeLog> log;

  nlohmann::json summary_json() const;
  std::string log_csv() const;
};

/// Greedy rollouts of `policy`; a null policy runs the privileged expert as
/// the low-level controller.
EvalReport evaluate(const LowLevelPolicy* policy, const EvalConfig& cfg,
                    const LearnedHL* learned = nullptr);

/// Env seed of episode i under master seed s.
std::uint64_t episode_seed(std::uint64_t master, std::size_t index);

}  // namespace mem
