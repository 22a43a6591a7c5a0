#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mem/tensor.hpp"

namespace mem {

enum class EnvKind { find_object, scoop_count, grocery_unpack, cook_timer, hinge_guess, mug_swap };

std::string to_string(EnvKind k);
/// Throws std::invalid_argument for unknown names.
EnvKind env_kind_from_string(const std::string& s);
std::vector<EnvKind> all_env_kinds();

enum class Action : std::uint8_t { up, down, left, right, open, close, grasp, release, scoop, flip, wait, done };

inline constexpr std::size_t kNumActions = 12;
inline constexpr std::size_t kMaxChunk = 8;
std::string to_string(Action a);
Action action_from_string(const std::string& s);

using ActionChunk = std::vector<Action>;
using ActionMask = std::uint16_t;

inline constexpr std::size_t kImageSize = 16;
inline constexpr std::size_t kImageChannels = 4;  // scene, arm, objects/events, wrist view
inline constexpr std::size_t kProprioDim = 4;     // arm row, arm col, gripper, elapsed phase
/// Frames 0..2 of every episode may show the reveal event.
inline constexpr int kRevealFrames = 3;

struct EnvConfig {
  EnvKind kind = EnvKind::find_object;
  int drawers = 4;            // find_object, 2..4
  int reveal_delay = 0;       // extra steps between the reveal and the go signal
  int attempt_threshold = 2;  // hinge_guess success: opened within this many pulls
  int max_items = 5;          // grocery_unpack hidden count is 1..max_items
  int cook_min = 6;           // cook_timer window per side, in steps
  int cook_max = 36;
  int proprio_period = 128;   // elapsed-step phase in proprio
  int max_steps = 0;          // 0 picks a per-kind default

  void validate() const;
  int step_limit() const;
  /// First step at which the go light is on (reveal tasks only).
  int go_step() const { return kRevealFrames + reveal_delay; }
};

void to_json(nlohmann::json& j, const EnvConfig& c);
void from_json(const nlohmann::json& j, EnvConfig& c);

struct Observation {
  Tensor image;  // [4 x 16 x 16]
  std::vector<double> proprio;
  ActionMask legal = 0;
  int step = 0;

  bool is_legal(Action a) const { return (legal >> static_cast<int>(a)) & 1u; }
};

// Arm positions are nodes of a small per-task graph; moves follow its edges.
struct Cell {
  int row = 0, col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct FindObjectState {
  int target = 0;             // hidden
  int docked = -1;            // drawer index or -1 at home
  std::vector<bool> opened;
};

struct ScoopCountState {
  int person_scoops = 0;      // hidden, 0 or 1
  int scoops_added = 0;
  bool lid_open = false;
  bool scoop_flash = false;   // robot scoop animation on the current frame
};

struct GroceryState {
  int items = 1;              // hidden total
  int in_bag = 1;
  int on_table = 0;
  int place = 0;              // 0 home, 1 bag, 2 table
  bool holding = false;
  int wrist_count = -1;       // count shown in the wrist view this frame, -1 none
};

struct CookState {
  int precook = 0;            // hidden, steps already cooked on side one
  int flip_step = -1;
  bool flip_flash = false;
};

struct HingeState {
  int hinge = 0;              // hidden: 0 left, 1 right
  int cue = 0;                // visible hint, redrawn every attempt
  int docked = -1;            // side index or -1 at home
  int attempts = 0;
  bool opened = false;
  bool rattle = false;        // failed pull shown on the current frame
  int first_success_attempt = -1;
};

struct MugSwapState {
  static constexpr int kSlots = 4;
  int permutation = 0;              // hidden labelling of the identical mugs
  std::array<int, kSlots> slot{};   // mug id per table slot, -1 empty
  int under_machine = -1;
  int held = -1;
  int place = 0;                    // 0 home, 1 machine, 2.. table slot + 2
  std::array<bool, 3> used{};
  int landed_slot = -1;             // return animation on the current frame
};

using TaskState =
    std::variant<FindObjectState, ScoopCountState, GroceryState, CookState, HingeState, MugSwapState>;

struct EnvState {
  EnvConfig config;
  std::uint64_t seed = 0;
  int step = 0;
  bool done = false;
  bool success = false;
  double score = 0.0;
  int illegal_actions = 0;
  std::mt19937_64 rng;
  TaskState task;

  int hidden_value() const;
};

struct StepInfo {
  int illegal_actions = 0;  // within this chunk
  double score = 0.0;       // cumulative rubric score
  double max_score = 0.0;
  bool success = false;
  int attempts = 0;         // hinge_guess pulls so far
  int first_success_attempt = -1;
  int executed = 0;         // actions run before the episode ended
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Number of values the hidden variable can take for this config.
int hidden_cardinality(const EnvConfig& cfg);

/// Hidden variables come from the seeded rng; `forced_hidden` overrides the
/// drawn value after all draws, so the rest of the episode is unchanged.
std::pair<EnvState, Observation> reset(const EnvConfig& cfg, std::uint64_t seed,
                                       std::optional<int> forced_hidden = std::nullopt);

/// Runs the chunk in order, stopping early when the episode ends. Throws
/// std::logic_error when called on a finished episode.
StepResult step(EnvState& s, const ActionChunk& chunk);

Observation observe(const EnvState& s);
double max_score(const EnvState& s);
/// Success probability of a policy that guesses the hidden variable uniformly.
double chance_rate(const EnvConfig& cfg);

/// 16 lines of 16 characters; hidden variables are not drawn.
std::string render_debug(const EnvState& s);

/// Optimal action with privileged access to the hidden state.
Action expert_action(const EnvState& s);

/// Guesses the hidden variable uniformly and otherwise plays like the expert.
class RandomResolver {
 public:
  explicit RandomResolver(std::uint64_t seed) : rng_(seed) {}
  Action act(const EnvState& s);

 private:
  std::mt19937_64 rng_;
  std::optional<int> guess_;
  int last_attempts_ = -1;
  std::vector<int> guesses_;  // cook_timer side durations
  int pick_ = -1;             // mug_swap slot chosen this round
  bool returning_ = false;
};

/// Human readable per-task state decoded from pixels alone.
struct VisibleState {
  Cell arm;
  bool holding = false;
  bool go = false;
  int marker = -1;            // find_object: drawer showing the object; mug: landed slot
  std::vector<bool> opened;   // drawers / lid / door
  bool person_scoop = false;
  bool scoop_flash = false;
  int wrist_count = -1;
  bool on_table = false;
  bool flip_flash = false;
  bool rattle = false;
  int cue = -1;
  int place = 0;
  std::array<bool, 4> mug_at{};
  bool mug_under_machine = false;
  int precook_shown = -1;
};

VisibleState decode(EnvKind kind, const Observation& obs);

/// Goal string shown to the policies, one per task.
std::string goal_text(EnvKind kind);

}  // namespace mem
