#include "mem/memenv.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mem {

namespace {

constexpr std::array<const char*, 6> kKindNames{"find_object", "scoop_count", "grocery_unpack",
                                                "cook_timer",  "hinge_guess", "mug_swap"};
constexpr std::array<const char*, kNumActions> kActionNames{
    "up", "down", "left", "right", "open", "close", "grasp", "release", "scoop", "flip", "wait", "done"};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr ActionMask bit(Action a) { return static_cast<ActionMask>(1u << static_cast<int>(a)); }
constexpr ActionMask kMoves = bit(Action::up) | bit(Action::down) | bit(Action::left) | bit(Action::right);

// Pixel values.
constexpr double kFurniture = 0.5;
constexpr double kOpen = 1.0;
constexpr double kPad = 0.25;
constexpr double kHeld = 0.5;

constexpr Cell kGoLight{0, 15};

// find_object: drawers in the order up, right, down, left.
constexpr std::array<Cell, 4> kDrawers{{{1, 7}, {7, 13}, {13, 7}, {7, 1}}};
constexpr std::array<Cell, 4> kDrawerDocks{{{4, 7}, {7, 10}, {10, 7}, {7, 4}}};
constexpr Cell kHome{7, 7};

// scoop_count
constexpr Cell kGrinder{7, 7};
constexpr int kLidRow = 5;
constexpr Cell kPersonScoop{3, 7};
constexpr Cell kRobotScoop{9, 10};
constexpr Cell kScoopArm{11, 7};

// grocery_unpack
constexpr Cell kBag{7, 1};
constexpr Cell kTable{7, 13};
constexpr std::array<Cell, 3> kGroceryPlaces{{{7, 7}, {7, 4}, {7, 10}}};
constexpr int kWristRow = 14;
constexpr Cell kWristActive{15, 15};

// cook_timer
constexpr Cell kStove{7, 7};
constexpr Cell kFlipFlash{4, 7};
constexpr Cell kCookArm{11, 7};

// hinge_guess: sides left, right.
constexpr std::array<Cell, 2> kHandles{{{2, 4}, {2, 10}}};
constexpr std::array<Cell, 2> kHingeDocks{{{5, 4}, {5, 10}}};
constexpr Cell kHingeHome{8, 7};
constexpr std::array<Cell, 2> kCues{{{12, 3}, {12, 11}}};
constexpr Cell kRattle{2, 7};

// mug_swap: places 0 home, 1 machine, 2..5 table slots.
constexpr Cell kMachine{1, 7};
constexpr std::array<Cell, 4> kMugSlots{{{7, 1}, {7, 13}, {13, 4}, {13, 10}}};
constexpr std::array<Cell, 6> kMugDocks{{{7, 7}, {4, 7}, {7, 4}, {7, 10}, {10, 4}, {10, 10}}};

int direction_of(Action a) {
  switch (a) {
    case Action::up: return 0;
    case Action::right: return 1;
    case Action::down: return 2;
    case Action::left: return 3;
    default: return -1;
  }
}

Action move_for(int dir) {
  static constexpr std::array<Action, 4> m{Action::up, Action::right, Action::down, Action::left};
  return m[static_cast<std::size_t>(dir)];
}

// Edges of the mug_swap arm graph.
int mug_move(int place, Action a) {
  switch (place) {
    case 0:
      if (a == Action::up) return 1;
      if (a == Action::left) return 2;
      if (a == Action::right) return 3;
      if (a == Action::down) return 4;
      break;
    case 1: if (a == Action::down) return 0; break;
    case 2: if (a == Action::right) return 0; break;
    case 3: if (a == Action::left) return 0; break;
    case 4:
      if (a == Action::up) return 0;
      if (a == Action::right) return 5;
      break;
    case 5:
      if (a == Action::up) return 0;
      if (a == Action::left) return 4;
      break;
  }
  return place;
}

// First move on a shortest path between mug_swap places.
Action mug_path(int from, int to) {
  if (from == to) return Action::wait;
  if (from == 4 && to == 5) return Action::right;
  if (from == 5 && to == 4) return Action::left;
  if (from != 0) {
    switch (from) {
      case 1: return Action::down;
      case 2: return Action::right;
      case 3: return Action::left;
      default: return Action::up;
    }
  }
  switch (to) {
    case 1: return Action::up;
    case 2: return Action::left;
    case 3: return Action::right;
    default: return Action::down;
  }
}

class Canvas {
 public:
  Canvas() : px_(kImageChannels * kImageSize * kImageSize, 0.0) {}
  void set(std::size_t ch, int r, int c, double v) {
    px_[(ch * kImageSize + static_cast<std::size_t>(r)) * kImageSize + static_cast<std::size_t>(c)] = v;
  }
  void block(std::size_t ch, Cell cell, double v) {
    for (int dr = 0; dr < 2; ++dr)
      for (int dc = 0; dc < 2; ++dc) set(ch, cell.row + dr, cell.col + dc, v);
  }
  void arm(Cell cell, bool holding) {
    block(1, cell, 1.0);
    if (holding) set(1, cell.row + 1, cell.col + 1, kHeld);
  }
  Tensor tensor() && { return Tensor({kImageChannels, kImageSize, kImageSize}, std::move(px_)); }

 private:
  std::vector<double> px_;
};

double pixel(const Observation& o, std::size_t ch, int r, int c) {
  return o.image[(ch * kImageSize + static_cast<std::size_t>(r)) * kImageSize + static_cast<std::size_t>(c)];
}

bool lit(const Observation& o, std::size_t ch, Cell cell, double v) {
  return pixel(o, ch, cell.row, cell.col) == v;
}

Cell arm_cell(const EnvState& s) {
  return std::visit(
      overloaded{
          [](const FindObjectState& t) { return t.docked < 0 ? kHome : kDrawerDocks[t.docked]; },
          [](const ScoopCountState&) { return kScoopArm; },
          [](const GroceryState& t) { return kGroceryPlaces[static_cast<std::size_t>(t.place)]; },
          [](const CookState&) { return kCookArm; },
          [](const HingeState& t) { return t.docked < 0 ? kHingeHome : kHingeDocks[t.docked]; },
          [](const MugSwapState& t) { return kMugDocks[static_cast<std::size_t>(t.place)]; }},
      s.task);
}

bool holding(const EnvState& s) {
  if (auto g = std::get_if<GroceryState>(&s.task)) return g->holding;
  if (auto m = std::get_if<MugSwapState>(&s.task)) return m->held >= 0;
  return false;
}

bool uses_go_light(EnvKind k) { return k == EnvKind::find_object || k == EnvKind::scoop_count; }

ActionMask legal_mask(const EnvState& s) {
  const auto& cfg = s.config;
  if (uses_go_light(cfg.kind) && s.step < cfg.go_step()) return bit(Action::wait);
  switch (cfg.kind) {
    case EnvKind::find_object: return kMoves | bit(Action::open) | bit(Action::grasp) | bit(Action::wait);
    case EnvKind::scoop_count:
      return bit(Action::open) | bit(Action::close) | bit(Action::scoop) | bit(Action::wait);
    case EnvKind::grocery_unpack:
      return kMoves | bit(Action::grasp) | bit(Action::release) | bit(Action::done) | bit(Action::wait);
    case EnvKind::cook_timer: {
      ActionMask m = bit(Action::done) | bit(Action::wait);
      if (std::get<CookState>(s.task).flip_step < 0) m |= bit(Action::flip);
      return m;
    }
    case EnvKind::hinge_guess:
      return bit(Action::left) | bit(Action::right) | bit(Action::open) | bit(Action::release) |
             bit(Action::wait);
    case EnvKind::mug_swap: return kMoves | bit(Action::grasp) | bit(Action::release) | bit(Action::wait);
  }
  return bit(Action::wait);
}

Tensor render(const EnvState& s) {
  Canvas cv;
  const bool reveal = s.step < kRevealFrames;
  if (uses_go_light(s.config.kind) && s.step >= s.config.go_step()) cv.set(0, kGoLight.row, kGoLight.col, 1.0);
  std::visit(
      overloaded{
          [&](const FindObjectState& t) {
            for (int d = 0; d < s.config.drawers; ++d) {
              cv.block(0, kDrawers[d], t.opened[d] ? kOpen : kFurniture);
            }
            if (reveal || t.opened[t.target]) cv.block(2, kDrawers[t.target], 1.0);
          },
          [&](const ScoopCountState& t) {
            cv.block(0, kGrinder, kFurniture);
            for (int c = 6; c <= 9; ++c) cv.set(0, kLidRow, c, t.lid_open ? kPad : kOpen);
            if (reveal && t.person_scoops > 0) cv.block(2, kPersonScoop, 1.0);
            if (t.scoop_flash) cv.block(2, kRobotScoop, 1.0);
          },
          [&](const GroceryState& t) {
            cv.block(0, kBag, kFurniture);
            cv.block(0, kTable, kFurniture);
            if (t.on_table > 0) cv.block(2, kTable, 1.0);
            if (t.wrist_count >= 0) {
              cv.set(3, kWristActive.row, kWristActive.col, 1.0);
              for (int i = 0; i < t.wrist_count; ++i) cv.set(3, kWristRow, i, 1.0);
            }
          },
          [&](const CookState& t) {
            cv.block(0, kStove, kFurniture);
            if (!s.done) cv.block(2, kStove, 1.0);
            if (reveal)
              for (int i = 0; i < t.precook; ++i) cv.set(3, 0, i, 1.0);
            if (t.flip_flash) cv.block(2, kFlipFlash, 1.0);
          },
          [&](const HingeState& t) {
            for (int c = 6; c <= 9; ++c) {
              cv.set(0, 2, c, t.opened ? kOpen : kFurniture);
              cv.set(0, 3, c, t.opened ? kOpen : kFurniture);
            }
            for (const auto& h : kHandles) cv.block(0, h, kPad);
            if (t.docked < 0 && !t.opened) cv.block(2, kCues[t.cue], 1.0);
            if (t.rattle) cv.block(2, kRattle, 1.0);
          },
          [&](const MugSwapState& t) {
            cv.block(0, kMachine, kFurniture);
            for (int k = 0; k < MugSwapState::kSlots; ++k) {
              cv.block(0, kMugSlots[k], kPad);
              if (t.slot[k] >= 0) cv.block(2, kMugSlots[k], 1.0);
            }
            if (t.under_machine >= 0) cv.block(2, kMachine, 1.0);
            if (t.landed_slot >= 0) cv.block(3, kMugSlots[t.landed_slot], 1.0);
          }},
      s.task);
  cv.arm(arm_cell(s), holding(s));
  return std::move(cv).tensor();
}

void finish(EnvState& s, bool success) {
  s.done = true;
  s.success = success;
}

void apply_find_object(EnvState& s, FindObjectState& t, Action a) {
  const int dir = direction_of(a);
  if (dir >= 0) {
    if (t.docked < 0 && dir < s.config.drawers) {
      t.docked = dir;
    } else if (t.docked >= 0 && dir == (t.docked + 2) % 4) {
      t.docked = -1;
    }
    return;
  }
  if (a == Action::open && t.docked >= 0 && !t.opened[t.docked]) {
    t.opened[t.docked] = true;
    if (t.docked != t.target) finish(s, false);
  } else if (a == Action::grasp && t.docked == t.target && t.opened[t.target]) {
    s.score = 1.0;
    finish(s, true);
  }
}

void apply_scoop(EnvState& s, ScoopCountState& t, Action a) {
  if (a == Action::open) {
    t.lid_open = true;
  } else if (a == Action::scoop && t.lid_open) {
    ++t.scoops_added;
    t.scoop_flash = true;
  } else if (a == Action::close && t.lid_open) {
    t.lid_open = false;
    const bool ok = t.person_scoops + t.scoops_added == 2;
    s.score = ok ? 1.0 : 0.0;
    finish(s, ok);
  }
}

void apply_grocery(EnvState& s, GroceryState& t, Action a) {
  if (a == Action::left && t.place != 1) t.place = t.place == 2 ? 0 : 1;
  else if (a == Action::right && t.place != 2) t.place = t.place == 1 ? 0 : 2;
  else if (a == Action::grasp && t.place == 1 && !t.holding) {
    if (t.in_bag > 0) {
      --t.in_bag;
      t.holding = true;
    }
    t.wrist_count = t.in_bag;
  } else if (a == Action::release && t.place == 2 && t.holding) {
    t.holding = false;
    ++t.on_table;
    s.score += 1.0;
  } else if (a == Action::done) {
    const bool ok = t.in_bag == 0 && !t.holding;
    if (ok) s.score += 1.0;
    finish(s, ok);
  }
}

void apply_cook(EnvState& s, CookState& t, Action a) {
  const auto in_window = [&](int d) { return d >= s.config.cook_min && d <= s.config.cook_max; };
  if (a == Action::flip && t.flip_step < 0) {
    t.flip_step = s.step;
    t.flip_flash = true;
  } else if (a == Action::done) {
    const int side1 = t.precook + (t.flip_step < 0 ? s.step : t.flip_step);
    const int side2 = t.flip_step < 0 ? 0 : s.step - t.flip_step;
    s.score = (in_window(side1) ? 1.0 : 0.0) + (t.flip_step >= 0 && in_window(side2) ? 1.0 : 0.0);
    finish(s, s.score == 2.0);
  }
}

void return_home(EnvState& s, HingeState& t) {
  t.docked = -1;
  t.cue = static_cast<int>(s.rng() % 2);
}

void apply_hinge(EnvState& s, HingeState& t, Action a) {
  if (t.docked < 0) {
    if (a == Action::left) t.docked = 0;
    if (a == Action::right) t.docked = 1;
    return;
  }
  if (a == Action::release || (a == Action::right && t.docked == 0) || (a == Action::left && t.docked == 1)) {
    return_home(s, t);
  } else if (a == Action::open) {
    ++t.attempts;
    if (t.docked == t.hinge) {
      t.opened = true;
      t.first_success_attempt = t.attempts;
      const bool ok = t.attempts <= s.config.attempt_threshold;
      s.score = ok ? 1.0 : 0.0;
      finish(s, ok);
    } else {
      t.rattle = true;
    }
  }
}

void apply_mug(EnvState& s, MugSwapState& t, Action a) {
  if (direction_of(a) >= 0) {
    t.place = mug_move(t.place, a);
    return;
  }
  const int slot = t.place - 2;
  if (a == Action::grasp && t.held < 0) {
    if (slot >= 0 && t.slot[slot] >= 0) {
      t.held = t.slot[slot];
      t.slot[slot] = -1;
    } else if (t.place == 1 && t.under_machine >= 0) {
      t.held = t.under_machine;
      t.under_machine = -1;
    }
  } else if (a == Action::release && t.held >= 0) {
    if (t.place == 1 && t.under_machine < 0) {
      t.under_machine = t.held;
      t.held = -1;
      if (t.used[t.under_machine]) {
        finish(s, false);
        return;
      }
      t.used[t.under_machine] = true;
      s.score += 1.0;
      if (s.score == 3.0) finish(s, true);
    } else if (slot >= 0) {
      std::vector<int> free;
      for (int k = 0; k < MugSwapState::kSlots; ++k)
        if (t.slot[k] < 0) free.push_back(k);
      const int k = free[s.rng() % free.size()];
      t.slot[k] = t.held;
      t.held = -1;
      t.landed_slot = k;
    }
  }
}

void apply(EnvState& s, Action a) {
  std::visit(overloaded{[&](FindObjectState& t) { apply_find_object(s, t, a); },
                        [&](ScoopCountState& t) { apply_scoop(s, t, a); },
                        [&](GroceryState& t) { apply_grocery(s, t, a); },
                        [&](CookState& t) { apply_cook(s, t, a); },
                        [&](HingeState& t) { apply_hinge(s, t, a); },
                        [&](MugSwapState& t) { apply_mug(s, t, a); }},
             s.task);
}

void clear_transients(EnvState& s) {
  std::visit(overloaded{[](ScoopCountState& t) { t.scoop_flash = false; },
                        [](GroceryState& t) { t.wrist_count = -1; },
                        [](CookState& t) { t.flip_flash = false; },
                        [](HingeState& t) { t.rattle = false; },
                        [](MugSwapState& t) { t.landed_slot = -1; },
                        [](auto&) {}},
             s.task);
}

int mug_permutation_apply(int perm, int k) {
  static constexpr std::array<std::array<int, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  return perms[static_cast<std::size_t>(perm)][static_cast<std::size_t>(k)];
}

}  // namespace

std::string to_string(EnvKind k) { return kKindNames[static_cast<std::size_t>(k)]; }

EnvKind env_kind_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (s == kKindNames[i]) return static_cast<EnvKind>(i);
  throw std::invalid_argument("unknown environment kind '" + s + "'");
}

std::vector<EnvKind> all_env_kinds() {
  return {EnvKind::find_object, EnvKind::scoop_count, EnvKind::grocery_unpack,
          EnvKind::cook_timer,  EnvKind::hinge_guess, EnvKind::mug_swap};
}

std::string to_string(Action a) { return kActionNames[static_cast<std::size_t>(a)]; }

Action action_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kActionNames.size(); ++i)
    if (s == kActionNames[i]) return static_cast<Action>(i);
  throw std::invalid_argument("unknown action '" + s + "'");
}

void EnvConfig::validate() const {
  if (drawers < 2 || drawers > 4) throw std::invalid_argument("drawers must be in 2..4");
  if (reveal_delay < 0) throw std::invalid_argument("reveal_delay must be >= 0");
  if (attempt_threshold < 1) throw std::invalid_argument("attempt_threshold must be >= 1");
  if (max_items < 1 || max_items > static_cast<int>(kImageSize)) throw std::invalid_argument("max_items must be in 1..16");
  if (cook_min < 1 || cook_max < cook_min) throw std::invalid_argument("cook window is empty");
  if (proprio_period < 1) throw std::invalid_argument("proprio_period must be positive");
  if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
}

int EnvConfig::step_limit() const {
  if (max_steps > 0) return max_steps;
  switch (kind) {
    case EnvKind::find_object: return go_step() + 12;
    case EnvKind::scoop_count: return go_step() + 10;
    case EnvKind::grocery_unpack: return 8 * max_items + 12;
    case EnvKind::cook_timer: return 2 * cook_max + 10;
    case EnvKind::hinge_guess: return 3 * (attempt_threshold + 3);
    case EnvKind::mug_swap: return 60;
  }
  return 50;
}

void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},
                     {"drawers", c.drawers},
                     {"reveal_delay", c.reveal_delay},
                     {"attempt_threshold", c.attempt_threshold},
                     {"max_items", c.max_items},
                     {"cook_min", c.cook_min},
                     {"cook_max", c.cook_max},
                     {"proprio_period", c.proprio_period},
                     {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, EnvConfig& c) {
  EnvConfig d;
  c.kind = env_kind_from_string(j.at("kind").get<std::string>());
  c.drawers = j.value("drawers", d.drawers);
  c.reveal_delay = j.value("reveal_delay", d.reveal_delay);
  c.attempt_threshold = j.value("attempt_threshold", d.attempt_threshold);
  c.max_items = j.value("max_items", d.max_items);
  c.cook_min = j.value("cook_min", d.cook_min);
  c.cook_max = j.value("cook_max", d.cook_max);
  c.proprio_period = j.value("proprio_period", d.proprio_period);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.validate();
}

int hidden_cardinality(const EnvConfig& cfg) {
  switch (cfg.kind) {
    case EnvKind::find_object: return cfg.drawers;
    case EnvKind::scoop_count: return 2;
    case EnvKind::grocery_unpack: return cfg.max_items;
    case EnvKind::cook_timer: return 5;
    case EnvKind::hinge_guess: return 2;
    case EnvKind::mug_swap: return 6;
  }
  return 1;
}

int EnvState::hidden_value() const {
  return std::visit(overloaded{[](const FindObjectState& t) { return t.target; },
                               [](const ScoopCountState& t) { return t.person_scoops; },
                               [](const GroceryState& t) { return t.items - 1; },
                               [](const CookState& t) { return t.precook; },
                               [](const HingeState& t) { return t.hinge; },
                               [](const MugSwapState& t) { return t.permutation; }},
                    task);
}

Observation observe(const EnvState& s) {
  Observation o;
  o.image = render(s);
  const Cell arm = arm_cell(s);
  const double period = s.config.proprio_period;
  o.proprio = {arm.row / 15.0, arm.col / 15.0, holding(s) ? 1.0 : 0.0,
               static_cast<double>(s.step % s.config.proprio_period) / period};
  o.legal = s.done ? 0 : legal_mask(s);
  o.step = s.step;
  return o;
}

std::pair<EnvState, Observation> reset(const EnvConfig& cfg, std::uint64_t seed,
                                       std::optional<int> forced_hidden) {
  cfg.validate();
  EnvState s;
  s.config = cfg;
  s.seed = seed;
  s.rng.seed(seed);
  const int card = hidden_cardinality(cfg);
  const int drawn = static_cast<int>(s.rng() % static_cast<std::uint64_t>(card));
  if (forced_hidden && (*forced_hidden < 0 || *forced_hidden >= card)) {
    throw std::out_of_range("forced hidden value out of range");
  }
  const int h = forced_hidden.value_or(drawn);
  switch (cfg.kind) {
    case EnvKind::find_object: {
      FindObjectState t;
      t.target = h;
      t.opened.assign(static_cast<std::size_t>(cfg.drawers), false);
      s.task = t;
      break;
    }
    case EnvKind::scoop_count: {
      ScoopCountState t;
      t.person_scoops = h;
      s.task = t;
      break;
    }
    case EnvKind::grocery_unpack: {
      GroceryState t;
      t.items = t.in_bag = h + 1;
      s.task = t;
      break;
    }
    case EnvKind::cook_timer: {
      CookState t;
      t.precook = h;
      s.task = t;
      break;
    }
    case EnvKind::hinge_guess: {
      HingeState t;
      t.hinge = h;
      t.cue = static_cast<int>(s.rng() % 2);
      s.task = t;
      break;
    }
    case EnvKind::mug_swap: {
      MugSwapState t;
      t.permutation = h;
      t.slot.fill(-1);
      const int empty = static_cast<int>(s.rng() % MugSwapState::kSlots);
      int next = 0;
      for (int k = 0; k < MugSwapState::kSlots; ++k)
        if (k != empty) t.slot[k] = mug_permutation_apply(h, next++);
      s.task = t;
      break;
    }
  }
  return {s, observe(s)};
}

StepResult step(EnvState& s, const ActionChunk& chunk) {
  if (s.done) throw std::logic_error("step called on a finished episode");
  if (chunk.empty() || chunk.size() > kMaxChunk) {
    throw std::invalid_argument("action chunk must hold 1.." + std::to_string(kMaxChunk) + " actions");
  }
  StepResult r;
  const double before = s.score;
  for (Action a : chunk) {
    const bool legal = (legal_mask(s) >> static_cast<int>(a)) & 1u;
    clear_transients(s);
    if (legal) {
      apply(s, a);
    } else {
      ++s.illegal_actions;
      ++r.info.illegal_actions;
    }
    ++s.step;
    ++r.info.executed;
    if (!s.done && s.step >= s.config.step_limit()) finish(s, false);
    if (s.done) break;
  }
  r.observation = observe(s);
  r.reward = s.score - before;
  r.done = s.done;
  r.info.score = s.score;
  r.info.max_score = max_score(s);
  r.info.success = s.success;
  if (auto h = std::get_if<HingeState>(&s.task)) {
    r.info.attempts = h->attempts;
    r.info.first_success_attempt = h->first_success_attempt;
  }
  return r;
}

double max_score(const EnvState& s) {
  switch (s.config.kind) {
    case EnvKind::grocery_unpack: return std::get<GroceryState>(s.task).items + 1.0;
    case EnvKind::cook_timer: return 2.0;
    case EnvKind::mug_swap: return 3.0;
    default: return 1.0;
  }
}

double chance_rate(const EnvConfig& cfg) {
  switch (cfg.kind) {
    case EnvKind::find_object: return 1.0 / cfg.drawers;
    case EnvKind::scoop_count: return 0.5;
    case EnvKind::grocery_unpack: return 1.0 / cfg.max_items;
    case EnvKind::cook_timer: {
      const double p = static_cast<double>(cfg.cook_max - cfg.cook_min + 1) / (2.0 * cfg.cook_max);
      return p * p;
    }
    case EnvKind::hinge_guess: return 1.0 - std::pow(0.5, cfg.attempt_threshold);
    case EnvKind::mug_swap: return 2.0 / 9.0;
  }
  return 0.0;
}

std::string render_debug(const EnvState& s) {
  const auto o = observe(s);
  std::string out;
  for (int r = 0; r < static_cast<int>(kImageSize); ++r) {
    for (int c = 0; c < static_cast<int>(kImageSize); ++c) {
      char ch = '.';
      const double scene = pixel(o, 0, r, c);
      if (scene == kPad) ch = '_';
      if (scene == kFurniture) ch = '#';
      if (scene == kOpen) ch = 'O';
      if (pixel(o, 2, r, c) > 0) ch = '*';
      if (pixel(o, 3, r, c) > 0) ch = 'w';
      if (pixel(o, 1, r, c) == 1.0) ch = 'A';
      if (pixel(o, 1, r, c) == kHeld) ch = 'a';
      if (uses_go_light(s.config.kind) && r == kGoLight.row && c == kGoLight.col)
        ch = scene > 0 ? '!' : '.';
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

Action expert_action(const EnvState& s) {
  if (s.done) return Action::wait;
  if (uses_go_light(s.config.kind) && s.step < s.config.go_step()) return Action::wait;
  return std::visit(
      overloaded{
          [&](const FindObjectState& t) {
            if (t.docked < 0) return move_for(t.target);
            if (t.docked != t.target) return move_for((t.docked + 2) % 4);
            return t.opened[t.target] ? Action::grasp : Action::open;
          },
          [&](const ScoopCountState& t) {
            if (!t.lid_open) return Action::open;
            return t.person_scoops + t.scoops_added < 2 ? Action::scoop : Action::close;
          },
          [&](const GroceryState& t) {
            if (t.holding) return t.place == 2 ? Action::release : Action::right;
            if (t.in_bag > 0) return t.place == 1 ? Action::grasp : Action::left;
            return Action::done;
          },
          [&](const CookState& t) {
            // Ten steps per side, counting the unseen head start.
            const int side_len = std::clamp(10, s.config.cook_min, s.config.cook_max);
            if (t.flip_step < 0) return t.precook + s.step >= side_len ? Action::flip : Action::wait;
            return s.step - t.flip_step >= side_len ? Action::done : Action::wait;
          },
          [&](const HingeState& t) {
            if (t.docked < 0) return t.hinge == 0 ? Action::left : Action::right;
            return t.docked == t.hinge ? Action::open : Action::release;
          },
          [&](const MugSwapState& t) {
            if (t.held >= 0) {
              if (!t.used[t.held]) return t.place == 1 ? Action::release : mug_path(t.place, 1);
              return t.place >= 2 ? Action::release : mug_path(t.place, 2);
            }
            if (t.under_machine >= 0) return t.place == 1 ? Action::grasp : mug_path(t.place, 1);
            for (int k = 0; k < MugSwapState::kSlots; ++k) {
              if (t.slot[k] >= 0 && !t.used[t.slot[k]])
                return t.place == k + 2 ? Action::grasp : mug_path(t.place, k + 2);
            }
            return Action::wait;
          }},
      s.task);
}

Action RandomResolver::act(const EnvState& s) {
  const auto& cfg = s.config;
  if (cfg.kind == EnvKind::hinge_guess) {
    const auto& t = std::get<HingeState>(s.task);
    if (t.attempts != last_attempts_ || !guess_) {
      guess_ = static_cast<int>(rng_() % 2);
      last_attempts_ = t.attempts;
    }
    EnvState copy = s;
    std::get<HingeState>(copy.task).hinge = *guess_;
    const auto a = expert_action(copy);
    return a;
  }
  if (cfg.kind == EnvKind::cook_timer) {
    if (guesses_.empty()) {
      std::uniform_int_distribution<int> d(1, 2 * cfg.cook_max);
      guesses_ = {d(rng_), d(rng_)};
    }
    const auto& t = std::get<CookState>(s.task);
    if (t.flip_step < 0) return t.precook + s.step >= guesses_[0] ? Action::flip : Action::wait;
    return s.step - t.flip_step >= guesses_[1] ? Action::done : Action::wait;
  }
  if (cfg.kind == EnvKind::mug_swap) {
    // Each round picks any visible mug; identities are unknown to the guesser.
    const auto& t = std::get<MugSwapState>(s.task);
    if (t.under_machine >= 0) returning_ = true;
    if (t.held >= 0) {
      if (!returning_) return t.place == 1 ? Action::release : mug_path(t.place, 1);
      return t.place >= 2 ? Action::release : mug_path(t.place, 2);
    }
    if (t.under_machine >= 0) return t.place == 1 ? Action::grasp : mug_path(t.place, 1);
    if (returning_ || pick_ < 0 || t.slot[pick_] < 0) {
      returning_ = false;
      std::vector<int> occupied;
      for (int k = 0; k < MugSwapState::kSlots; ++k)
        if (t.slot[k] >= 0) occupied.push_back(k);
      pick_ = occupied[rng_() % occupied.size()];
    }
    return t.place == pick_ + 2 ? Action::grasp : mug_path(t.place, pick_ + 2);
  }
  if (!guess_) guess_ = static_cast<int>(rng_() % static_cast<std::uint64_t>(hidden_cardinality(cfg)));
  EnvState copy = s;
  std::visit(overloaded{[&](FindObjectState& t) { t.target = *guess_; },
                        [&](ScoopCountState& t) { t.person_scoops = *guess_; },
                        [&](GroceryState& t) {
                          // Believes the bag held guess+1 items.
                          t.in_bag = std::max(0, *guess_ + 1 - (t.items - t.in_bag));
                        },
                        [](auto&) {}},
             copy.task);
  return expert_action(copy);
}

VisibleState decode(EnvKind kind, const Observation& o) {
  VisibleState v;
  for (int r = 0; r + 1 < static_cast<int>(kImageSize) && v.arm == Cell{}; ++r)
    for (int c = 0; c + 1 < static_cast<int>(kImageSize); ++c)
      if (pixel(o, 1, r, c) == 1.0) {
        v.arm = {r, c};
        break;
      }
  v.holding = pixel(o, 1, v.arm.row + 1, v.arm.col + 1) == kHeld;
  v.go = pixel(o, 0, kGoLight.row, kGoLight.col) == 1.0;
  switch (kind) {
    case EnvKind::find_object:
      for (int d = 0; d < 4; ++d) {
        if (lit(o, 2, kDrawers[d], 1.0)) v.marker = d;
        v.opened.push_back(lit(o, 0, kDrawers[d], kOpen));
        if (v.arm == kDrawerDocks[d]) v.place = d + 1;
      }
      break;
    case EnvKind::scoop_count:
      v.opened.push_back(pixel(o, 0, kLidRow, 6) == kPad);
      v.person_scoop = lit(o, 2, kPersonScoop, 1.0);
      v.scoop_flash = lit(o, 2, kRobotScoop, 1.0);
      break;
    case EnvKind::grocery_unpack:
      for (int p = 0; p < 3; ++p)
        if (v.arm == kGroceryPlaces[p]) v.place = p;
      v.on_table = lit(o, 2, kTable, 1.0);
      if (pixel(o, 3, kWristActive.row, kWristActive.col) == 1.0) {
        v.wrist_count = 0;
        while (v.wrist_count < static_cast<int>(kImageSize) && pixel(o, 3, kWristRow, v.wrist_count) == 1.0)
          ++v.wrist_count;
      }
      break;
    case EnvKind::cook_timer:
      v.flip_flash = lit(o, 2, kFlipFlash, 1.0);
      v.precook_shown = 0;
      while (v.precook_shown < static_cast<int>(kImageSize) && pixel(o, 3, 0, v.precook_shown) == 1.0)
        ++v.precook_shown;
      break;
    case EnvKind::hinge_guess:
      v.opened.push_back(pixel(o, 0, 2, 6) == kOpen);
      v.rattle = lit(o, 2, kRattle, 1.0);
      for (int c = 0; c < 2; ++c) {
        if (lit(o, 2, kCues[c], 1.0)) v.cue = c;
        if (v.arm == kHingeDocks[c]) v.place = c + 1;
      }
      break;
    case EnvKind::mug_swap:
      for (int p = 0; p < 6; ++p)
        if (v.arm == kMugDocks[p]) v.place = p;
      for (int k = 0; k < MugSwapState::kSlots; ++k) {
        v.mug_at[k] = lit(o, 2, kMugSlots[k], 1.0);
        if (lit(o, 3, kMugSlots[k], 1.0)) v.marker = k;
      }
      v.mug_under_machine = lit(o, 2, kMachine, 1.0);
      break;
  }
  return v;
}

std::string goal_text(EnvKind kind) {
  switch (kind) {
    case EnvKind::find_object: return "find the hidden object";
    case EnvKind::scoop_count: return "make coffee with two scoops";
    case EnvKind::grocery_unpack: return "unpack the grocery bag";
    case EnvKind::cook_timer: return "cook both sides";
    case EnvKind::hinge_guess: return "open the door";
    case EnvKind::mug_swap: return "brew every mug once";
  }
  return "";
}

}  // namespace mem
