// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Level-Based Foraging: agents with integer levels walk a grid and load
// foods cooperatively. Team reward per collected food is
// sum over loaders of food_level / loader_level.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "kgmarl/env.hpp"
#include "kgmarl/rng.hpp"

namespace kgmarl {

struct LbfConfig {
  int rows = 10;
  int cols = 10;
  int n_agents = 3;
  int n_foods = 3;
  int horizon = 50;
  int max_agent_level = 2;
  int sight = 2;                  // half-width; 2 gives a 5x5 window
  bool strict_threshold = false;  // collect iff level sum > food level instead of >=
  bool normalize_reward = false;  // divide rewards by the total food level on the map
};

namespace lbf {
enum Action : int { noop = 0, north = 1, south = 2, east = 3, west = 4, load = 5 };
inline constexpr int kNumActions = 6;
inline const std::vector<std::string>& action_names() {
  static const std::vector<std::string> names{"noop", "north", "south", "east", "west", "load"};
  return names;
}
}  // namespace lbf

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

inline int manhattan(GridPos a, GridPos b) { return std::abs(a.row - b.row) + std::abs(a.col - b.col); }

struct LbfAgent {
  GridPos pos;
  int level = 1;
};

struct LbfFood {
  GridPos pos;
  int level = 1;
  bool collected = false;
};

struct LbfState {
  int rows = 0;
  int cols = 0;
  std::vector<LbfAgent> agents;
  std::vector<LbfFood> foods;
  int step = 0;
  int horizon = 0;
  double food_level_total = 0.0;

  bool inside(GridPos p) const { return p.row >= 0 && p.row < rows && p.col >= 0 && p.col < cols; }

  int agent_at(GridPos p) const {
    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (agents[i].pos == p) return static_cast<int>(i);
    }
    return -1;
  }
  int food_at(GridPos p) const {
    for (std::size_t i = 0; i < foods.size(); ++i) {
      if (!foods[i].collected && foods[i].pos == p) return static_cast<int>(i);
    }
    return -1;
  }
  int remaining_foods() const {
    return static_cast<int>(std::count_if(foods.begin(), foods.end(), [](const LbfFood& f) { return !f.collected; }));
  }
};

inline GridPos lbf_target(GridPos p, int action) {
  switch (action) {
    case lbf::north:
      return {p.row - 1, p.col};
    case lbf::south:
      return {p.row + 1, p.col};
    case lbf::east:
      return {p.row, p.col + 1};
    case lbf::west:
      return {p.row, p.col - 1};
    default:
      return p;
  }
}

inline constexpr std::array<std::array<int, 2>, 4> kNeighbors{{{-1, 0}, {1, 0}, {0, 1}, {0, -1}}};

inline bool lbf_food_adjacent(const LbfState& s, GridPos p) {
  for (const auto& [dr, dc] : kNeighbors) {
    if (s.food_at({p.row + dr, p.col + dc}) >= 0) return true;
  }
  return false;
}

/// noop always; a move iff the target is in-grid and free of foods and agents;
/// load iff an uncollected food is 4-adjacent.
inline Mask lbf_available_actions(const LbfState& s, int agent) {
  Mask m(lbf::kNumActions, false);
  m[lbf::noop] = true;
  const GridPos p = s.agents.at(static_cast<std::size_t>(agent)).pos;
  for (int a = lbf::north; a <= lbf::west; ++a) {
    const GridPos t = lbf_target(p, a);
    m[static_cast<std::size_t>(a)] = s.inside(t) && s.food_at(t) < 0 && s.agent_at(t) < 0;
  }
  m[lbf::load] = lbf_food_adjacent(s, p);
  return m;
}

inline int lbf_obs_dim(const LbfConfig& cfg) {
  const int w = 2 * cfg.sight + 1;
  return 3 * w * w + 1 + 2 + cfg.n_agents;
}

/// Channel-major egocentric window (agent levels, food levels, self marker),
/// then own level, normalized position, agent-id one-hot.
inline Vector lbf_observation(const LbfState& s, const LbfConfig& cfg, int agent) {
  const int w = 2 * cfg.sight + 1;
  const int cells = w * w;
  Vector o = Vector::Zero(lbf_obs_dim(cfg));
  const LbfAgent& me = s.agents.at(static_cast<std::size_t>(agent));
  for (int dr = -cfg.sight; dr <= cfg.sight; ++dr) {
    for (int dc = -cfg.sight; dc <= cfg.sight; ++dc) {
      const GridPos p{me.pos.row + dr, me.pos.col + dc};
      if (!s.inside(p)) continue;
      const int cell = (dr + cfg.sight) * w + (dc + cfg.sight);
      if (int a = s.agent_at(p); a >= 0) o[cell] = s.agents[static_cast<std::size_t>(a)].level;
      if (int f = s.food_at(p); f >= 0) o[cells + cell] = s.foods[static_cast<std::size_t>(f)].level;
    }
  }
  o[2 * cells + cfg.sight * w + cfg.sight] = 1.0;
  int k = 3 * cells;
  o[k++] = me.level;
  o[k++] = s.rows > 1 ? static_cast<double>(me.pos.row) / (s.rows - 1) : 0.0;
  o[k++] = s.cols > 1 ? static_cast<double>(me.pos.col) / (s.cols - 1) : 0.0;
  o[k + agent] = 1.0;
  return o;
}

inline int lbf_state_dim(const LbfConfig& cfg) { return 3 * cfg.n_agents + 3 * cfg.n_foods; }

inline Vector lbf_global_state(const LbfState& s) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(3 * (s.agents.size() + s.foods.size())));
  Eigen::Index k = 0;
  const double rn = s.rows > 1 ? s.rows - 1 : 1;
  const double cn = s.cols > 1 ? s.cols - 1 : 1;
  for (const auto& a : s.agents) {
    v[k++] = a.pos.row / rn;
    v[k++] = a.pos.col / cn;
    v[k++] = a.level;
  }
  for (const auto& f : s.foods) {
    if (!f.collected) {
      v[k] = f.pos.row / rn;
      v[k + 1] = f.pos.col / cn;
      v[k + 2] = f.level;
    }
    k += 3;
  }
  return v;
}

inline std::vector<Vector> lbf_observations(const LbfState& s, const LbfConfig& cfg) {
  std::vector<Vector> out;
  for (int i = 0; i < static_cast<int>(s.agents.size()); ++i) out.push_back(lbf_observation(s, cfg, i));
  return out;
}

struct LbfResetResult {
  LbfState state;
  std::vector<Vector> observations;
};

/// Seeded placement without overlap; foods are never 4-adjacent to each other.
/// Food levels are drawn from [1, sum of the two highest agent levels].
inline LbfResetResult lbf_reset(const LbfConfig& cfg, std::uint64_t seed) {
  if (cfg.n_agents < 2) throw ConfigError("lbf: need at least 2 agents");
  if (cfg.n_foods < 1) throw ConfigError("lbf: need at least 1 food");
  if (cfg.rows < 5 || cfg.cols < 5) throw ConfigError("lbf: grid must be at least 5x5");
  if (cfg.horizon < 1) throw ConfigError("lbf: horizon must be positive");
  if (cfg.max_agent_level < 1) throw ConfigError("lbf: max_agent_level must be >= 1");
  // Each food blocks itself plus up to 4 neighbours for other foods.
  if (cfg.n_agents + 5 * cfg.n_foods > cfg.rows * cfg.cols) {
    throw ConfigError("lbf: grid " + std::to_string(cfg.rows) + "x" + std::to_string(cfg.cols) + " too small for " +
                      std::to_string(cfg.n_agents) + " agents and " + std::to_string(cfg.n_foods) + " foods");
  }
  Rng rng(seed);
  LbfState s;
  s.rows = cfg.rows;
  s.cols = cfg.cols;
  s.horizon = cfg.horizon;
  for (int i = 0; i < cfg.n_agents; ++i) s.agents.push_back({{0, 0}, rng.uniform_int(1, cfg.max_agent_level)});
  std::vector<int> levels;
  for (const auto& a : s.agents) levels.push_back(a.level);
  std::sort(levels.rbegin(), levels.rend());
  const int top_two = levels[0] + levels[1];

  std::vector<bool> taken(static_cast<std::size_t>(cfg.rows * cfg.cols), false);
  std::vector<bool> near_food(taken.size(), false);
  auto idx = [&](GridPos p) { return static_cast<std::size_t>(p.row * cfg.cols + p.col); };
  auto draw_cell = [&](bool for_food) {
    std::vector<GridPos> free;
    for (int r = 0; r < cfg.rows; ++r) {
      for (int c = 0; c < cfg.cols; ++c) {
        const GridPos p{r, c};
        if (!taken[idx(p)] && !(for_food && near_food[idx(p)])) free.push_back(p);
      }
    }
    if (free.empty()) throw ConfigError("lbf: no free cell left for placement");
    return free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free.size()) - 1))];
  };
  for (int f = 0; f < cfg.n_foods; ++f) {
    LbfFood food;
    food.pos = draw_cell(true);
    food.level = rng.uniform_int(1, top_two);
    taken[idx(food.pos)] = true;
    near_food[idx(food.pos)] = true;
    for (const auto& [dr, dc] : kNeighbors) {
      const GridPos n{food.pos.row + dr, food.pos.col + dc};
      if (s.inside(n)) near_food[idx(n)] = true;
    }
    s.food_level_total += food.level;
    s.foods.push_back(food);
  }
  for (auto& a : s.agents) {
    a.pos = draw_cell(false);
    taken[idx(a.pos)] = true;
  }
  LbfResetResult out{s, {}};
  out.observations = lbf_observations(out.state, cfg);
  return out;
}

struct LbfStepResult {
  double reward = 0.0;
  bool done = false;
  std::vector<Vector> observations;
};

/// Advances `s` in place. Moves resolve simultaneously (blocked or contested
/// moves become noop, lowest index wins); then each uncollected food whose
/// adjacent loaders' level sum meets its level is collected.
inline LbfStepResult lbf_step(LbfState& s, const LbfConfig& cfg, std::span<const int> joint_action) {
  if (joint_action.size() != s.agents.size()) {
    throw InvalidInput("lbf_step: expected " + std::to_string(s.agents.size()) + " actions, got " +
                       std::to_string(joint_action.size()));
  }
  for (int a : joint_action) {
    if (a < 0 || a >= lbf::kNumActions) throw InvalidInput("lbf_step: action index " + std::to_string(a));
  }
  const std::size_t n = s.agents.size();
  std::vector<GridPos> target(n);
  std::vector<bool> moving(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    target[i] = s.agents[i].pos;
    const int a = joint_action[i];
    if (a < lbf::north || a > lbf::west) continue;
    const GridPos t = lbf_target(s.agents[i].pos, a);
    if (!s.inside(t) || s.food_at(t) >= 0 || s.agent_at(t) >= 0) continue;
    bool contested = false;
    for (std::size_t j = 0; j < i; ++j) {
      if (moving[j] && target[j] == t) contested = true;
    }
    if (contested) continue;
    target[i] = t;
    moving[i] = true;
  }
  for (std::size_t i = 0; i < n; ++i) s.agents[i].pos = target[i];

  LbfStepResult out;
  for (auto& food : s.foods) {
    if (food.collected) continue;
    int level_sum = 0;
    std::vector<std::size_t> loaders;
    for (std::size_t i = 0; i < n; ++i) {
      if (joint_action[i] == lbf::load && manhattan(s.agents[i].pos, food.pos) == 1) {
        level_sum += s.agents[i].level;
        loaders.push_back(i);
      }
    }
    const bool enough = cfg.strict_threshold ? level_sum > food.level : level_sum >= food.level;
    if (loaders.empty() || !enough) continue;
    food.collected = true;
    for (std::size_t i : loaders) out.reward += static_cast<double>(food.level) / s.agents[i].level;
  }
  if (cfg.normalize_reward && s.food_level_total > 0.0) out.reward /= s.food_level_total;
  s.step += 1;
  out.done = s.remaining_foods() == 0 || s.step >= s.horizon;
  out.observations = lbf_observations(s, cfg);
  return out;
}

/// Named per-agent features used by rule conditions.
inline const std::vector<std::string>& lbf_feature_names() {
  static const std::vector<std::string> names{"level",     "food_visible", "food_dr",  "food_dc",
                                              "food_dist", "food_level",   "food_adjacent", "nearby_agent_levels"};
  return names;
}

/// food_* describe the nearest visible uncollected food (manhattan, lowest
/// index on ties); all zero when none is in the window.
inline std::vector<double> lbf_features(const LbfState& s, const LbfConfig& cfg, int agent) {
  const LbfAgent& me = s.agents.at(static_cast<std::size_t>(agent));
  int best = -1;
  int best_dist = 0;
  for (std::size_t f = 0; f < s.foods.size(); ++f) {
    const auto& food = s.foods[f];
    if (food.collected) continue;
    if (std::abs(food.pos.row - me.pos.row) > cfg.sight || std::abs(food.pos.col - me.pos.col) > cfg.sight) continue;
    const int d = manhattan(food.pos, me.pos);
    if (best < 0 || d < best_dist) {
      best = static_cast<int>(f);
      best_dist = d;
    }
  }
  int nearby = 0;
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    if (static_cast<int>(i) == agent) continue;
    const auto& o = s.agents[i];
    if (std::abs(o.pos.row - me.pos.row) <= cfg.sight && std::abs(o.pos.col - me.pos.col) <= cfg.sight) nearby += o.level;
  }
  std::vector<double> v{static_cast<double>(me.level), 0, 0, 0, 0, 0, lbf_food_adjacent(s, me.pos) ? 1.0 : 0.0,
                        static_cast<double>(nearby)};
  if (best >= 0) {
    const auto& food = s.foods[static_cast<std::size_t>(best)];
    v[1] = 1.0;
    v[2] = food.pos.row - me.pos.row;
    v[3] = food.pos.col - me.pos.col;
    v[4] = best_dist;
    v[5] = food.level;
  }
  return v;
}

class LbfEnv final : public Env {
 public:
  explicit LbfEnv(LbfConfig cfg) : cfg_(cfg), vocab_(lbf::action_names()) {
    vocab_.add_group("move", {lbf::north, lbf::south, lbf::east, lbf::west});
    reset(0);
  }

  void reset(std::uint64_t seed) override { state_ = lbf_reset(cfg_, seed).state; }

  StepOutcome step(std::span<const int> actions) override {
    const LbfStepResult r = lbf_step(state_, cfg_, actions);
    return {r.reward, r.done, state_.remaining_foods() == 0};
  }

  int n_agents() const override { return cfg_.n_agents; }
  int n_actions() const override { return lbf::kNumActions; }
  int obs_dim() const override { return lbf_obs_dim(cfg_); }
  int state_dim() const override { return lbf_state_dim(cfg_); }
  int horizon() const override { return cfg_.horizon; }
  int steps() const override { return state_.step; }

  Vector observation(int agent) const override { return lbf_observation(state_, cfg_, agent); }
  Vector global_state() const override { return lbf_global_state(state_); }
  Mask available_actions(int agent) const override { return lbf_available_actions(state_, agent); }

  const ActionVocabulary& vocabulary() const override { return vocab_; }
  const std::vector<std::string>& feature_names() const override { return lbf_feature_names(); }
  std::vector<double> features(int agent) const override { return lbf_features(state_, cfg_, agent); }

  const LbfState& state() const { return state_; }
  LbfState& state() { return state_; }
  const LbfConfig& config() const { return cfg_; }

 private:
  LbfConfig cfg_;
  ActionVocabulary vocab_;
  LbfState state_;
};

}  // namespace kgmarl
