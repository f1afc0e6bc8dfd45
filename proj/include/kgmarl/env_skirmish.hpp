// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Two-team combat microworld. Allies are learners; enemies run a fixed
// nearest-target heuristic. Sparse reward: +200 win, +10 per enemy death,
// -5 per ally death.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "kgmarl/env.hpp"
#include "kgmarl/rng.hpp"

namespace kgmarl {

struct SkirmishConfig {
  int width = 12;
  int height = 8;
  int n_allies = 3;
  int n_enemies = 3;
  int horizon = 60;
  int spawn_band = 2;  // columns at each edge used for spawning
  int sight = 5;
  double ally_hp = 45.0;
  double ally_damage = 6.0;
  int ally_range = 3;
  double enemy_hp = 45.0;
  double enemy_damage = 6.0;
  int enemy_range = 3;
  bool dense_reward = false;  // adds damage dealt minus damage taken each step

  static constexpr double kWinReward = 200.0;
  static constexpr double kKillReward = 10.0;
  static constexpr double kDeathPenalty = 5.0;
};

namespace skirmish {
enum Action : int { noop = 0, north = 1, south = 2, east = 3, west = 4, first_attack = 5 };
}

struct SkirmishUnit {
  int x = 0;
  int y = 0;
  double health = 0.0;
  double max_health = 0.0;
  bool alive = true;
};

inline int chebyshev(const SkirmishUnit& a, const SkirmishUnit& b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

struct SkirmishState {
  int width = 0;
  int height = 0;
  std::vector<SkirmishUnit> allies;
  std::vector<SkirmishUnit> enemies;
  int step = 0;
  int horizon = 0;
  bool won = false;

  int living_allies() const {
    return static_cast<int>(std::count_if(allies.begin(), allies.end(), [](const auto& u) { return u.alive; }));
  }
  int living_enemies() const {
    return static_cast<int>(std::count_if(enemies.begin(), enemies.end(), [](const auto& u) { return u.alive; }));
  }
};

struct SkirmishStepResult {
  double reward = 0.0;
  bool done = false;
  bool won = false;
  int enemy_deaths = 0;
  int ally_deaths = 0;
  int ignored_attacks = 0;  // attacks on dead or out-of-range targets, resolved as noop
  std::vector<Vector> observations;
};

/// Sparse schedule: +200 on the winning step, +10 per enemy death, -5 per ally death.
inline double skirmish_sparse_reward(bool won, int enemy_deaths, int ally_deaths) {
  return SkirmishConfig::kKillReward * enemy_deaths - SkirmishConfig::kDeathPenalty * ally_deaths +
         (won ? SkirmishConfig::kWinReward : 0.0);
}

inline int skirmish_num_actions(const SkirmishConfig& cfg) { return skirmish::first_attack + cfg.n_enemies; }

inline Mask skirmish_available_actions(const SkirmishState& s, const SkirmishConfig& cfg, int ally) {
  Mask m(static_cast<std::size_t>(skirmish_num_actions(cfg)), false);
  m[skirmish::noop] = true;
  const SkirmishUnit& u = s.allies.at(static_cast<std::size_t>(ally));
  if (!u.alive) return m;
  m[skirmish::north] = u.y > 0;
  m[skirmish::south] = u.y < s.height - 1;
  m[skirmish::east] = u.x < s.width - 1;
  m[skirmish::west] = u.x > 0;
  for (std::size_t j = 0; j < s.enemies.size(); ++j) {
    m[skirmish::first_attack + j] = s.enemies[j].alive && chebyshev(u, s.enemies[j]) <= cfg.ally_range;
  }
  return m;
}

inline int skirmish_obs_dim(const SkirmishConfig& cfg) {
  return 3 + 5 * (cfg.n_allies - 1) + 6 * cfg.n_enemies + cfg.n_allies;
}

/// own health fraction and position; per other ally [visible, dx, dy, health, +1];
/// per enemy [visible, dx, dy, health, -1, attackable]; agent-id one-hot.
inline Vector skirmish_observation(const SkirmishState& s, const SkirmishConfig& cfg, int ally) {
  Vector o = Vector::Zero(skirmish_obs_dim(cfg));
  const SkirmishUnit& me = s.allies.at(static_cast<std::size_t>(ally));
  Eigen::Index k = 0;
  if (me.alive) {
    o[0] = me.health / me.max_health;
    o[1] = static_cast<double>(me.x) / std::max(1, s.width - 1);
    o[2] = static_cast<double>(me.y) / std::max(1, s.height - 1);
  }
  k = 3;
  const double sight = std::max(1, cfg.sight);
  auto write = [&](const SkirmishUnit& u, double team) {
    if (me.alive && u.alive && chebyshev(me, u) <= cfg.sight) {
      o[k] = 1.0;
      o[k + 1] = (u.x - me.x) / sight;
      o[k + 2] = (u.y - me.y) / sight;
      o[k + 3] = u.health / u.max_health;
      o[k + 4] = team;
    }
  };
  for (std::size_t i = 0; i < s.allies.size(); ++i) {
    if (static_cast<int>(i) == ally) continue;
    write(s.allies[i], 1.0);
    k += 5;
  }
  for (const auto& e : s.enemies) {
    write(e, -1.0);
    if (me.alive && e.alive && chebyshev(me, e) <= cfg.ally_range) o[k + 5] = 1.0;
    k += 6;
  }
  o[k + ally] = 1.0;
  return o;
}

inline std::vector<Vector> skirmish_observations(const SkirmishState& s, const SkirmishConfig& cfg) {
  std::vector<Vector> out;
  for (int i = 0; i < static_cast<int>(s.allies.size()); ++i) out.push_back(skirmish_observation(s, cfg, i));
  return out;
}

inline int skirmish_state_dim(const SkirmishConfig& cfg) { return 3 * (cfg.n_allies + cfg.n_enemies); }

inline Vector skirmish_global_state(const SkirmishState& s) {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(3 * (s.allies.size() + s.enemies.size())));
  Eigen::Index k = 0;
  for (const auto* team : {&s.allies, &s.enemies}) {
    for (const auto& u : *team) {
      if (u.alive) {
        v[k] = u.health / u.max_health;
        v[k + 1] = static_cast<double>(u.x) / std::max(1, s.width - 1);
        v[k + 2] = static_cast<double>(u.y) / std::max(1, s.height - 1);
      }
      k += 3;
    }
  }
  return v;
}

struct SkirmishResetResult {
  SkirmishState state;
  std::vector<Vector> observations;
};

/// Allies spawn in the left band, enemies in the right band, distinct cells
/// within a team, all at full health.
inline SkirmishResetResult skirmish_reset(const SkirmishConfig& cfg, std::uint64_t seed) {
  if (cfg.n_allies < 1 || cfg.n_enemies < 1) throw ConfigError("skirmish: team sizes must be >= 1");
  if (cfg.spawn_band < 1 || cfg.width < 2 * cfg.spawn_band + 1 || cfg.height < 1) {
    throw ConfigError("skirmish: arena " + std::to_string(cfg.width) + "x" + std::to_string(cfg.height) +
                      " too small for spawn band " + std::to_string(cfg.spawn_band));
  }
  if (cfg.spawn_band * cfg.height < std::max(cfg.n_allies, cfg.n_enemies)) {
    throw ConfigError("skirmish: spawn band cannot hold the team");
  }
  if (cfg.horizon < 1 || cfg.ally_hp <= 0 || cfg.enemy_hp <= 0) throw ConfigError("skirmish: bad horizon or hp");
  Rng rng(seed);
  SkirmishState s;
  s.width = cfg.width;
  s.height = cfg.height;
  s.horizon = cfg.horizon;
  auto spawn = [&](int n, int x0, double hp) {
    std::vector<SkirmishUnit> team;
    std::vector<std::pair<int, int>> cells;
    for (int x = x0; x < x0 + cfg.spawn_band; ++x) {
      for (int y = 0; y < cfg.height; ++y) cells.emplace_back(x, y);
    }
    for (int i = 0; i < n; ++i) {
      const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cells.size()) - 1));
      team.push_back({cells[pick].first, cells[pick].second, hp, hp, true});
      cells.erase(cells.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return team;
  };
  s.allies = spawn(cfg.n_allies, 0, cfg.ally_hp);
  s.enemies = spawn(cfg.n_enemies, cfg.width - cfg.spawn_band, cfg.enemy_hp);
  SkirmishResetResult out{s, {}};
  out.observations = skirmish_observations(out.state, cfg);
  return out;
}

namespace detail {
inline void move_unit(SkirmishUnit& u, int action, int width, int height) {
  switch (action) {
    case skirmish::north:
      u.y = std::max(0, u.y - 1);
      break;
    case skirmish::south:
      u.y = std::min(height - 1, u.y + 1);
      break;
    case skirmish::east:
      u.x = std::min(width - 1, u.x + 1);
      break;
    case skirmish::west:
      u.x = std::max(0, u.x - 1);
      break;
    default:
      break;
  }
}

// Returns true when the hit kills the target.
inline bool hit(SkirmishUnit& target, double damage) {
  target.health = std::max(0.0, target.health - damage);
  if (target.health <= 0.0 && target.alive) {
    target.alive = false;
    return true;
  }
  return false;
}
}  // namespace detail

/// Allies act in index order, then living enemies: each focuses the nearest
/// living ally (Chebyshev, lowest index on ties), attacking when in range and
/// otherwise stepping toward it along the longer axis.
inline SkirmishStepResult skirmish_step(SkirmishState& s, const SkirmishConfig& cfg, std::span<const int> joint_action) {
  if (joint_action.size() != s.allies.size()) {
    throw InvalidInput("skirmish_step: expected " + std::to_string(s.allies.size()) + " actions");
  }
  const int n_actions = skirmish_num_actions(cfg);
  for (int a : joint_action) {
    if (a < 0 || a >= n_actions) throw InvalidInput("skirmish_step: action index " + std::to_string(a));
  }
  SkirmishStepResult out;
  double dealt = 0.0;
  double taken = 0.0;
  for (std::size_t i = 0; i < s.allies.size(); ++i) {
    SkirmishUnit& u = s.allies[i];
    if (!u.alive) continue;
    const int a = joint_action[i];
    if (a >= skirmish::first_attack) {
      SkirmishUnit& target = s.enemies[static_cast<std::size_t>(a - skirmish::first_attack)];
      if (!target.alive || chebyshev(u, target) > cfg.ally_range) {
        out.ignored_attacks += 1;
        continue;
      }
      const double before = target.health;
      if (detail::hit(target, cfg.ally_damage)) out.enemy_deaths += 1;
      dealt += before - target.health;
    } else {
      detail::move_unit(u, a, s.width, s.height);
    }
  }
  out.won = s.living_enemies() == 0;
  if (!out.won) {
    for (auto& e : s.enemies) {
      if (!e.alive) continue;
      int best = -1;
      int best_d = 0;
      for (std::size_t i = 0; i < s.allies.size(); ++i) {
        if (!s.allies[i].alive) continue;
        const int d = chebyshev(e, s.allies[i]);
        if (best < 0 || d < best_d) {
          best = static_cast<int>(i);
          best_d = d;
        }
      }
      if (best < 0) break;
      SkirmishUnit& target = s.allies[static_cast<std::size_t>(best)];
      if (best_d <= cfg.enemy_range) {
        const double before = target.health;
        if (detail::hit(target, cfg.enemy_damage)) out.ally_deaths += 1;
        taken += before - target.health;
      } else {
        const int dx = target.x - e.x;
        const int dy = target.y - e.y;
        if (std::abs(dx) >= std::abs(dy)) {
          e.x += dx > 0 ? 1 : -1;
        } else {
          e.y += dy > 0 ? 1 : -1;
        }
      }
    }
  }
  out.reward = skirmish_sparse_reward(out.won, out.enemy_deaths, out.ally_deaths);
  if (cfg.dense_reward) out.reward += dealt - taken;
  s.won = s.won || out.won;
  s.step += 1;
  out.done = out.won || s.living_allies() == 0 || s.step >= s.horizon;
  out.observations = skirmish_observations(s, cfg);
  return out;
}

inline const std::vector<std::string>& skirmish_feature_names() {
  static const std::vector<std::string> names{"alive",         "health",    "health_frac", "attack_available",
                                              "enemy_visible", "enemy_dx",  "enemy_dy",    "enemy_dist"};
  return names;
}

/// enemy_* refer to the nearest living enemy within sight; zeros when none.
inline std::vector<double> skirmish_features(const SkirmishState& s, const SkirmishConfig& cfg, int ally) {
  const SkirmishUnit& me = s.allies.at(static_cast<std::size_t>(ally));
  std::vector<double> v(skirmish_feature_names().size(), 0.0);
  v[0] = me.alive ? 1.0 : 0.0;
  v[1] = me.health;
  v[2] = me.health / me.max_health;
  if (!me.alive) return v;
  int best = -1;
  int best_d = 0;
  for (std::size_t j = 0; j < s.enemies.size(); ++j) {
    const auto& e = s.enemies[j];
    if (!e.alive) continue;
    const int d = chebyshev(me, e);
    if (d <= cfg.ally_range) v[3] = 1.0;
    if (d <= cfg.sight && (best < 0 || d < best_d)) {
      best = static_cast<int>(j);
      best_d = d;
    }
  }
  if (best >= 0) {
    const auto& e = s.enemies[static_cast<std::size_t>(best)];
    v[4] = 1.0;
    v[5] = e.x - me.x;
    v[6] = e.y - me.y;
    v[7] = best_d;
  }
  return v;
}

class SkirmishEnv final : public Env {
 public:
  explicit SkirmishEnv(SkirmishConfig cfg) : cfg_(cfg) {
    std::vector<std::string> names{"noop", "north", "south", "east", "west"};
    std::vector<int> attacks;
    for (int j = 0; j < cfg_.n_enemies; ++j) {
      names.push_back("attack_" + std::to_string(j));
      attacks.push_back(skirmish::first_attack + j);
    }
    vocab_ = ActionVocabulary(names);
    vocab_.add_group("attack", attacks);
    vocab_.add_group("move", {skirmish::north, skirmish::south, skirmish::east, skirmish::west});
    reset(0);
  }

  void reset(std::uint64_t seed) override { state_ = skirmish_reset(cfg_, seed).state; }

  StepOutcome step(std::span<const int> actions) override {
    last_ = skirmish_step(state_, cfg_, actions);
    return {last_.reward, last_.done, last_.won};
  }

  int n_agents() const override { return cfg_.n_allies; }
  int n_actions() const override { return skirmish_num_actions(cfg_); }
  int obs_dim() const override { return skirmish_obs_dim(cfg_); }
  int state_dim() const override { return skirmish_state_dim(cfg_); }
  int horizon() const override { return cfg_.horizon; }
  int steps() const override { return state_.step; }

  Vector observation(int agent) const override { return skirmish_observation(state_, cfg_, agent); }
  Vector global_state() const override { return skirmish_global_state(state_); }
  Mask available_actions(int agent) const override { return skirmish_available_actions(state_, cfg_, agent); }

  const ActionVocabulary& vocabulary() const override { return vocab_; }
  const std::vector<std::string>& feature_names() const override { return skirmish_feature_names(); }
  std::vector<double> features(int agent) const override { return skirmish_features(state_, cfg_, agent); }

  const SkirmishState& state() const { return state_; }
  SkirmishState& state() { return state_; }
  const SkirmishConfig& config() const { return cfg_; }
  const SkirmishStepResult& last_step() const { return last_; }

 private:
  SkirmishConfig cfg_;
  ActionVocabulary vocab_;
  SkirmishState state_;
  SkirmishStepResult last_;
};

}  // namespace kgmarl
