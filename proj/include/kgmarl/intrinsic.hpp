// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Knowledge-guided per-agent intrinsic reward and the shaped team reward.

#pragma once

#include <optional>
#include <span>
#include <string>

#include "kgmarl/errors.hpp"
#include "kgmarl/tensor.hpp"

namespace kgmarl {

/// -||preference - agent_dist||_2, or 0 when no rule applies. Lies in [-sqrt(2), 0]
/// for probability vectors.
inline double intrinsic_reward(const std::optional<Vector>& preference, const Vector& agent_dist) {
  if (!preference) return 0.0;
  if (preference->size() != agent_dist.size()) {
    throw ConfigError("intrinsic_reward: preference over " + std::to_string(preference->size()) +
                      " actions, agent distribution over " + std::to_string(agent_dist.size()));
  }
  return -(*preference - agent_dist).norm();
}

/// R_t = r_ex + lambda * mean(intrinsics).
inline double shaped_team_reward(double r_ex, std::span<const double> intrinsics, double lambda) {
  if (intrinsics.empty()) throw InvalidInput("shaped_team_reward: no agents");
  if (lambda < 0.0) throw ConfigError("shaped_team_reward: lambda must be >= 0");
  double sum = 0.0;
  for (double r : intrinsics) sum += r;
  return r_ex + lambda * (sum / static_cast<double>(intrinsics.size()));
}

struct IntrinsicRecord {
  int agent = 0;
  int step = 0;
  std::optional<std::string> rule;
  std::optional<Vector> preference;
  Vector agent_dist;
  double reward = 0.0;
};

}  // namespace kgmarl
