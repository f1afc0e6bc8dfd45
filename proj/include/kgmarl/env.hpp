// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgmarl/tensor.hpp"

namespace kgmarl {

/// Action names of an environment plus named groups (e.g. "attack" for all
/// attack_j). A group name resolves to its member indices.
class ActionVocabulary {
 public:
  ActionVocabulary() = default;
  explicit ActionVocabulary(std::vector<std::string> names) : names_(std::move(names)) {}

  void add_group(const std::string& group, std::vector<int> members) { groups_[group] = std::move(members); }

  std::size_t size() const { return names_.size(); }
  const std::string& name(int a) const { return names_.at(static_cast<std::size_t>(a)); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<int> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  /// Indices named by `name`: a single action or every member of a group.
  /// Empty when the name is unknown.
  std::vector<int> resolve(const std::string& name) const {
    if (auto i = index_of(name)) return {*i};
    auto it = groups_.find(name);
    if (it != groups_.end()) return it->second;
    return {};
  }

  bool knows(const std::string& name) const { return index_of(name).has_value() || groups_.count(name) != 0; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::vector<int>> groups_;
};

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  bool won = false;
};

/// Common surface of the gridworlds used by the trainer. Observations and
/// global state are flat real vectors; named features feed the rule engine.
class Env {
 public:
  virtual ~Env() = default;

  virtual void reset(std::uint64_t seed) = 0;
  virtual StepOutcome step(std::span<const int> actions) = 0;

  virtual int n_agents() const = 0;
  virtual int n_actions() const = 0;
  virtual int obs_dim() const = 0;
  virtual int state_dim() const = 0;
  virtual int horizon() const = 0;
  virtual int steps() const = 0;

  virtual Vector observation(int agent) const = 0;
  virtual Vector global_state() const = 0;
  virtual Mask available_actions(int agent) const = 0;

  virtual const ActionVocabulary& vocabulary() const = 0;
  virtual const std::vector<std::string>& feature_names() const = 0;
  /// Values aligned with feature_names().
  virtual std::vector<double> features(int agent) const = 0;

  std::map<std::string, double> feature_map(int agent) const {
    std::map<std::string, double> m;
    const auto& names = feature_names();
    const auto values = features(agent);
    for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = values[i];
    return m;
  }
};

}  // namespace kgmarl
