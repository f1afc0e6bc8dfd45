// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Parameter-shared recurrent Q network: dense(relu) -> GRU -> dense.
// Rows of every matrix are (sample, agent) pairs; agents are told apart by
// the id one-hot inside their observation.

#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "kgmarl/rng.hpp"
#include "kgmarl/tensor.hpp"

namespace kgmarl {

struct AgentNetConfig {
  int obs_dim = 0;
  int hidden = 64;
  int n_actions = 0;
};

struct QValueVector {
  Vector values;
  Mask available;
};

class AgentNet {
 public:
  AgentNet() = default;
  explicit AgentNet(AgentNetConfig cfg, const std::string& prefix = "agent")
      : cfg_(cfg),
        fc1_(prefix + ".fc1", cfg.obs_dim, cfg.hidden, Activation::relu),
        gru_(prefix + ".gru", cfg.hidden, cfg.hidden),
        fc2_(prefix + ".fc2", cfg.hidden, cfg.n_actions, Activation::identity) {
    if (cfg.obs_dim <= 0 || cfg.hidden <= 0 || cfg.n_actions <= 0) throw ConfigError("agent net: sizes must be positive");
  }

  const AgentNetConfig& config() const { return cfg_; }

  void init(ParamStore& params, Rng& rng) const {
    fc1_.init(params, rng);
    gru_.init(params, rng);
    fc2_.init(params, rng);
  }

  Matrix initial_hidden(Eigen::Index rows) const { return Matrix::Zero(rows, cfg_.hidden); }

  /// One step for a block of rows: returns (Q, next hidden).
  std::pair<Matrix, Matrix> step(const ParamStore& params, const Matrix& obs, const Matrix& hidden) const {
    if (obs.cols() != cfg_.obs_dim) {
      throw ConfigError("agent net: observation width " + std::to_string(obs.cols()) + " != " +
                        std::to_string(cfg_.obs_dim));
    }
    Matrix x = fc1_.forward(params, obs);
    Matrix h = gru_.forward(params, x, hidden);
    Matrix q = fc2_.forward(params, h);
    return {std::move(q), std::move(h)};
  }

  struct Unroll {
    std::vector<DenseCache> fc1;
    std::vector<GruCache> gru;
    std::vector<DenseCache> fc2;
    std::vector<Matrix> q;  // per time step
  };

  /// Runs the sequence from a zero hidden state. Caches are kept only when
  /// `for_backward` is set.
  Unroll unroll(const ParamStore& params, const std::vector<Matrix>& obs, bool for_backward) const {
    Unroll u;
    if (obs.empty()) return u;
    Matrix h = initial_hidden(obs.front().rows());
    const std::size_t steps = obs.size();
    if (for_backward) {
      u.fc1.resize(steps);
      u.gru.resize(steps);
      u.fc2.resize(steps);
    }
    for (std::size_t t = 0; t < steps; ++t) {
      if (obs[t].cols() != cfg_.obs_dim) throw ConfigError("agent net: observation width mismatch in sequence");
      Matrix x = fc1_.forward(params, obs[t], for_backward ? &u.fc1[t] : nullptr);
      h = gru_.forward(params, x, h, for_backward ? &u.gru[t] : nullptr);
      u.q.push_back(fc2_.forward(params, h, for_backward ? &u.fc2[t] : nullptr));
    }
    return u;
  }

  /// Backpropagation through time. `d_q[t]` may be empty for steps with no
  /// loss contribution; the unroll must have been made with for_backward.
  void backward(const ParamStore& params, const Unroll& u, const std::vector<Matrix>& d_q, Gradients& grads) const {
    Matrix d_h;
    for (std::size_t t = u.q.size(); t-- > 0;) {
      Matrix d_h_total = d_h.size() == 0 ? Matrix::Zero(u.q[t].rows(), cfg_.hidden) : d_h;
      if (t < d_q.size() && d_q[t].size() != 0) d_h_total += fc2_.backward(params, u.fc2[t], d_q[t], grads);
      auto [d_x, d_prev] = gru_.backward(params, u.gru[t], d_h_total, grads);
      fc1_.backward(params, u.fc1[t], d_x, grads);
      d_h = std::move(d_prev);
    }
  }

 private:
  AgentNetConfig cfg_;
  Dense fc1_;
  Gru gru_;
  Dense fc2_;
};

/// Single-agent forward: returns the Q vector and the next hidden state.
inline std::pair<Vector, Vector> q_forward(const AgentNet& net, const ParamStore& params, const Vector& obs,
                                           const Vector& hidden) {
  auto [q, h] = net.step(params, obs.transpose(), hidden.transpose());
  return {q.row(0).transpose(), h.row(0).transpose()};
}

/// Action distribution of a Q vector: masked softmax at the given temperature.
inline Vector phi(const QValueVector& q, double temperature = 1.0) {
  return softmax_masked(q.values, q.available, temperature);
}

/// Highest available entry, lowest index on ties.
inline int greedy_action(const Vector& q, const Mask& available) {
  int best = -1;
  for (Eigen::Index a = 0; a < q.size(); ++a) {
    if (!available[static_cast<std::size_t>(a)]) continue;
    if (best < 0 || q[a] > q[best]) best = static_cast<int>(a);
  }
  if (best < 0) throw InvalidInput("greedy_action: no available action");
  return best;
}

/// Epsilon-greedy over available actions.
inline int select_action(const QValueVector& q, double epsilon, Rng& rng) {
  if (q.values.size() != static_cast<Eigen::Index>(q.available.size())) throw ConfigError("select_action: mask size");
  if (rng.uniform() < epsilon) {
    std::vector<int> avail;
    for (std::size_t a = 0; a < q.available.size(); ++a) {
      if (q.available[a]) avail.push_back(static_cast<int>(a));
    }
    if (avail.empty()) throw InvalidInput("select_action: no available action");
    return avail[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(avail.size()) - 1))];
  }
  return greedy_action(q.values, q.available);
}

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  long anneal_steps = 50000;
};

/// Linear from start to end over anneal_steps, then held at end.
inline double epsilon_at(long step, const EpsilonSchedule& s) {
  if (s.anneal_steps <= 0) throw ConfigError("epsilon schedule: anneal_steps must be positive");
  if (step >= s.anneal_steps) return s.end;
  if (step <= 0) return s.start;
  const double frac = static_cast<double>(step) / static_cast<double>(s.anneal_steps);
  return s.start + frac * (s.end - s.start);
}

}  // namespace kgmarl
