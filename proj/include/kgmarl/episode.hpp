// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kgmarl/errors.hpp"
#include "kgmarl/rng.hpp"
#include "kgmarl/tensor.hpp"

namespace kgmarl {

/// One stored episode. Per-step arrays with T+1 entries hold the terminal
/// observation as their last element; the others have T entries.
struct Episode {
  int n_agents = 0;
  int n_actions = 0;

  std::vector<Matrix> obs;    // T+1, n_agents x obs_dim
  std::vector<Matrix> avail;  // T+1, n_agents x n_actions, 0/1
  std::vector<Vector> state;  // T+1

  std::vector<std::vector<int>> actions;  // T, n_agents
  std::vector<Matrix> agent_dist;         // T, n_agents x n_actions
  std::vector<Matrix> preference;         // T, n_agents x n_actions (zero rows when no rule fired)
  std::vector<std::vector<int>> rule;     // T, matched rule index or -1
  std::vector<Vector> intrinsic;          // T, n_agents
  std::vector<double> reward_ex;          // T
  std::vector<double> reward;             // T, shaped R_t
  std::vector<bool> done;                 // T, only the last is true

  bool won = false;

  int length() const { return static_cast<int>(actions.size()); }
  double extrinsic_return() const {
    double s = 0.0;
    for (double r : reward_ex) s += r;
    return s;
  }
};

inline Mask row_mask(const Matrix& avail, Eigen::Index row) {
  Mask m(static_cast<std::size_t>(avail.cols()));
  for (Eigen::Index a = 0; a < avail.cols(); ++a) m[static_cast<std::size_t>(a)] = avail(row, a) > 0.5;
  return m;
}

/// FIFO ring of episodes with uniform sampling without replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
    episodes_.reserve(std::min<std::size_t>(capacity, 1024));
  }

  void insert(Episode ep) {
    if (episodes_.size() < capacity_) {
      episodes_.push_back(std::move(ep));
    } else {
      episodes_[next_] = std::move(ep);
    }
    next_ = (next_ + 1) % capacity_;
    inserted_ += 1;
  }

  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_inserted() const { return inserted_; }
  bool can_sample(std::size_t batch) const { return episodes_.size() >= batch; }

  /// Oldest stored episode first.
  const Episode& oldest() const { return episodes_.size() < capacity_ ? episodes_.front() : episodes_[next_]; }

  std::vector<const Episode*> sample(std::size_t batch, Rng& rng) const {
    if (batch == 0 || episodes_.size() < batch) throw InvalidInput("replay buffer: not enough episodes to sample");
    std::vector<std::size_t> idx(episodes_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<const Episode*> out;
    for (std::size_t k = 0; k < batch; ++k) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(k), static_cast<int>(idx.size()) - 1));
      std::swap(idx[k], idx[j]);
      out.push_back(&episodes_[idx[k]]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<Episode> episodes_;
  std::size_t next_ = 0;
  std::size_t inserted_ = 0;
};

/// Time-major padded view over several episodes. Rows of per-agent matrices
/// are ordered (episode, agent).
struct Batch {
  int episodes = 0;
  int n_agents = 0;
  int n_actions = 0;
  int steps = 0;  // longest episode length

  std::vector<Matrix> obs;    // steps+1, (B*n) x obs_dim
  std::vector<Matrix> avail;  // steps+1, (B*n) x A
  std::vector<Matrix> state;  // steps+1, B x S
  std::vector<std::vector<int>> actions;  // steps, B*n
  std::vector<Matrix> intrinsic;          // steps, B x n
  std::vector<Matrix> preference;         // steps, (B*n) x A
  std::vector<std::vector<int>> has_preference;  // steps, B*n
  std::vector<Vector> reward;             // steps, B
  std::vector<Vector> reward_ex;          // steps, B
  std::vector<Vector> done;               // steps, B
  std::vector<Vector> mask;               // steps, B; 1 on real transitions
};

/// Pads to the longest episode. Padded entries are zero except availability,
/// where only action 0 is marked available.
inline Batch make_batch(std::span<const Episode* const> eps) {
  if (eps.empty()) throw InvalidInput("make_batch: empty batch");
  Batch b;
  b.episodes = static_cast<int>(eps.size());
  b.n_agents = eps[0]->n_agents;
  b.n_actions = eps[0]->n_actions;
  for (const Episode* e : eps) {
    if (e->n_agents != b.n_agents || e->n_actions != b.n_actions) throw ConfigError("make_batch: mixed episode shapes");
    if (e->length() < 1) throw InvalidInput("make_batch: empty episode");
    b.steps = std::max(b.steps, e->length());
  }
  const Eigen::Index n = b.n_agents;
  const Eigen::Index rows = b.episodes * n;
  const Eigen::Index obs_dim = eps[0]->obs[0].cols();
  const Eigen::Index state_dim = eps[0]->state[0].size();
  for (int t = 0; t <= b.steps; ++t) {
    Matrix o = Matrix::Zero(rows, obs_dim);
    Matrix av = Matrix::Zero(rows, b.n_actions);
    Matrix st = Matrix::Zero(b.episodes, state_dim);
    for (int e = 0; e < b.episodes; ++e) {
      const Episode& ep = *eps[static_cast<std::size_t>(e)];
      if (t <= ep.length()) {
        o.middleRows(e * n, n) = ep.obs[static_cast<std::size_t>(t)];
        av.middleRows(e * n, n) = ep.avail[static_cast<std::size_t>(t)];
        st.row(e) = ep.state[static_cast<std::size_t>(t)].transpose();
      } else {
        av.middleRows(e * n, n).col(0).setOnes();
      }
    }
    b.obs.push_back(std::move(o));
    b.avail.push_back(std::move(av));
    b.state.push_back(std::move(st));
  }
  for (int t = 0; t < b.steps; ++t) {
    std::vector<int> act(static_cast<std::size_t>(rows), 0);
    std::vector<int> has(static_cast<std::size_t>(rows), 0);
    Matrix intr = Matrix::Zero(b.episodes, n);
    Matrix pref = Matrix::Zero(rows, b.n_actions);
    Vector r = Vector::Zero(b.episodes), rex = Vector::Zero(b.episodes), d = Vector::Zero(b.episodes),
           m = Vector::Zero(b.episodes);
    for (int e = 0; e < b.episodes; ++e) {
      const Episode& ep = *eps[static_cast<std::size_t>(e)];
      if (t >= ep.length()) continue;
      const auto ts = static_cast<std::size_t>(t);
      for (Eigen::Index i = 0; i < n; ++i) {
        act[static_cast<std::size_t>(e * n + i)] = ep.actions[ts][static_cast<std::size_t>(i)];
        has[static_cast<std::size_t>(e * n + i)] = ep.rule[ts][static_cast<std::size_t>(i)] >= 0 ? 1 : 0;
      }
      intr.row(e) = ep.intrinsic[ts].transpose();
      pref.middleRows(e * n, n) = ep.preference[ts];
      r[e] = ep.reward[ts];
      rex[e] = ep.reward_ex[ts];
      d[e] = ep.done[ts] ? 1.0 : 0.0;
      m[e] = 1.0;
    }
    b.actions.push_back(std::move(act));
    b.has_preference.push_back(std::move(has));
    b.intrinsic.push_back(std::move(intr));
    b.preference.push_back(std::move(pref));
    b.reward.push_back(std::move(r));
    b.reward_ex.push_back(std::move(rex));
    b.done.push_back(std::move(d));
    b.mask.push_back(std::move(m));
  }
  return b;
}

}  // namespace kgmarl
