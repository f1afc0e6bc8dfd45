// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Loss assembly for one batch:
//   L_TD  = mean_valid (R_t + g*Qtot_tgt(s', u*) - Qtot(s, u))^2
//   L_i   = mean_valid (r_i + g*max_u Q_i_tgt(o', u) - Q_i(o, u_i))^2
//   L     = L_TD + lambda_K * sum_i L_i
// u* is the per-agent greedy action of the target agent network. Terminal
// transitions drop the bootstrap term; padded transitions are masked out.

#pragma once

#include <optional>
#include <vector>

#include "kgmarl/agent_net.hpp"
#include "kgmarl/episode.hpp"
#include "kgmarl/intrinsic.hpp"
#include "kgmarl/mixer.hpp"

namespace kgmarl {

enum class Reduce { sum, mean };

struct LossConfig {
  double gamma = 0.99;
  double lambda_k = 0.02;
  Reduce individual = Reduce::sum;
  // Recompute r_i and R_t from the online network at replay time instead of
  // using the values stored at collection.
  bool recompute_intrinsic = false;
  double lambda = 0.5;
  double temperature = 1.0;
};

struct LossResult {
  double td = 0.0;
  std::vector<double> individual;  // L_i per agent
  double total = 0.0;
  double valid_steps = 0.0;
  Gradients grads;
};

inline LossResult compute_losses(const Batch& batch, const AgentNet& net, const Mixer& mixer, const ParamStore& online,
                                 const ParamStore& target, const LossConfig& cfg, bool with_grads) {
  if (batch.episodes == 0 || batch.steps == 0) throw InvalidInput("compute_losses: empty batch");
  const int T = batch.steps;
  const Eigen::Index B = batch.episodes;
  const Eigen::Index n = batch.n_agents;

  std::vector<Matrix> online_obs(batch.obs.begin(), batch.obs.begin() + T);
  const auto on = net.unroll(online, online_obs, with_grads);
  const auto tg = net.unroll(target, batch.obs, false);

  double valid = 0.0;
  for (const auto& m : batch.mask) valid += m.sum();
  if (valid <= 0.0) throw InvalidInput("compute_losses: batch has no valid transitions");

  LossResult res;
  res.individual.assign(static_cast<std::size_t>(n), 0.0);
  const double w_i = cfg.individual == Reduce::sum ? 1.0 : 1.0 / static_cast<double>(n);

  std::vector<Mixer::Cache> caches(static_cast<std::size_t>(T));
  std::vector<Vector> d_tot(static_cast<std::size_t>(T));
  std::vector<Matrix> d_ind(static_cast<std::size_t>(T));

  for (int t = 0; t < T; ++t) {
    const auto ts = static_cast<std::size_t>(t);
    const Matrix& q = on.q[ts];
    const Matrix& q_next = tg.q[ts + 1];
    const Matrix& avail_next = batch.avail[ts + 1];
    Matrix chosen(B, n), target_greedy(B, n);
    Matrix r_i = batch.intrinsic[ts];
    Vector reward = batch.reward[ts];
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index row = b * n + i;
        chosen(b, i) = q(row, batch.actions[ts][static_cast<std::size_t>(row)]);
        const int a_star = greedy_action(q_next.row(row).transpose(), row_mask(avail_next, row));
        target_greedy(b, i) = q_next(row, a_star);
      }
    }
    if (cfg.recompute_intrinsic) {
      for (Eigen::Index b = 0; b < B; ++b) {
        if (batch.mask[ts][b] == 0.0) continue;
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Index row = b * n + i;
          if (batch.has_preference[ts][static_cast<std::size_t>(row)] == 0) {
            r_i(b, i) = 0.0;
            continue;
          }
          const Vector dist = softmax_masked(Vector(q.row(row).transpose()), row_mask(batch.avail[ts], row), cfg.temperature);
          r_i(b, i) = intrinsic_reward(Vector(batch.preference[ts].row(row).transpose()), dist);
        }
        const Vector ri = r_i.row(b).transpose();
        reward[b] = shaped_team_reward(batch.reward_ex[ts][b], std::span<const double>(ri.data(), ri.size()), cfg.lambda);
      }
    }
    const Vector q_tot = mixer.forward(online, chosen, batch.state[ts], with_grads ? &caches[ts] : nullptr);
    const Vector q_tot_next = mixer.forward(target, target_greedy, batch.state[ts + 1]);

    d_tot[ts] = Vector::Zero(B);
    d_ind[ts] = Matrix::Zero(B, n);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (batch.mask[ts][b] == 0.0) continue;
      const bool terminal = batch.done[ts][b] != 0.0;
      const double y = terminal ? reward[b] : reward[b] + cfg.gamma * q_tot_next[b];
      const double delta = q_tot[b] - y;
      res.td += delta * delta;
      d_tot[ts][b] = 2.0 * delta / valid;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double yi = terminal ? r_i(b, i) : r_i(b, i) + cfg.gamma * target_greedy(b, i);
        const double di = chosen(b, i) - yi;
        res.individual[static_cast<std::size_t>(i)] += di * di;
        d_ind[ts](b, i) = cfg.lambda_k * w_i * 2.0 * di / valid;
      }
    }
  }
  res.td /= valid;
  double ind = 0.0;
  for (double& l : res.individual) {
    l /= valid;
    ind += l;
  }
  res.total = res.td + cfg.lambda_k * w_i * ind;
  res.valid_steps = valid;

  if (with_grads) {
    std::vector<Matrix> d_q(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      Matrix d_chosen = mixer.backward(online, caches[ts], d_tot[ts], res.grads);
      d_chosen += d_ind[ts];
      d_q[ts] = Matrix::Zero(B * n, batch.n_actions);
      for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Index row = b * n + i;
          d_q[ts](row, batch.actions[ts][static_cast<std::size_t>(row)]) = d_chosen(b, i);
        }
      }
    }
    net.backward(online, on, d_q, res.grads);
  }
  return res;
}

}  // namespace kgmarl
