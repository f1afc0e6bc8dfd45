// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "kgmarl/tensor.hpp"

namespace kgmarl {

struct RmsPropConfig {
  double lr = 0.0005;
  double decay = 0.99;
  double eps = 1e-5;
};

/// acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/sqrt(acc+eps).
/// Parameters without a gradient entry still have their accumulator decayed.
inline void rmsprop_step(ParamStore& params, const Gradients& grads, const RmsPropConfig& cfg) {
  if (!(cfg.lr > 0.0) || !(cfg.decay > 0.0 && cfg.decay < 1.0) || !(cfg.eps > 0.0)) {
    throw ConfigError("rmsprop: require lr>0, 0<decay<1, eps>0");
  }
  for (const auto& [name, g] : grads.entries()) {
    if (!params.contains(name)) throw ConfigError("gradient for unknown parameter '" + name + "'");
    const Param& p = params.param(name);
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw ConfigError("gradient shape mismatch for '" + name + "'");
    }
    if (!g.allFinite()) throw TrainingAbort("non-finite gradient for '" + name + "'");
  }
  for (auto& [name, p] : params.entries()) {
    const Matrix* g = grads.find(name);
    if (g == nullptr) {
      p.accumulator *= cfg.decay;
      continue;
    }
    p.accumulator = cfg.decay * p.accumulator + (1.0 - cfg.decay) * g->cwiseProduct(*g);
    p.value.array() -= cfg.lr * g->array() / (p.accumulator.array() + cfg.eps).sqrt();
  }
}

/// Rescales so the global L2 norm is at most max_norm; returns the pre-clip norm.
inline double clip_grad_norm(Gradients& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

/// Max over all scalars of |analytic - central| / max(1, |analytic|, |central|).
/// Parameters absent from `analytic` are treated as having zero gradient.
inline double grad_check(const std::function<double(const ParamStore&)>& f, const Gradients& analytic,
                         ParamStore params, double eps = 1e-5) {
  double worst = 0.0;
  for (auto& [name, p] : params.entries()) {
    const Matrix* g = analytic.find(name);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& x = p.value.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = f(params);
      x = saved - eps;
      const double down = f(params);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = g == nullptr ? 0.0 : g->data()[k];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace kgmarl
