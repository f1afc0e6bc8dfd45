// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Value-decomposition heads combining per-agent chosen-action Q values into
// a team value. Both are monotone in every agent's Q, so per-agent greedy
// actions form a greedy joint action.

#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>

#include "kgmarl/rng.hpp"
#include "kgmarl/tensor.hpp"

namespace kgmarl {

enum class MixerKind { vdn, qmix };

inline const char* mixer_name(MixerKind k) { return k == MixerKind::vdn ? "vdn" : "qmix"; }

struct MixerConfig {
  MixerKind kind = MixerKind::vdn;
  int n_agents = 1;
  int state_dim = 1;
  int embed = 32;
};

/// Q_tot = sum of agent values.
inline double vdn_mix(std::span<const double> qs) { return std::accumulate(qs.begin(), qs.end(), 0.0); }

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

class Mixer {
 public:
  Mixer() = default;
  explicit Mixer(MixerConfig cfg, const std::string& prefix = "mixer")
      : cfg_(cfg),
        hyper_w1_(prefix + ".hyper_w1", cfg.state_dim, static_cast<Eigen::Index>(cfg.n_agents) * cfg.embed,
                  Activation::identity),
        hyper_b1_(prefix + ".hyper_b1", cfg.state_dim, cfg.embed, Activation::identity),
        hyper_w2_(prefix + ".hyper_w2", cfg.state_dim, cfg.embed, Activation::identity),
        value1_(prefix + ".value1", cfg.state_dim, cfg.embed, Activation::relu),
        value2_(prefix + ".value2", cfg.embed, 1, Activation::identity) {
    if (cfg.n_agents < 1) throw ConfigError("mixer: need at least one agent");
    if (cfg.kind == MixerKind::qmix && (cfg.state_dim < 1 || cfg.embed < 1)) {
      throw ConfigError("mixer: qmix needs positive state and embed sizes");
    }
  }

  const MixerConfig& config() const { return cfg_; }

  void init(ParamStore& params, Rng& rng) const {
    if (cfg_.kind == MixerKind::vdn) return;
    hyper_w1_.init(params, rng);
    hyper_b1_.init(params, rng);
    hyper_w2_.init(params, rng);
    value1_.init(params, rng);
    value2_.init(params, rng);
  }

  struct Cache {
    Matrix qs;
    DenseCache w1, b1, w2, v1, v2;
    Matrix pre;     // N x embed
    Matrix hidden;  // elu(pre)
  };

  /// qs: N x n_agents, states: N x state_dim. Returns Q_tot per row.
  Vector forward(const ParamStore& params, const Matrix& qs, const Matrix& states, Cache* cache = nullptr) const {
    if (qs.cols() != cfg_.n_agents) {
      throw ConfigError("mixer: expected " + std::to_string(cfg_.n_agents) + " agent values, got " +
                        std::to_string(qs.cols()));
    }
    if (cfg_.kind == MixerKind::vdn) {
      if (cache != nullptr) cache->qs = qs;
      return qs.rowwise().sum();
    }
    if (states.cols() != cfg_.state_dim || states.rows() != qs.rows()) {
      throw ConfigError("mixer: state shape " + shape_str(states.rows(), states.cols()) + ", expected width " +
                        std::to_string(cfg_.state_dim));
    }
    Cache local;
    Cache& c = cache != nullptr ? *cache : local;
    c.qs = qs;
    const Matrix w1 = hyper_w1_.forward(params, states, &c.w1);
    const Matrix b1 = hyper_b1_.forward(params, states, &c.b1);
    const Matrix w2 = hyper_w2_.forward(params, states, &c.w2);
    const Matrix v = value2_.forward(params, value1_.forward(params, states, &c.v1), &c.v2);
    const Eigen::Index n = qs.rows();
    const Eigen::Index e = cfg_.embed;
    c.pre = b1;
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index i = 0; i < cfg_.n_agents; ++i) {
        c.pre.row(r) += qs(r, i) * w1.row(r).segment(i * e, e).cwiseAbs();
      }
    }
    c.hidden = c.pre.unaryExpr([](double x) { return elu(x); });
    Vector out = (c.hidden.array() * w2.array().abs()).rowwise().sum().matrix();
    out += v.col(0);
    return out;
  }

  /// Accumulates parameter gradients; returns d Q_tot / d qs scaled by d_out.
  Matrix backward(const ParamStore& params, const Cache& c, const Vector& d_out, Gradients& grads) const {
    const Eigen::Index n = c.qs.rows();
    if (cfg_.kind == MixerKind::vdn) return d_out.replicate(1, cfg_.n_agents);
    const Eigen::Index e = cfg_.embed;
    const Matrix& w1 = c.w1.output;
    const Matrix& w2 = c.w2.output;
    auto sign = [](double x) { return x < 0.0 ? -1.0 : 1.0; };

    Matrix d_w2 = (c.hidden.array().colwise() * d_out.array()).matrix();
    d_w2 = d_w2.cwiseProduct(w2.unaryExpr(sign));
    Matrix d_hidden = (w2.array().abs().colwise() * d_out.array()).matrix();
    Matrix d_pre = (c.pre.array() > 0.0).select(d_hidden, d_hidden.cwiseProduct((c.hidden.array() + 1.0).matrix()));

    Matrix d_w1(n, cfg_.n_agents * e);
    Matrix d_qs(n, cfg_.n_agents);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index i = 0; i < cfg_.n_agents; ++i) {
        auto seg = w1.row(r).segment(i * e, e);
        d_qs(r, i) = seg.cwiseAbs().dot(d_pre.row(r));
        d_w1.row(r).segment(i * e, e) = c.qs(r, i) * d_pre.row(r).cwiseProduct(seg.unaryExpr(sign));
      }
    }
    hyper_w1_.backward(params, c.w1, d_w1, grads);
    hyper_b1_.backward(params, c.b1, d_pre, grads);
    hyper_w2_.backward(params, c.w2, d_w2, grads);
    const Matrix d_v1 = value2_.backward(params, c.v2, d_out, grads);
    value1_.backward(params, c.v1, d_v1, grads);
    return d_qs;
  }

 private:
  MixerConfig cfg_;
  Dense hyper_w1_;
  Dense hyper_b1_;
  Dense hyper_w2_;
  Dense value1_;
  Dense value2_;
};

/// Monotonic hypernetwork mix of one joint sample.
inline double qmix_mix(const Mixer& mixer, const ParamStore& params, const Vector& qs, const Vector& state) {
  return mixer.forward(params, qs.transpose(), state.transpose())[0];
}

}  // namespace kgmarl
