// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Dense-matrix substrate: named parameters, gradients, dense and GRU layers
// with hand-derived backward passes, and the masked softmax.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kgmarl/errors.hpp"
#include "kgmarl/rng.hpp"

namespace kgmarl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Mask = std::vector<bool>;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

struct Param {
  Matrix value;
  Matrix accumulator;  // RMSProp running mean of squared gradients
};

/// Named parameter arrays with one optimizer accumulator each. Shapes are
/// fixed at registration.
class ParamStore {
 public:
  Matrix& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (params_.count(name) != 0) throw ConfigError("duplicate parameter '" + name + "'");
    Param& p = params_[name];
    p.value = Matrix::Zero(rows, cols);
    p.accumulator = Matrix::Zero(rows, cols);
    return p.value;
  }

  /// Registers `name` and fills it uniformly in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Matrix& add_uniform(const std::string& name, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                      Rng& rng) {
    Matrix& m = add(name, rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Matrix& value(const std::string& name) const { return get(name).value; }
  Matrix& value(const std::string& name) { return get(name).value; }
  const Param& param(const std::string& name) const { return get(name); }
  Param& param(const std::string& name) { return get(name); }

  void assign(const std::string& name, const Matrix& m) {
    Param& p = get(name);
    if (p.value.rows() != m.rows() || p.value.cols() != m.cols()) {
      throw ConfigError("shape change for parameter '" + name + "': " + shape_str(p.value.rows(), p.value.cols()) +
                        " -> " + shape_str(m.rows(), m.cols()));
    }
    p.value = m;
  }

  /// Copies values (not accumulators) from a store with identical layout.
  void copy_values_from(const ParamStore& other) {
    if (!same_layout(other)) throw ConfigError("parameter layout mismatch in copy");
    for (auto& [name, p] : params_) p.value = other.params_.at(name).value;
  }

  bool same_layout(const ParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (const auto& [name, p] : params_) {
      auto it = other.params_.find(name);
      if (it == other.params_.end()) return false;
      if (it->second.value.rows() != p.value.rows() || it->second.value.cols() != p.value.cols()) return false;
    }
    return true;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  const std::map<std::string, Param>& entries() const { return params_; }
  std::map<std::string, Param>& entries() { return params_; }

 private:
  const Param& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  Param& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Param> params_;
};

/// Gradient arrays keyed by parameter name; contributions are summed.
class Gradients {
 public:
  Matrix& slot(const ParamStore& params, const std::string& name) {
    auto it = grads_.find(name);
    if (it != grads_.end()) return it->second;
    const Matrix& v = params.value(name);
    return grads_.emplace(name, Matrix::Zero(v.rows(), v.cols())).first->second;
  }

  void accumulate(const ParamStore& params, const std::string& name, const Matrix& g) {
    Matrix& s = slot(params, name);
    if (s.rows() != g.rows() || s.cols() != g.cols()) {
      throw ConfigError("gradient shape mismatch for '" + name + "': " + shape_str(g.rows(), g.cols()) + " vs " +
                        shape_str(s.rows(), s.cols()));
    }
    s += g;
  }

  const Matrix* find(const std::string& name) const {
    auto it = grads_.find(name);
    return it == grads_.end() ? nullptr : &it->second;
  }

  bool all_finite() const {
    for (const auto& [_, g] : grads_) {
      if (!g.allFinite()) return false;
    }
    return true;
  }

  double global_norm() const {
    double s = 0.0;
    for (const auto& [_, g] : grads_) s += g.squaredNorm();
    return std::sqrt(s);
  }

  void scale(double f) {
    for (auto& [_, g] : grads_) g *= f;
  }

  const std::map<std::string, Matrix>& entries() const { return grads_; }
  std::map<std::string, Matrix>& entries() { return grads_; }

 private:
  std::map<std::string, Matrix> grads_;
};

enum class Activation { identity, relu, tanh };

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::tanh:
      return std::tanh(x);
    case Activation::identity:
      break;
  }
  return x;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Single-sample dense layer: activation(weight * input + bias).
inline Vector dense_forward(const Vector& input, const Matrix& weight, const Vector& bias, Activation act) {
  if (weight.cols() != input.size() || weight.rows() != bias.size()) {
    throw ConfigError("dense_forward: weight " + shape_str(weight.rows(), weight.cols()) + ", input " +
                      std::to_string(input.size()) + ", bias " + std::to_string(bias.size()));
  }
  Vector out = weight * input + bias;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = activate(act, out[i]);
  return out;
}

struct DenseCache {
  Matrix input;
  Matrix output;  // post-activation
};

/// Batched dense layer over rows: Y = act(X W^T + b). Weight is out x in,
/// bias is stored as a 1 x out row.
struct Dense {
  std::string weight;
  std::string bias;
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Activation act = Activation::identity;

  Dense() = default;
  Dense(std::string prefix, Eigen::Index in_dim, Eigen::Index out_dim, Activation a)
      : weight(prefix + ".w"), bias(prefix + ".b"), in(in_dim), out(out_dim), act(a) {}

  void init(ParamStore& params, Rng& rng) const {
    params.add_uniform(weight, out, in, in, rng);
    params.add_uniform(bias, 1, out, in, rng);
  }

  Matrix forward(const ParamStore& params, const Matrix& x, DenseCache* cache = nullptr) const {
    const Matrix& w = params.value(weight);
    const Matrix& b = params.value(bias);
    if (x.cols() != w.cols()) {
      throw ConfigError(weight + ": input width " + std::to_string(x.cols()) + " != " + std::to_string(w.cols()));
    }
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    switch (act) {
      case Activation::relu:
        y = y.cwiseMax(0.0);
        break;
      case Activation::tanh:
        y = y.array().tanh().matrix();
        break;
      case Activation::identity:
        break;
    }
    if (cache != nullptr) {
      cache->input = x;
      cache->output = y;
    }
    return y;
  }

  /// Accumulates parameter gradients and returns d loss / d input.
  Matrix backward(const ParamStore& params, const DenseCache& cache, const Matrix& d_out, Gradients& grads) const {
    Matrix d_pre = d_out;
    switch (act) {
      case Activation::relu:
        d_pre = (cache.output.array() > 0.0).select(d_out, 0.0);
        break;
      case Activation::tanh:
        d_pre = (d_out.array() * (1.0 - cache.output.array().square())).matrix();
        break;
      case Activation::identity:
        break;
    }
    grads.slot(params, weight).noalias() += d_pre.transpose() * cache.input;
    grads.slot(params, bias).row(0) += d_pre.colwise().sum();
    return d_pre * params.value(weight);
  }
};

struct GruCache {
  Matrix xh;      // [x, h_prev]
  Matrix xrh;     // [x, r * h_prev]
  Matrix z;
  Matrix r;
  Matrix cand;
  Matrix h_prev;
};

/// Gated recurrent cell over rows:
///   z = sigmoid(Wz [x;h] + bz), r = sigmoid(Wr [x;h] + br),
///   c = tanh(Wh [x; r*h] + bh), h' = (1-z)*h + z*c.
struct Gru {
  std::string prefix;
  Eigen::Index in = 0;
  Eigen::Index hidden = 0;

  Gru() = default;
  Gru(std::string p, Eigen::Index in_dim, Eigen::Index hidden_dim) : prefix(std::move(p)), in(in_dim), hidden(hidden_dim) {}

  std::string name(const char* suffix) const { return prefix + "." + suffix; }

  void init(ParamStore& params, Rng& rng) const {
    const Eigen::Index fan = in + hidden;
    for (const char* g : {"z", "r", "h"}) {
      params.add_uniform(prefix + ".w" + g, hidden, fan, fan, rng);
      params.add_uniform(prefix + ".b" + g, 1, hidden, fan, rng);
    }
  }

  Matrix forward(const ParamStore& params, const Matrix& x, const Matrix& h, GruCache* cache = nullptr) const {
    if (x.cols() != in || h.cols() != hidden || x.rows() != h.rows()) {
      throw ConfigError(prefix + ": gru input " + shape_str(x.rows(), x.cols()) + ", hidden " +
                        shape_str(h.rows(), h.cols()) + ", expected widths " + std::to_string(in) + "/" +
                        std::to_string(hidden));
    }
    const Eigen::Index n = x.rows();
    Matrix xh(n, in + hidden);
    xh << x, h;
    Matrix z = xh * params.value(name("wz")).transpose();
    z.rowwise() += params.value(name("bz")).row(0);
    z = z.unaryExpr([](double v) { return sigmoid(v); });
    Matrix r = xh * params.value(name("wr")).transpose();
    r.rowwise() += params.value(name("br")).row(0);
    r = r.unaryExpr([](double v) { return sigmoid(v); });
    Matrix xrh(n, in + hidden);
    xrh << x, r.cwiseProduct(h);
    Matrix c = xrh * params.value(name("wh")).transpose();
    c.rowwise() += params.value(name("bh")).row(0);
    c = c.array().tanh().matrix();
    Matrix out = (h.array() + z.array() * (c.array() - h.array())).matrix();
    if (cache != nullptr) {
      cache->xh = std::move(xh);
      cache->xrh = std::move(xrh);
      cache->z = std::move(z);
      cache->r = std::move(r);
      cache->cand = std::move(c);
      cache->h_prev = h;
    }
    return out;
  }

  /// Returns (d input, d previous hidden).
  std::pair<Matrix, Matrix> backward(const ParamStore& params, const GruCache& c, const Matrix& d_h,
                                     Gradients& grads) const {
    const auto& wz = params.value(name("wz"));
    const auto& wr = params.value(name("wr"));
    const auto& wh = params.value(name("wh"));

    Matrix d_hprev = (d_h.array() * (1.0 - c.z.array())).matrix();
    Matrix d_zpre = (d_h.array() * (c.cand.array() - c.h_prev.array()) * c.z.array() * (1.0 - c.z.array())).matrix();
    Matrix d_cpre = (d_h.array() * c.z.array() * (1.0 - c.cand.array().square())).matrix();

    grads.slot(params, name("wh")).noalias() += d_cpre.transpose() * c.xrh;
    grads.slot(params, name("bh")).row(0) += d_cpre.colwise().sum();
    Matrix d_xrh = d_cpre * wh;
    Matrix d_rh = d_xrh.rightCols(hidden);
    d_hprev += d_rh.cwiseProduct(c.r);
    Matrix d_rpre = (d_rh.array() * c.h_prev.array() * c.r.array() * (1.0 - c.r.array())).matrix();

    grads.slot(params, name("wz")).noalias() += d_zpre.transpose() * c.xh;
    grads.slot(params, name("bz")).row(0) += d_zpre.colwise().sum();
    grads.slot(params, name("wr")).noalias() += d_rpre.transpose() * c.xh;
    grads.slot(params, name("br")).row(0) += d_rpre.colwise().sum();
    Matrix d_xh = d_zpre * wz + d_rpre * wr;

    Matrix d_x = d_xrh.leftCols(in) + d_xh.leftCols(in);
    d_hprev += d_xh.rightCols(hidden);
    return {std::move(d_x), std::move(d_hprev)};
  }
};

/// Single-sample GRU step against parameters registered under `prefix`.
inline Vector gru_step(const Vector& x, const Vector& h, const ParamStore& params, const std::string& prefix) {
  const Gru cell(prefix, x.size(), h.size());
  const Matrix& wz = params.value(cell.name("wz"));
  if (wz.rows() != h.size() || wz.cols() != x.size() + h.size()) {
    throw ConfigError("gru_step: hidden " + std::to_string(h.size()) + " / input " + std::to_string(x.size()) +
                      " do not match " + shape_str(wz.rows(), wz.cols()));
  }
  Matrix out = cell.forward(params, x.transpose(), h.transpose());
  return out.row(0).transpose();
}

/// exp(v - max) / sum over entries with mask true; exact zeros elsewhere.
inline Vector softmax_masked(std::span<const double> values, const Mask& mask, double temperature = 1.0) {
  if (values.size() != mask.size()) {
    throw ConfigError("softmax_masked: " + std::to_string(values.size()) + " values vs " +
                      std::to_string(mask.size()) + " mask entries");
  }
  double hi = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) {
      hi = std::max(hi, values[i] / temperature);
      any = true;
    }
  }
  if (!any) throw InvalidInput("softmax_masked: mask has no available entry");
  Vector out = Vector::Zero(static_cast<Eigen::Index>(values.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i]) {
      out[static_cast<Eigen::Index>(i)] = std::exp(values[i] / temperature - hi);
      total += out[static_cast<Eigen::Index>(i)];
    }
  }
  return out / total;
}

inline Vector softmax_masked(const Vector& values, const Mask& mask, double temperature = 1.0) {
  return softmax_masked(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())), mask,
                        temperature);
}

}  // namespace kgmarl
