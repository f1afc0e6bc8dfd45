// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#include <gtest/gtest.h>

#include <cmath>

#include "kgmarl/agent_net.hpp"
#include "kgmarl/mixer.hpp"
#include "kgmarl/optim.hpp"

namespace kgmarl {
namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Vector one_hot_obs(int dim, int hot) {
  Vector v = Vector::Zero(dim);
  v[hot] = 1.0;
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-row agent network written with explicit loops.
std::pair<Vector, Vector> ref_agent_step(const ParamStore& p, const Vector& obs, const Vector& h) {
  auto affine = [&](const std::string& name, const Vector& in) {
    const Matrix& w = p.value(name + ".w");
    const Matrix& b = p.value(name + ".b");
    Vector out(w.rows());
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      double s = b(0, o);
      for (Eigen::Index i = 0; i < w.cols(); ++i) s += w(o, i) * in[i];
      out[o] = s;
    }
    return out;
  };
  Vector x = affine("agent.fc1", obs).cwiseMax(0.0);
  const Eigen::Index H = h.size();
  auto gate = [&](const char* g, const Vector& hin) {
    const Matrix& w = p.value(std::string("agent.gru.w") + g);
    const Matrix& b = p.value(std::string("agent.gru.b") + g);
    Vector out(H);
    for (Eigen::Index o = 0; o < H; ++o) {
      double s = b(0, o);
      for (Eigen::Index i = 0; i < x.size(); ++i) s += w(o, i) * x[i];
      for (Eigen::Index i = 0; i < H; ++i) s += w(o, x.size() + i) * hin[i];
      out[o] = s;
    }
    return out;
  };
  const Vector z = gate("z", h).unaryExpr([](double v) { return sigmoid(v); });
  const Vector r = gate("r", h).unaryExpr([](double v) { return sigmoid(v); });
  const Vector c = gate("h", r.cwiseProduct(h)).unaryExpr([](double v) { return std::tanh(v); });
  Vector hn(H);
  for (Eigen::Index i = 0; i < H; ++i) hn[i] = (1 - z[i]) * h[i] + z[i] * c[i];
  return {affine("agent.fc2", hn), hn};
}

TEST(AgentNet, SharedParametersGiveIdenticalRowsForIdenticalInputs) {
  Rng rng(1);
  AgentNet net({6, 8, 4});
  ParamStore p;
  net.init(p, rng);
  Matrix obs(3, 6);
  obs.row(0) = one_hot_obs(6, 2).transpose();
  obs.row(1) = one_hot_obs(6, 2).transpose();
  obs.row(2) = one_hot_obs(6, 5).transpose();
  auto [q, h] = net.step(p, obs, net.initial_hidden(3));
  EXPECT_EQ(q.row(0), q.row(1));
  EXPECT_NE(q.row(0), q.row(2));
  EXPECT_EQ(h.cols(), 8);
  // Only one parameter set exists regardless of how many rows are batched.
  EXPECT_EQ(p.entries().size(), 10u);
}

TEST(AgentNet, ZeroParametersGiveZeroQ) {
  AgentNet net({5, 4, 3});
  ParamStore p;
  Rng rng(2);
  net.init(p, rng);
  for (auto& [name, param] : p.entries()) param.value.setZero();
  Vector h = Vector::Constant(4, 0.6);
  auto [q, hn] = q_forward(net, p, Vector::Ones(5), h);
  EXPECT_TRUE(q.isZero(0.0));
  EXPECT_TRUE(hn.isApprox(Vector::Constant(4, 0.3)));
}

TEST(AgentNet, MatchesReferenceOverSequences) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    AgentNet net({7, 5, 4});
    ParamStore p;
    net.init(p, rng);
    std::vector<Matrix> seq;
    for (int t = 0; t < 6; ++t) seq.push_back(random_matrix(rng, 2, 7));
    const auto u = net.unroll(p, seq, false);
    for (Eigen::Index row = 0; row < 2; ++row) {
      Vector h = Vector::Zero(5);
      for (int t = 0; t < 6; ++t) {
        auto [q, hn] = ref_agent_step(p, seq[static_cast<std::size_t>(t)].row(row).transpose(), h);
        h = hn;
        for (int a = 0; a < 4; ++a) EXPECT_NEAR(u.q[static_cast<std::size_t>(t)](row, a), q[a], 1e-12);
      }
    }
  }
}

TEST(AgentNet, RejectsWrongObservationWidth) {
  AgentNet net({4, 3, 2});
  ParamStore p;
  Rng rng(4);
  net.init(p, rng);
  EXPECT_THROW(net.step(p, Matrix::Zero(1, 5), net.initial_hidden(1)), ConfigError);
  EXPECT_THROW(AgentNet({0, 3, 2}), ConfigError);
}

TEST(AgentNet, BackpropThroughTimeMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    AgentNet net({4, 6, 3});
    ParamStore p;
    net.init(p, rng);
    std::vector<Matrix> seq;
    for (int t = 0; t < 4; ++t) seq.push_back(random_matrix(rng, 3, 4));
    const Matrix target = random_matrix(rng, 3, 3);
    auto loss = [&](const ParamStore& s, Gradients* g) {
      const auto u = net.unroll(s, seq, g != nullptr);
      double l = 0.0;
      std::vector<Matrix> dq(seq.size());
      for (std::size_t t = 0; t < seq.size(); ++t) {
        if (t == 1) continue;  // a step without loss
        const Matrix diff = u.q[t] - target;
        l += diff.squaredNorm();
        dq[t] = 2.0 * diff;
      }
      if (g != nullptr) net.backward(s, u, dq, *g);
      return l;
    };
    Gradients g;
    loss(p, &g);
    EXPECT_LE(grad_check([&](const ParamStore& s) { return loss(s, nullptr); }, g, p), 1e-5);
  }
}

TEST(Phi, SoftmaxOverAvailableActions) {
  QValueVector q{Vector::Zero(4), {true, true, false, true}};
  q.values << 1.0, 2.0, 50.0, 0.0;
  const Vector d = phi(q);
  EXPECT_EQ(d[2], 0.0);
  EXPECT_NEAR(d.sum(), 1.0, 1e-15);
  EXPECT_NEAR(d[1] / d[0], std::exp(1.0), 1e-12);
  const Vector cold = phi(q, 0.01);
  EXPECT_GT(cold[1], 0.999);
}

TEST(SelectAction, GreedyAtZeroEpsilonRespectsMask) {
  Rng rng(6);
  QValueVector q{Vector::Zero(3), {true, false, true}};
  q.values << 0.1, 9.0, 0.2;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(select_action(q, 0.0, rng), 2);
  q.values << 0.2, 9.0, 0.2;
  EXPECT_EQ(select_action(q, 0.0, rng), 0);  // lowest index on ties
  QValueVector none{Vector::Zero(2), {false, false}};
  EXPECT_THROW(select_action(none, 0.0, rng), InvalidInput);
  EXPECT_THROW(select_action(none, 1.0, rng), InvalidInput);
}

TEST(SelectAction, UniformAtEpsilonOne) {
  Rng rng(7);
  QValueVector q{Vector::Zero(5), {true, true, false, true, true}};
  q.values << 1, 2, 3, 4, 5;
  std::vector<int> counts(5, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(select_action(q, 1.0, rng))] += 1;
  EXPECT_EQ(counts[2], 0);
  for (int a : {0, 1, 3, 4}) EXPECT_NEAR(counts[static_cast<std::size_t>(a)] / double(n), 0.25, 0.01);
}

TEST(SelectAction, GreedyShareAtSmallEpsilon) {
  Rng rng(8);
  QValueVector q{Vector::Zero(4), {true, true, true, true}};
  q.values << 0, 0, 1, 0;
  int greedy = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) greedy += select_action(q, 0.05, rng) == 2 ? 1 : 0;
  EXPECT_NEAR(greedy / double(n), 0.95 + 0.05 / 4, 0.005);
}

TEST(Epsilon, LinearAnnealThenHold) {
  const EpsilonSchedule s;
  EXPECT_EQ(epsilon_at(0, s), 1.0);
  EXPECT_NEAR(epsilon_at(25000, s), 0.525, 1e-12);
  EXPECT_EQ(epsilon_at(50000, s), 0.05);
  EXPECT_EQ(epsilon_at(10'000'000, s), 0.05);
  double prev = 2.0;
  for (long t = 0; t <= 60000; t += 1000) {
    const double e = epsilon_at(t, s);
    EXPECT_LE(e, prev);
    prev = e;
  }
  EXPECT_THROW(epsilon_at(0, EpsilonSchedule{1.0, 0.05, 0}), ConfigError);
}

TEST(Vdn, SumsAgentValues) {
  const std::vector<double> qs{1.5, -0.5, 2.0};
  EXPECT_EQ(vdn_mix(qs), 3.0);
  Mixer m({MixerKind::vdn, 3, 4, 32});
  ParamStore p;
  Rng rng(9);
  m.init(p, rng);
  EXPECT_TRUE(p.entries().empty());
  Matrix q(2, 3);
  q << 1.5, -0.5, 2.0, 0, 0, 1;
  const Vector out = m.forward(p, q, Matrix::Zero(2, 4));
  EXPECT_EQ(out[0], 3.0);
  EXPECT_EQ(out[1], 1.0);
}

void set(ParamStore& p, const std::string& name, std::initializer_list<double> vals) {
  Matrix& m = p.param(name).value;
  ASSERT_EQ(static_cast<std::size_t>(m.size()), vals.size()) << name;
  std::copy(vals.begin(), vals.end(), m.data());
}

TEST(Qmix, SingleAgentHandComputed) {
  Mixer m({MixerKind::qmix, 1, 1, 1});
  ParamStore p;
  Rng rng(10);
  m.init(p, rng);
  set(p, "mixer.hyper_w1.w", {-2.0});
  set(p, "mixer.hyper_w1.b", {0.0});
  set(p, "mixer.hyper_b1.w", {0.0});
  set(p, "mixer.hyper_b1.b", {0.5});
  set(p, "mixer.hyper_w2.w", {0.0});
  set(p, "mixer.hyper_w2.b", {-3.0});
  set(p, "mixer.value1.w", {1.0});
  set(p, "mixer.value1.b", {0.0});
  set(p, "mixer.value2.w", {2.0});
  set(p, "mixer.value2.b", {0.1});
  Vector s(1), q(1);
  s << 1.0;
  q << 1.0;
  EXPECT_NEAR(qmix_mix(m, p, q, s), 3.0 * 2.5 + 2.1, 1e-12);
  q << -1.0;
  EXPECT_NEAR(qmix_mix(m, p, q, s), 3.0 * std::expm1(-1.5) + 2.1, 1e-12);
}

// Loop-based reference of the hypernetwork mix.
double ref_qmix(const ParamStore& p, const Vector& q, const Vector& s, int embed) {
  auto affine = [&](const std::string& name, const Vector& in) {
    const Matrix& w = p.value("mixer." + name + ".w");
    const Matrix& b = p.value("mixer." + name + ".b");
    Vector out(w.rows());
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      out[o] = b(0, o);
      for (Eigen::Index i = 0; i < w.cols(); ++i) out[o] += w(o, i) * in[i];
    }
    return out;
  };
  const Vector w1 = affine("hyper_w1", s);
  const Vector b1 = affine("hyper_b1", s);
  const Vector w2 = affine("hyper_w2", s);
  const double v = affine("value2", affine("value1", s).cwiseMax(0.0))[0];
  double total = v;
  for (int e = 0; e < embed; ++e) {
    double pre = b1[e];
    for (Eigen::Index i = 0; i < q.size(); ++i) pre += q[i] * std::abs(w1[i * embed + e]);
    const double act = pre > 0 ? pre : std::exp(pre) - 1.0;
    total += std::abs(w2[e]) * act;
  }
  return total;
}

TEST(Qmix, MatchesReference) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Mixer m({MixerKind::qmix, 3, 5, 8});
    ParamStore p;
    m.init(p, rng);
    const Matrix qs = random_matrix(rng, 4, 3, 3.0);
    const Matrix st = random_matrix(rng, 4, 5);
    const Vector out = m.forward(p, qs, st);
    for (Eigen::Index r = 0; r < 4; ++r) {
      EXPECT_NEAR(out[r], ref_qmix(p, qs.row(r).transpose(), st.row(r).transpose(), 8), 1e-10);
    }
  }
}

TEST(Qmix, MonotoneInEveryAgentValue) {
  Rng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = rng.uniform_int(1, 5);
    Mixer m({MixerKind::qmix, n, 3, 8});
    ParamStore p;
    m.init(p, rng);
    const Vector s = random_matrix(rng, 3, 1, 2.0).col(0);
    Vector q = random_matrix(rng, n, 1, 5.0).col(0);
    const double base = qmix_mix(m, p, q, s);
    const int i = rng.uniform_int(0, n - 1);
    q[i] += rng.uniform(0.0, 3.0);
    EXPECT_GE(qmix_mix(m, p, q, s), base - 1e-12);
  }
}

TEST(Qmix, BackwardMatchesFiniteDifferences) {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    Mixer m({MixerKind::qmix, 3, 4, 6});
    ParamStore p;
    m.init(p, rng);
    const Matrix qs = random_matrix(rng, 5, 3, 2.0);
    const Matrix st = random_matrix(rng, 5, 4);
    const Vector target = random_matrix(rng, 5, 1).col(0);
    auto loss = [&](const ParamStore& s, Gradients* g, Matrix* dq) {
      Mixer::Cache c;
      const Vector diff = m.forward(s, qs, st, &c) - target;
      if (g != nullptr) *dq = m.backward(s, c, 2.0 * diff, *g);
      return diff.squaredNorm();
    };
    Gradients g;
    Matrix dq;
    loss(p, &g, &dq);
    EXPECT_LE(grad_check([&](const ParamStore& s) { return loss(s, nullptr, nullptr); }, g, p), 1e-5);
    // d loss / d qs by central differences.
    for (Eigen::Index r = 0; r < 5; ++r) {
      for (Eigen::Index i = 0; i < 3; ++i) {
        Matrix up = qs, down = qs;
        up(r, i) += 1e-6;
        down(r, i) -= 1e-6;
        const double num = ((m.forward(p, up, st) - target).squaredNorm() -
                            (m.forward(p, down, st) - target).squaredNorm()) /
                           2e-6;
        EXPECT_NEAR(dq(r, i), num, 1e-5 * std::max(1.0, std::abs(num)));
      }
    }
  }
}

TEST(Mixer, ShapeErrors) {
  Mixer m({MixerKind::qmix, 2, 3, 4});
  ParamStore p;
  Rng rng(14);
  m.init(p, rng);
  EXPECT_THROW(m.forward(p, Matrix::Zero(1, 3), Matrix::Zero(1, 3)), ConfigError);
  EXPECT_THROW(m.forward(p, Matrix::Zero(1, 2), Matrix::Zero(1, 4)), ConfigError);
  EXPECT_THROW(Mixer({MixerKind::vdn, 0, 1, 1}), ConfigError);
}

// Greedy per-agent actions maximize the mixed value over every joint action.
TEST(Igm, PerAgentArgmaxIsJointArgmax) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const bool use_qmix = trial % 2 == 1;
    const int n = rng.uniform_int(2, 3);
    const int k = rng.uniform_int(2, 4);
    Mixer m({use_qmix ? MixerKind::qmix : MixerKind::vdn, n, 3, 8});
    ParamStore p;
    m.init(p, rng);
    const Matrix q = random_matrix(rng, n, k, 3.0);
    const Matrix st = random_matrix(rng, 1, 3);
    Matrix greedy(1, n);
    for (int i = 0; i < n; ++i) greedy(0, i) = q.row(i).maxCoeff();
    const double best_greedy = m.forward(p, greedy, st)[0];
    double best = -1e300;
    std::vector<int> a(static_cast<std::size_t>(n), 0);
    for (;;) {
      Matrix joint(1, n);
      for (int i = 0; i < n; ++i) joint(0, i) = q(i, a[static_cast<std::size_t>(i)]);
      best = std::max(best, m.forward(p, joint, st)[0]);
      int i = 0;
      while (i < n && ++a[static_cast<std::size_t>(i)] == k) a[static_cast<std::size_t>(i++)] = 0;
      if (i == n) break;
    }
    EXPECT_NEAR(best_greedy, best, 1e-12);
  }
}

}  // namespace
}  // namespace kgmarl
