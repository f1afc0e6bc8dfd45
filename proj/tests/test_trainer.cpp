// Copyright 2026 The kgmarl Authors. Apache 2.0 License.

#include <gtest/gtest.h>

#include <cmath>

#include "kgmarl/trainer.hpp"
#include "oracles.hpp"

namespace kgmarl {
namespace {

std::string forage_rules_path() { return std::string(KGMARL_SOURCE_DIR) + "/configs/lbf_forage.rules"; }

// Small LBF run that trains for a handful of updates.
TrainConfig tiny_config() {
  TrainConfig c;
  c.env = "lbf";
  c.lbf.rows = 5;
  c.lbf.cols = 5;
  c.lbf.n_agents = 2;
  c.lbf.n_foods = 1;
  c.lbf.horizon = 15;
  c.hidden = 8;
  c.total_steps = 300;
  c.buffer_size = 50;
  c.batch_size = 4;
  c.test_interval = 100;
  c.test_episodes = 3;
  c.epsilon_anneal = 200;
  c.target_update_interval = 5;
  c.seed = 7;
  return c;
}

// Builds a synthetic episode with obs_dim 2 and state_dim 2.
Episode synthetic_episode(int n, int A, const std::vector<double>& rewards, const std::vector<std::vector<double>>& r_i,
                          std::uint64_t seed) {
  Rng rng(seed);
  Episode ep;
  ep.n_agents = n;
  ep.n_actions = A;
  const int T = static_cast<int>(rewards.size());
  for (int t = 0; t <= T; ++t) {
    Matrix o(n, 2);
    for (Eigen::Index k = 0; k < o.size(); ++k) o.data()[k] = rng.uniform(-1, 1);
    ep.obs.push_back(o);
    ep.avail.push_back(Matrix::Ones(n, A));
    Vector s(2);
    s << rng.uniform(-1, 1), rng.uniform(-1, 1);
    ep.state.push_back(s);
  }
  for (int t = 0; t < T; ++t) {
    std::vector<int> acts;
    for (int i = 0; i < n; ++i) acts.push_back(rng.uniform_int(0, A - 1));
    ep.actions.push_back(acts);
    ep.agent_dist.push_back(Matrix::Constant(n, A, 1.0 / A));
    ep.preference.push_back(Matrix::Zero(n, A));
    ep.rule.push_back(std::vector<int>(static_cast<std::size_t>(n), -1));
    Vector ri = Vector::Zero(n);
    for (int i = 0; i < n; ++i) ri[i] = r_i[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
    ep.intrinsic.push_back(ri);
    ep.reward_ex.push_back(rewards[static_cast<std::size_t>(t)]);
    ep.reward.push_back(rewards[static_cast<std::size_t>(t)]);
    ep.done.push_back(t == T - 1);
  }
  return ep;
}

// Network whose Q values equal the fc2 bias regardless of input.
ParamStore constant_q_params(const AgentNet& net, const std::vector<double>& bias) {
  ParamStore p;
  Rng rng(1);
  net.init(p, rng);
  for (auto& [name, param] : p.entries()) param.value.setZero();
  for (std::size_t a = 0; a < bias.size(); ++a) p.param("agent.fc2.b").value(0, static_cast<Eigen::Index>(a)) = bias[a];
  return p;
}

TEST(Collect, EmptyRulesGiveZeroIntrinsicAndUnshapedReward) {
  LbfEnv env(tiny_config().lbf);
  AgentNet net({env.obs_dim(), 8, env.n_actions()});
  ParamStore p;
  Rng rng(2);
  net.init(p, rng);
  Rng act(3);
  for (int k = 0; k < 20; ++k) {
    CollectOptions opt;
    opt.epsilon = 0.5;
    opt.lambda = 0.7;
    const Episode ep = collect_episode(env, net, p, KnowledgeSource(), opt, 100 + k, act, nullptr);
    ASSERT_GE(ep.length(), 1);
    EXPECT_LE(ep.length(), env.horizon());
    for (int t = 0; t < ep.length(); ++t) {
      const auto ts = static_cast<std::size_t>(t);
      EXPECT_TRUE(ep.intrinsic[ts].isZero(0.0));
      EXPECT_EQ(ep.reward[ts], ep.reward_ex[ts]);
      EXPECT_EQ(ep.done[ts], t == ep.length() - 1);
    }
    EXPECT_EQ(static_cast<int>(ep.obs.size()), ep.length() + 1);
  }
}

TEST(Collect, ShapedRewardMatchesIndependentRecomputation) {
  const TrainConfig cfg = tiny_config();
  LbfEnv env(cfg.lbf);
  const RuleSet rules = load_rules(forage_rules_path(), env);
  AgentNet net({env.obs_dim(), 8, env.n_actions()});
  ParamStore p;
  Rng rng(4);
  net.init(p, rng);
  Rng act(5);
  CollectOptions opt;
  opt.epsilon = 0.3;
  opt.lambda = 0.5;
  long fired = 0;
  for (int k = 0; k < 30; ++k) {
    const std::uint64_t seed = 900 + static_cast<std::uint64_t>(k);
    env.reset(seed);
    const LbfState initial = env.state();
    const Episode ep = collect_episode(env, net, p, KnowledgeSource(rules), opt, seed, act, nullptr);
    const auto replay = oracle::lbf_replay_rewards(initial, ep.actions);
    ASSERT_EQ(replay.size(), static_cast<std::size_t>(ep.length()));
    for (int t = 0; t < ep.length(); ++t) {
      const auto ts = static_cast<std::size_t>(t);
      EXPECT_NEAR(ep.reward_ex[ts], replay[ts], 1e-12);
      double sum = 0.0;
      for (int i = 0; i < ep.n_agents; ++i) {
        double expect = 0.0;
        if (ep.rule[ts][static_cast<std::size_t>(i)] >= 0) {
          fired += 1;
          expect = -(ep.preference[ts].row(i) - ep.agent_dist[ts].row(i)).norm();
        }
        EXPECT_NEAR(ep.intrinsic[ts][i], expect, 1e-12);
        sum += expect;
      }
      EXPECT_NEAR(ep.reward[ts], replay[ts] + 0.5 * sum / ep.n_agents, 1e-12);
    }
  }
  EXPECT_GT(fired, 0);
}

TEST(Collect, RandomKnowledgeKeepsFiringStepsButChangesWeights) {
  const TrainConfig cfg = tiny_config();
  LbfEnv env(cfg.lbf);
  const RuleSet rules = load_rules(forage_rules_path(), env);
  AgentNet net({env.obs_dim(), 8, env.n_actions()});
  ParamStore p;
  Rng rng(6);
  net.init(p, rng);
  Rng a1(7), a2(7), k(8);
  const Episode fixed = collect_episode(env, net, p, KnowledgeSource(rules), {}, 42, a1, nullptr);
  const Episode random = collect_episode(env, net, p, KnowledgeSource(rules, true), {}, 42, a2, &k);
  ASSERT_EQ(fixed.length(), random.length());
  bool differs = false;
  for (int t = 0; t < fixed.length(); ++t) {
    const auto ts = static_cast<std::size_t>(t);
    EXPECT_EQ(fixed.rule[ts], random.rule[ts]);
    differs |= !fixed.preference[ts].isApprox(random.preference[ts]);
  }
  EXPECT_TRUE(differs);
  Rng a3(7);
  EXPECT_THROW(collect_episode(env, net, p, KnowledgeSource(rules, true), {}, 42, a3, nullptr), ConfigError);
}

TEST(Losses, FixedPointHasZeroLossAndGradient) {
  AgentNet net({2, 8, 3});
  const ParamStore p = constant_q_params(net, {1.0, 0.5, 0.0});
  Mixer vdn({MixerKind::vdn, 2, 2, 32});
  // Greedy per-agent value is 1, so Q_tot at the greedy joint action is 2.
  Episode ep = synthetic_episode(2, 3, {2.0 - 0.99 * 2.0, 2.0}, {{0.01, 0.01}, {1.0, 1.0}}, 3);
  ep.actions = {{0, 0}, {0, 0}};
  const Episode* one[] = {&ep};
  const Batch b = make_batch(one);
  const LossResult r = compute_losses(b, net, vdn, p, p, LossConfig{}, true);
  EXPECT_NEAR(r.td, 0.0, 1e-24);
  EXPECT_NEAR(r.total, 0.0, 1e-24);
  for (const auto& [name, g] : r.grads.entries()) EXPECT_NEAR(g.norm(), 0.0, 1e-12) << name;
}

TEST(Losses, HandComputedTwoAgentOneStep) {
  AgentNet net({2, 8, 3});
  const ParamStore online = constant_q_params(net, {1.0, 0.5, 0.0});
  const ParamStore target = constant_q_params(net, {0.2, 0.8, -1.0});
  Mixer vdn({MixerKind::vdn, 2, 2, 32});
  Episode ep = synthetic_episode(2, 3, {1.0, 0.5}, {{-0.3, -0.1}, {0.0, -0.2}}, 4);
  ep.actions = {{0, 1}, {2, 2}};
  ep.avail[1](1, 1) = 0.0;  // agent 1 cannot take its target-greedy action at t=1
  const Episode* one[] = {&ep};
  const Batch b = make_batch(one);
  LossConfig cfg;
  cfg.lambda_k = 0.02;
  const LossResult r = compute_losses(b, net, vdn, online, target, cfg, false);

  // t=0: Q_tot = 1 + 0.5; y = 1 + 0.99 * (0.8 + 0.2)
  const double d0 = 1.5 - (1.0 + 0.99 * 1.0);
  // t=1 terminal: Q_tot = 0 + 0; y = 0.5
  const double d1 = 0.0 - 0.5;
  EXPECT_NEAR(r.td, (d0 * d0 + d1 * d1) / 2.0, 1e-14);
  // Agent 0: t=0 chosen 1.0, y = -0.3 + 0.99 * 0.8; t=1 chosen 0, y = 0.
  const double a00 = 1.0 - (-0.3 + 0.99 * 0.8), a01 = 0.0;
  // Agent 1: t=0 chosen 0.5, y = -0.1 + 0.99 * 0.2; t=1 chosen 0, y = -0.2.
  const double a10 = 0.5 - (-0.1 + 0.99 * 0.2), a11 = 0.2;
  const double l0 = (a00 * a00 + a01 * a01) / 2.0, l1 = (a10 * a10 + a11 * a11) / 2.0;
  EXPECT_NEAR(r.individual[0], l0, 1e-14);
  EXPECT_NEAR(r.individual[1], l1, 1e-14);
  EXPECT_NEAR(r.total, r.td + 0.02 * (l0 + l1), 1e-14);

  cfg.individual = Reduce::mean;
  EXPECT_NEAR(compute_losses(b, net, vdn, online, target, cfg, false).total, r.td + 0.02 * (l0 + l1) / 2.0, 1e-14);
}

TEST(Losses, SingleTransitionArithmetic) {
  AgentNet net({2, 8, 2});
  const ParamStore p = constant_q_params(net, {1.0, 0.0});
  Mixer vdn({MixerKind::vdn, 1, 2, 32});
  // Q = 1, R = 0, terminal: L_TD = 1. With r_i = -0.1: L_i = 1.21.
  Episode ep = synthetic_episode(1, 2, {0.0}, {{-0.1}}, 5);
  ep.actions = {{0}};
  const Episode* one[] = {&ep};
  const LossResult r = compute_losses(make_batch(one), net, vdn, p, p, LossConfig{}, false);
  EXPECT_NEAR(r.td, 1.0, 1e-15);
  EXPECT_NEAR(r.individual[0], 1.21, 1e-15);
  EXPECT_NEAR(r.total, 1.0 + 0.02 * 1.21, 1e-15);
}

class LossGradient : public ::testing::TestWithParam<MixerKind> {};

TEST_P(LossGradient, MatchesFiniteDifferences) {
  Rng rng(11);
  AgentNet net({2, 8, 3});
  Mixer mixer({GetParam(), 2, 2, 8});
  for (int trial = 0; trial < 3; ++trial) {
    ParamStore online, target;
    net.init(online, rng);
    mixer.init(online, rng);
    net.init(target, rng);
    mixer.init(target, rng);
    const Episode a = synthetic_episode(2, 3, {0.3, -0.2, 1.0}, {{-0.1, 0}, {0, -0.5}, {-0.2, -0.2}}, 20 + trial);
    const Episode b = synthetic_episode(2, 3, {1.0}, {{-0.4, -0.3}}, 40 + trial);
    const Episode* eps[] = {&a, &b};
    const Batch batch = make_batch(eps);
    LossConfig cfg;
    cfg.lambda_k = 0.5;  // large enough that the individual term matters
    const LossResult r = compute_losses(batch, net, mixer, online, target, cfg, true);
    const double err = grad_check(
        [&](const ParamStore& s) { return compute_losses(batch, net, mixer, s, target, cfg, false).total; }, r.grads,
        online);
    EXPECT_LE(err, 1e-5) << "trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(Mixers, LossGradient, ::testing::Values(MixerKind::vdn, MixerKind::qmix),
                         [](const auto& info) { return std::string(mixer_name(info.param)); });

TEST(Losses, PaddingDoesNotChangePerEpisodeTerms) {
  Rng rng(12);
  AgentNet net({2, 8, 3});
  Mixer mixer({MixerKind::qmix, 2, 2, 8});
  ParamStore online, target;
  net.init(online, rng);
  mixer.init(online, rng);
  net.init(target, rng);
  mixer.init(target, rng);
  const Episode longer = synthetic_episode(2, 3, {0.3, -0.2, 1.0, 0.0, 2.0}, {{0, 0}, {0, -0.5}, {-0.2, 0}, {0, 0}, {0, 0}}, 1);
  const Episode shorter = synthetic_episode(2, 3, {1.0, 0.1}, {{-0.4, -0.3}, {0, 0}}, 2);
  const LossConfig cfg;
  const Episode* only_long[] = {&longer};
  const Episode* only_short[] = {&shorter};
  const Episode* both[] = {&shorter, &longer};
  const LossResult rl = compute_losses(make_batch(only_long), net, mixer, online, target, cfg, true);
  const LossResult rs = compute_losses(make_batch(only_short), net, mixer, online, target, cfg, true);
  const LossResult rb = compute_losses(make_batch(both), net, mixer, online, target, cfg, true);
  EXPECT_EQ(rb.valid_steps, 7.0);
  EXPECT_NEAR(rb.td, (rl.td * 5 + rs.td * 2) / 7, 1e-12);
  EXPECT_NEAR(rb.total, (rl.total * 5 + rs.total * 2) / 7, 1e-12);
  for (const auto& [name, g] : rb.grads.entries()) {
    Matrix expect = Matrix::Zero(g.rows(), g.cols());
    if (const Matrix* x = rl.grads.find(name)) expect += *x * (5.0 / 7.0);
    if (const Matrix* x = rs.grads.find(name)) expect += *x * (2.0 / 7.0);
    EXPECT_LE((g - expect).cwiseAbs().maxCoeff(), 1e-12) << name;
  }
}

TEST(Batch, PaddingLayout) {
  const Episode a = synthetic_episode(2, 3, {1, 2, 3}, {{0, 0}, {0, 0}, {0, 0}}, 1);
  const Episode b = synthetic_episode(2, 3, {4}, {{0, 0}}, 2);
  const Episode* eps[] = {&a, &b};
  const Batch batch = make_batch(eps);
  EXPECT_EQ(batch.steps, 3);
  EXPECT_EQ(batch.obs.size(), 4u);
  EXPECT_EQ(batch.mask[0][1], 1.0);
  EXPECT_EQ(batch.mask[1][1], 0.0);
  EXPECT_EQ(batch.done[0][1], 1.0);
  EXPECT_EQ(batch.reward[2][0], 3.0);
  EXPECT_EQ(batch.avail[3].row(2).sum(), 1.0);
  EXPECT_EQ(batch.avail[3](2, 0), 1.0);
  EXPECT_TRUE(batch.obs[3].middleRows(2, 2).isZero(0.0));
  EXPECT_THROW(make_batch(std::span<const Episode* const>()), InvalidInput);
}

TEST(ReplayBuffer, FifoEvictionAndDistinctSamples) {
  ReplayBuffer buf(3);
  EXPECT_THROW(ReplayBuffer(0), ConfigError);
  for (int k = 0; k < 5; ++k) buf.insert(synthetic_episode(1, 2, {double(k)}, {{0}}, static_cast<std::uint64_t>(k)));
  EXPECT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.total_inserted(), 5u);
  EXPECT_EQ(buf.oldest().reward_ex[0], 2.0);
  EXPECT_FALSE(buf.can_sample(4));
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = buf.sample(3, rng);
    std::vector<double> seen;
    for (const Episode* e : s) seen.push_back(e->reward_ex[0]);
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(seen, (std::vector<double>{2, 3, 4}));
  }
  EXPECT_THROW(buf.sample(4, rng), InvalidInput);
}

TEST(Trainer, DeterministicForAFixedSeed) {
  TrainConfig cfg = tiny_config();
  cfg.rules = forage_rules_path();
  const TrainResult a = Trainer(cfg).run();
  const TrainResult b = Trainer(cfg).run();
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) EXPECT_EQ(a.metrics[i].dump(), b.metrics[i].dump());
  EXPECT_GT(a.updates, 0);
  for (const auto& [name, p] : a.params.entries()) EXPECT_EQ(p.value, b.params.value(name)) << name;
  cfg.seed = 8;
  const TrainResult c = Trainer(cfg).run();
  EXPECT_NE(a.params.value("agent.fc1.w"), c.params.value("agent.fc1.w"));
}

TEST(Trainer, EvaluationScheduleAndMetricFields) {
  const TrainConfig cfg = tiny_config();
  const TrainResult r = Trainer(cfg).run();
  ASSERT_GE(r.metrics.size(), 4u);
  EXPECT_EQ(r.metrics.front()["env_step"], 0);
  EXPECT_TRUE(r.metrics.front()["loss_td"].is_null());
  EXPECT_TRUE(r.metrics.front()["consistency"].is_null());
  EXPECT_GE(r.metrics.back()["env_step"].get<long>(), cfg.total_steps);
  for (const auto& m : r.metrics) {
    for (const char* k : {"env_step", "mean_return", "win_rate", "mean_ep_len", "loss_td", "loss_i_mean", "epsilon",
                          "consistency"}) {
      EXPECT_TRUE(m.contains(k)) << k;
    }
  }
}

TEST(Trainer, TargetSyncsOnlyOnInterval) {
  TrainConfig cfg = tiny_config();
  cfg.target_update_interval = 1'000'000;
  Trainer never(cfg);
  const ParamStore initial = never.online();
  never.run();
  for (const auto& [name, p] : never.target().entries()) EXPECT_EQ(p.value, initial.value(name)) << name;
  EXPECT_NE(never.online().value("agent.fc2.w"), initial.value("agent.fc2.w"));

  cfg.target_update_interval = 1;
  Trainer always(cfg);
  always.run();
  for (const auto& [name, p] : always.target().entries()) EXPECT_EQ(p.value, always.online().value(name)) << name;
}

TEST(Trainer, ZeroWeightsMatchNoKnowledge) {
  TrainConfig with = tiny_config();
  with.rules = forage_rules_path();
  with.lambda = 0.0;
  with.lambda_k = 0.0;
  TrainConfig without = tiny_config();
  without.ablation = Ablation::no_knowledge;
  const TrainResult a = Trainer(with).run();
  const TrainResult b = Trainer(without).run();
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i]["mean_return"], b.metrics[i]["mean_return"]);
    EXPECT_EQ(a.metrics[i]["loss_td"], b.metrics[i]["loss_td"]);
  }
  for (const auto& [name, p] : a.params.entries()) EXPECT_EQ(p.value, b.params.value(name)) << name;
}

TEST(Trainer, AblationsControlWeights) {
  TrainConfig cfg = tiny_config();
  cfg.rules = forage_rules_path();
  EXPECT_EQ(Trainer(cfg).lambda(), 0.5);
  cfg.ablation = Ablation::no_intrinsic;
  EXPECT_EQ(Trainer(cfg).lambda(), 0.0);
  EXPECT_EQ(Trainer(cfg).lambda_k(), 0.0);
  cfg.ablation = Ablation::no_knowledge;
  EXPECT_FALSE(Trainer(cfg).knowledge().active());
  cfg.ablation = Ablation::random_knowledge;
  EXPECT_TRUE(Trainer(cfg).knowledge().randomized());
}

TEST(Trainer, WritesRunArtifacts) {
  TrainConfig cfg = tiny_config();
  cfg.rules = forage_rules_path();
  cfg.dump_intrinsic = true;
  const auto dir = std::filesystem::temp_directory_path() / "kgmarl_trainer_artifacts";
  std::filesystem::remove_all(dir);
  Trainer(cfg).run(dir.string());
  for (const char* f : {"config.resolved", "metrics.jsonl", "intrinsic.jsonl", "model.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::ifstream in(dir / "config.resolved");
  std::stringstream ss;
  ss << in.rdbuf();
  const TrainConfig back = parse_config(ss.str());
  EXPECT_EQ(format_config(back), ss.str());
  ParamStore loaded = Trainer(cfg).online();
  load_checkpoint((dir / "model.ckpt").string(), loaded);
  EXPECT_NE(loaded.value("agent.fc1.w"), Trainer(cfg).online().value("agent.fc1.w"));
  std::filesystem::remove_all(dir);
}

TEST(Alignment, FractionWithinUnitInterval) {
  const TrainConfig cfg = tiny_config();
  Trainer t(cfg);
  const RuleSet rules = load_rules(forage_rules_path(), t.env());
  const AlignmentStats s = alignment_stats(t.env(), t.net(), t.online(), rules, 10, 3);
  EXPECT_GT(s.avg_steps, 0.0);
  EXPECT_LE(s.avg_steps, cfg.lbf.horizon);
  ASSERT_TRUE(s.consistency_fraction);
  EXPECT_GE(*s.consistency_fraction, 0.0);
  EXPECT_LE(*s.consistency_fraction, 1.0);
}

TEST(IntrinsicCsv, OneRowPerAgentStep) {
  std::vector<IntrinsicRecord> recs(4);
  recs[1].rule = "load_adjacent";
  recs[1].reward = -0.5;
  const std::string csv = intrinsic_csv(recs);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("0,0,load_adjacent,-0.5"), std::string::npos);
}

}  // namespace
}  // namespace kgmarl
