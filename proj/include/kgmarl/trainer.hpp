// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Episode collection, the training loop, greedy evaluation and behaviour
// alignment analysis.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgmarl/agent_net.hpp"
#include "kgmarl/checkpoint.hpp"
#include "kgmarl/config.hpp"
#include "kgmarl/env.hpp"
#include "kgmarl/env_lbf.hpp"
#include "kgmarl/env_skirmish.hpp"
#include "kgmarl/episode.hpp"
#include "kgmarl/intrinsic.hpp"
#include "kgmarl/learner.hpp"
#include "kgmarl/mixer.hpp"
#include "kgmarl/optim.hpp"
#include "kgmarl/rng.hpp"
#include "kgmarl/rules.hpp"
#include "kgmarl/tree.hpp"

namespace kgmarl {

// Seed streams derived from the run seed.
namespace stream {
inline constexpr std::uint64_t train_env = 1;
inline constexpr std::uint64_t action = 2;
inline constexpr std::uint64_t init = 3;
inline constexpr std::uint64_t replay = 4;
inline constexpr std::uint64_t random_knowledge = 5;
inline constexpr std::uint64_t eval_knowledge = 6;
inline constexpr std::uint64_t test_env = 1000;
inline constexpr std::uint64_t align_env = 2000;
}  // namespace stream

inline std::unique_ptr<Env> make_env(const TrainConfig& cfg) {
  if (cfg.env == "lbf") return std::make_unique<LbfEnv>(cfg.lbf);
  if (cfg.env == "skirmish") return std::make_unique<SkirmishEnv>(cfg.skirmish);
  throw ConfigError("unknown environment '" + cfg.env + "'");
}

inline RuleSet load_rules(const std::string& path, const Env& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open rule file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_rules(ss.str(), env.vocabulary(), env.feature_names());
  } catch (const RuleParseError& e) {
    throw ConfigError(path + ":" + std::to_string(e.line()) + ": " + e.what());
  }
}

/// Rule evaluation as seen by the learner. In randomized mode a firing rule
/// yields fresh random weights over the available actions instead of its own.
class KnowledgeSource {
 public:
  KnowledgeSource() = default;
  explicit KnowledgeSource(RuleSet rules, bool randomized = false)
      : rules_(std::move(rules)), randomized_(randomized), active_(true) {}

  bool active() const { return active_ && !rules_.empty(); }
  bool randomized() const { return randomized_; }
  const RuleSet& rules() const { return rules_; }

  std::optional<RuleMatch> evaluate(std::span<const double> features, const Mask& available, Rng* rng) const {
    if (!active()) return std::nullopt;
    auto m = rules_.match(features, available);
    if (!m || !randomized_) return m;
    if (rng == nullptr) throw ConfigError("randomized knowledge needs a random stream");
    Vector w = Vector::Zero(static_cast<Eigen::Index>(available.size()));
    for (std::size_t a = 0; a < available.size(); ++a) {
      if (available[a]) w[static_cast<Eigen::Index>(a)] = rng->uniform();
    }
    const double total = w.sum();
    if (total <= 0.0) return std::nullopt;
    m->distribution = w / total;
    return m;
  }

 private:
  RuleSet rules_;
  bool randomized_ = false;
  bool active_ = false;
};

struct CollectOptions {
  double epsilon = 0.0;
  double lambda = 0.5;
  double temperature = 1.0;
  bool random_policy = false;  // uniform over available actions, ignores Q
};

/// Optional per-step side outputs of collect_episode.
struct CollectTaps {
  std::vector<IntrinsicRecord>* intrinsic = nullptr;
  std::vector<nlohmann::json>* trajectory = nullptr;
  int episode_index = 0;
};

/// Runs one episode from `seed` and records everything the learner needs.
inline Episode collect_episode(Env& env, const AgentNet& net, const ParamStore& params, const KnowledgeSource& knowledge,
                               const CollectOptions& opt, std::uint64_t seed, Rng& action_rng, Rng* knowledge_rng,
                               const CollectTaps& taps = {}) {
  env.reset(seed);
  const int n = env.n_agents();
  const int A = env.n_actions();
  Episode ep;
  ep.n_agents = n;
  ep.n_actions = A;

  auto snapshot = [&] {
    Matrix o(n, env.obs_dim());
    Matrix av(n, A);
    for (int i = 0; i < n; ++i) {
      o.row(i) = env.observation(i).transpose();
      const Mask m = env.available_actions(i);
      for (int a = 0; a < A; ++a) av(i, a) = m[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
    }
    ep.obs.push_back(std::move(o));
    ep.avail.push_back(std::move(av));
    ep.state.push_back(env.global_state());
  };

  snapshot();
  Matrix hidden = net.initial_hidden(n);
  bool done = false;
  while (!done) {
    const auto t = ep.obs.size() - 1;
    auto [q, h] = net.step(params, ep.obs[t], hidden);
    hidden = std::move(h);

    std::vector<int> actions(static_cast<std::size_t>(n));
    std::vector<int> rule(static_cast<std::size_t>(n), -1);
    Matrix dist(n, A), pref = Matrix::Zero(n, A);
    Vector intr = Vector::Zero(n);
    for (int i = 0; i < n; ++i) {
      const Mask mask = row_mask(ep.avail[t], i);
      const Vector qi = q.row(i).transpose();
      const Vector d = softmax_masked(qi, mask, opt.temperature);
      dist.row(i) = d.transpose();
      const std::vector<double> feats = env.features(i);
      const auto m = knowledge.evaluate(feats, mask, knowledge_rng);
      if (m) {
        rule[static_cast<std::size_t>(i)] = m->rule;
        pref.row(i) = m->distribution.transpose();
        intr[i] = intrinsic_reward(m->distribution, d);
      }
      const double eps = opt.random_policy ? 1.0 : opt.epsilon;
      actions[static_cast<std::size_t>(i)] = select_action({qi, mask}, eps, action_rng);
      if (taps.trajectory != nullptr) {
        taps.trajectory->push_back(trajectory_record(taps.episode_index, static_cast<int>(t), i, env.feature_names(), feats,
                                                     mask, actions[static_cast<std::size_t>(i)], env.vocabulary()));
      }
      if (taps.intrinsic != nullptr) {
        IntrinsicRecord rec;
        rec.agent = i;
        rec.step = static_cast<int>(t);
        if (m) {
          rec.rule = knowledge.rules().rule(m->rule).name;
          rec.preference = m->distribution;
        }
        rec.agent_dist = d;
        rec.reward = intr[i];
        taps.intrinsic->push_back(std::move(rec));
      }
    }

    const StepOutcome out = env.step(actions);
    done = out.done;
    ep.actions.push_back(actions);
    ep.agent_dist.push_back(std::move(dist));
    ep.preference.push_back(std::move(pref));
    ep.rule.push_back(std::move(rule));
    ep.reward_ex.push_back(out.reward);
    ep.reward.push_back(shaped_team_reward(out.reward, std::span<const double>(intr.data(), intr.size()), opt.lambda));
    ep.intrinsic.push_back(std::move(intr));
    ep.done.push_back(done);
    ep.won = out.won;
    snapshot();
    if (ep.length() > env.horizon()) throw ConfigError("environment exceeded its horizon");
  }
  return ep;
}

/// Steps where a rule fired, and those where the chosen action had positive
/// preference weight.
struct ConsistencyCount {
  long fired = 0;
  long consistent = 0;
  std::optional<double> fraction() const {
    if (fired == 0) return std::nullopt;
    return static_cast<double>(consistent) / static_cast<double>(fired);
  }
};

inline void count_consistency(const Episode& ep, ConsistencyCount& c) {
  for (int t = 0; t < ep.length(); ++t) {
    const auto ts = static_cast<std::size_t>(t);
    for (int i = 0; i < ep.n_agents; ++i) {
      if (ep.rule[ts][static_cast<std::size_t>(i)] < 0) continue;
      c.fired += 1;
      if (ep.preference[ts](i, ep.actions[ts][static_cast<std::size_t>(i)]) > 0.0) c.consistent += 1;
    }
  }
}

struct EvalStats {
  double mean_return = 0.0;
  double win_rate = 0.0;
  double mean_ep_len = 0.0;
  ConsistencyCount consistency;
  std::vector<IntrinsicRecord> first_episode;  // intrinsic curve of the first test episode
  std::vector<double> returns;
};

/// Greedy (or uniformly random) episodes on the seeds derive_seed(base, offset + k).
inline EvalStats evaluate_policy(Env& env, const AgentNet& net, const ParamStore& params,
                                 const KnowledgeSource& knowledge, const CollectOptions& opt, int episodes,
                                 std::uint64_t base_seed, std::uint64_t offset, std::vector<nlohmann::json>* trajectory = nullptr) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  EvalStats s;
  Rng action_rng(derive_seed(base_seed, offset + 500000));
  Rng knowledge_rng(derive_seed(base_seed, stream::eval_knowledge));
  for (int k = 0; k < episodes; ++k) {
    CollectTaps taps;
    taps.intrinsic = k == 0 ? &s.first_episode : nullptr;
    taps.trajectory = trajectory;
    taps.episode_index = k;
    const Episode ep = collect_episode(env, net, params, knowledge, opt, derive_seed(base_seed, offset + static_cast<std::uint64_t>(k)),
                                       action_rng, &knowledge_rng, taps);
    s.returns.push_back(ep.extrinsic_return());
    s.mean_return += ep.extrinsic_return();
    s.win_rate += ep.won ? 1.0 : 0.0;
    s.mean_ep_len += ep.length();
    count_consistency(ep, s.consistency);
  }
  s.mean_return /= episodes;
  s.win_rate /= episodes;
  s.mean_ep_len /= episodes;
  return s;
}

struct AlignmentStats {
  double avg_steps = 0.0;
  std::optional<double> consistency_fraction;
  long rule_steps = 0;
};

/// Greedy episodes judged against `rules` (which never influence actions).
inline AlignmentStats alignment_stats(Env& env, const AgentNet& net, const ParamStore& params, const RuleSet& rules,
                                      int n_episodes, std::uint64_t seed, double temperature = 1.0) {
  CollectOptions opt;
  opt.epsilon = 0.0;
  opt.lambda = 0.0;
  opt.temperature = temperature;
  const EvalStats s = evaluate_policy(env, net, params, KnowledgeSource(rules), opt, n_episodes, seed, stream::align_env);
  return {s.mean_ep_len, s.consistency.fraction(), s.consistency.fired};
}

inline nlohmann::json intrinsic_json(const IntrinsicRecord& r) {
  nlohmann::json j;
  j["agent"] = r.agent;
  j["step"] = r.step;
  j["rule"] = r.rule ? nlohmann::json(*r.rule) : nlohmann::json(nullptr);
  j["reward"] = r.reward;
  return j;
}

/// CSV rows "step,agent,rule,reward", one per (agent, step).
inline std::string intrinsic_csv(const std::vector<IntrinsicRecord>& records) {
  std::ostringstream os;
  os << "step,agent,rule,reward\n";
  for (const auto& r : records) {
    os << r.step << ',' << r.agent << ',' << (r.rule ? *r.rule : std::string()) << ',' << format_number(r.reward) << '\n';
  }
  return os.str();
}

struct TrainResult {
  std::vector<nlohmann::json> metrics;
  ParamStore params;
  long env_steps = 0;
  long episodes = 0;
  long updates = 0;
};

/// Owns the networks, replay buffer and optimizer state of one run.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    validate(cfg_);
    env_ = make_env(cfg_);
    test_env_ = make_env(cfg_);
    net_ = AgentNet({env_->obs_dim(), cfg_.hidden, env_->n_actions()});
    mixer_ = Mixer({cfg_.mixer, env_->n_agents(), env_->state_dim(), cfg_.mixing_embed});
    if (cfg_.knowledge_active()) {
      knowledge_ = KnowledgeSource(load_rules(cfg_.rules, *env_), cfg_.ablation == Ablation::random_knowledge);
    }
    Rng init_rng(derive_seed(cfg_.seed, stream::init));
    net_.init(online_, init_rng);
    mixer_.init(online_, init_rng);
    target_ = online_;
  }

  const TrainConfig& config() const { return cfg_; }
  const AgentNet& net() const { return net_; }
  const Mixer& mixer() const { return mixer_; }
  const ParamStore& online() const { return online_; }
  const ParamStore& target() const { return target_; }
  const KnowledgeSource& knowledge() const { return knowledge_; }
  Env& env() { return *env_; }

  double lambda() const { return knowledge_.active() ? cfg_.effective_lambda() : 0.0; }
  double lambda_k() const { return knowledge_.active() ? cfg_.effective_lambda_k() : 0.0; }

  /// Runs the whole schedule. With a non-empty out_dir, writes metrics.jsonl,
  /// intrinsic.jsonl, config.resolved and model.ckpt there.
  TrainResult run(const std::string& out_dir = "") {
    namespace fs = std::filesystem;
    std::ofstream metrics_out, intrinsic_out;
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "config.resolved") << format_config(cfg_);
      metrics_out.open(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
      if (cfg_.dump_intrinsic) intrinsic_out.open(fs::path(out_dir) / "intrinsic.jsonl", std::ios::trunc);
    }

    const long total = cfg_.resolved_total_steps();
    const long interval = cfg_.resolved_test_interval();
    const EpsilonSchedule schedule{cfg_.epsilon_start, cfg_.epsilon_end, cfg_.epsilon_anneal};
    const RmsPropConfig rms{cfg_.lr, cfg_.rms_decay, cfg_.rms_eps};
    LossConfig loss_cfg;
    loss_cfg.gamma = cfg_.gamma;
    loss_cfg.lambda_k = lambda_k();
    loss_cfg.individual = cfg_.loss_i_mean ? Reduce::mean : Reduce::sum;
    loss_cfg.recompute_intrinsic = cfg_.recompute_intrinsic;
    loss_cfg.lambda = lambda();
    loss_cfg.temperature = cfg_.temperature;

    ReplayBuffer buffer(static_cast<std::size_t>(cfg_.buffer_size));
    Rng action_rng(derive_seed(cfg_.seed, stream::action));
    Rng replay_rng(derive_seed(cfg_.seed, stream::replay));
    Rng knowledge_rng(derive_seed(cfg_.seed, stream::random_knowledge));
    const std::uint64_t env_base = derive_seed(cfg_.seed, stream::train_env);

    TrainResult res;
    long next_test = 0;
    double td_sum = 0.0, li_sum = 0.0;
    long loss_count = 0;

    auto log_eval = [&] {
      CollectOptions opt;
      opt.epsilon = 0.0;
      opt.lambda = lambda();
      opt.temperature = cfg_.temperature;
      const EvalStats s = evaluate_policy(*test_env_, net_, online_, knowledge_, opt, cfg_.test_episodes, cfg_.seed,
                                          stream::test_env);
      nlohmann::json rec;
      rec["env_step"] = res.env_steps;
      rec["mean_return"] = s.mean_return;
      rec["win_rate"] = s.win_rate;
      rec["mean_ep_len"] = s.mean_ep_len;
      rec["loss_td"] = loss_count > 0 ? nlohmann::json(td_sum / loss_count) : nlohmann::json(nullptr);
      rec["loss_i_mean"] = loss_count > 0 ? nlohmann::json(li_sum / loss_count) : nlohmann::json(nullptr);
      rec["epsilon"] = epsilon_at(res.env_steps, schedule);
      const auto c = s.consistency.fraction();
      rec["consistency"] = c ? nlohmann::json(*c) : nlohmann::json(nullptr);
      td_sum = li_sum = 0.0;
      loss_count = 0;
      if (metrics_out.is_open()) metrics_out << rec.dump() << '\n' << std::flush;
      if (intrinsic_out.is_open()) {
        for (const auto& r : s.first_episode) {
          nlohmann::json j = intrinsic_json(r);
          j["env_step"] = res.env_steps;
          intrinsic_out << j.dump() << '\n';
        }
        intrinsic_out.flush();
      }
      res.metrics.push_back(std::move(rec));
    };

    while (res.env_steps < total) {
      if (res.env_steps >= next_test) {
        log_eval();
        next_test += interval * ((res.env_steps - next_test) / interval + 1);
      }
      CollectOptions opt;
      opt.epsilon = epsilon_at(res.env_steps, schedule);
      opt.lambda = lambda();
      opt.temperature = cfg_.temperature;
      Episode ep = collect_episode(*env_, net_, online_, knowledge_, opt,
                                   derive_seed(env_base, static_cast<std::uint64_t>(res.episodes)), action_rng,
                                   &knowledge_rng);
      res.env_steps += ep.length();
      res.episodes += 1;
      buffer.insert(std::move(ep));

      if (!buffer.can_sample(static_cast<std::size_t>(cfg_.batch_size))) continue;
      const auto picked = buffer.sample(static_cast<std::size_t>(cfg_.batch_size), replay_rng);
      const Batch batch = make_batch(picked);
      LossResult loss = compute_losses(batch, net_, mixer_, online_, target_, loss_cfg, true);
      double li = 0.0;
      for (double l : loss.individual) li += l;
      li /= static_cast<double>(loss.individual.size());
      if (!std::isfinite(loss.total) || !loss.grads.all_finite()) {
        dump_abort(out_dir, res, loss);
        throw TrainingAbort("non-finite loss at env step " + std::to_string(res.env_steps) + " (update " +
                            std::to_string(res.updates) + ")");
      }
      if (cfg_.grad_norm_clip > 0.0) clip_grad_norm(loss.grads, cfg_.grad_norm_clip);
      rmsprop_step(online_, loss.grads, rms);
      res.updates += 1;
      td_sum += loss.td;
      li_sum += li;
      loss_count += 1;
      if (res.updates % cfg_.target_update_interval == 0) target_.copy_values_from(online_);
    }
    log_eval();

    if (!out_dir.empty()) save_checkpoint((std::filesystem::path(out_dir) / "model.ckpt").string(), online_);
    res.params = online_;
    return res;
  }

 private:
  void dump_abort(const std::string& out_dir, const TrainResult& res, const LossResult& loss) const {
    if (out_dir.empty()) return;
    nlohmann::json j;
    j["env_step"] = res.env_steps;
    j["updates"] = res.updates;
    j["loss_td"] = std::isfinite(loss.td) ? nlohmann::json(loss.td) : nlohmann::json(std::to_string(loss.td));
    j["loss_total"] = std::isfinite(loss.total) ? nlohmann::json(loss.total) : nlohmann::json(std::to_string(loss.total));
    nlohmann::json grads = nlohmann::json::object();
    for (const auto& [name, g] : loss.grads.entries()) {
      const bool finite = g.allFinite();
      grads[name] = {{"finite", finite}, {"norm", finite ? g.norm() : 0.0}};
    }
    j["gradients"] = grads;
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, p] : online_.entries()) params[name] = {{"finite", p.value.allFinite()}, {"max_abs", p.value.cwiseAbs().maxCoeff()}};
    j["parameters"] = params;
    std::ofstream((std::filesystem::path(out_dir) / "abort.json").string()) << j.dump(2) << '\n';
  }

  TrainConfig cfg_;
  std::unique_ptr<Env> env_;
  std::unique_ptr<Env> test_env_;
  AgentNet net_;
  Mixer mixer_;
  KnowledgeSource knowledge_;
  ParamStore online_;
  ParamStore target_;
};

/// Final test return of a metrics log: mean of the last `tail` evaluations.
inline double final_return(const std::vector<nlohmann::json>& metrics, std::size_t tail = 5) {
  if (metrics.empty()) throw InvalidInput("final_return: empty metrics log");
  const std::size_t k = std::min(tail, metrics.size());
  double s = 0.0;
  for (std::size_t i = metrics.size() - k; i < metrics.size(); ++i) s += metrics[i].at("mean_return").get<double>();
  return s / static_cast<double>(k);
}

}  // namespace kgmarl
