// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// The `light` command line. Kept in a header so tests can drive it in-process.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kgmarl/config.hpp"
#include "kgmarl/trainer.hpp"
#include "kgmarl/tree.hpp"

namespace kgmarl {

/// Environment variable naming the root for relative output directories.
inline constexpr const char* kOutputRootVar = "KGMARL_OUTPUT_ROOT";

/// "3", "1..5" or "1,4,9".
inline std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  auto num = [&](std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw ConfigError("bad seed '" + std::string(s) + "'");
    return v;
  };
  std::string_view s = text;
  if (auto dots = s.find(".."); dots != std::string_view::npos) {
    const auto lo = num(s.substr(0, dots));
    const auto hi = num(s.substr(dots + 2));
    if (hi < lo) throw ConfigError("seed range '" + text + "' is empty");
    if (hi - lo >= 10000) throw ConfigError("seed range '" + text + "' is too long");
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    out.push_back(num(s.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Loads a config, applies overrides and makes the rule path absolute so the
/// resolved snapshot is location independent.
inline TrainConfig resolve_config(const std::string& path, const std::vector<std::string>& sets,
                                  const std::string& ablate, const std::string& mixer) {
  namespace fs = std::filesystem;
  TrainConfig cfg = parse_config(read_file(path));
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, std::string(trim(std::string_view(kv).substr(0, eq))),
                  std::string(trim(std::string_view(kv).substr(eq + 1))));
  }
  if (!ablate.empty()) apply_setting(cfg, "knowledge.ablation", ablate);
  if (!mixer.empty()) apply_setting(cfg, "net.mixer", mixer);
  if (!cfg.rules.empty()) {
    fs::path r(cfg.rules);
    if (r.is_relative() && !fs::exists(r)) r = fs::path(path).parent_path() / r;
    cfg.rules = fs::absolute(r).lexically_normal().string();
  }
  validate(cfg);
  return cfg;
}

inline std::string output_dir_for(const std::string& dir) {
  namespace fs = std::filesystem;
  const char* root = std::getenv(kOutputRootVar);
  if (root != nullptr && *root != '\0' && fs::path(dir).is_relative()) return (fs::path(root) / dir).string();
  return dir;
}

struct LoadedModel {
  std::unique_ptr<Env> env;
  AgentNet net;
  ParamStore params;
};

inline LoadedModel load_model(const TrainConfig& cfg, const std::string& checkpoint) {
  LoadedModel m;
  m.env = make_env(cfg);
  m.net = AgentNet({m.env->obs_dim(), cfg.hidden, m.env->n_actions()});
  Mixer mixer({cfg.mixer, m.env->n_agents(), m.env->state_dim(), cfg.mixing_embed});
  Rng rng(derive_seed(cfg.seed, stream::init));
  m.net.init(m.params, rng);
  mixer.init(m.params, rng);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, m.params);
  return m;
}

}  // namespace detail

/// Entry point; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"light: knowledge-guided cooperative multi-agent Q-learning"};
  app.require_subcommand(1);

  std::string config_path, seeds, ablate, mixer, out_override, checkpoint, policy = "greedy", dump, rules_path, csv_path,
      input_path;
  std::vector<std::string> sets;
  int episodes = 0, episode_index = 0;
  TreeConfig tree;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_path, "config file")->required();
    c->add_option("--set", sets, "override key=value (section.key)");
    c->add_option("--ablate", ablate, "none|no_knowledge|no_intrinsic|random_knowledge");
    c->add_option("--mixer", mixer, "vdn|qmix");
  };

  auto* train = app.add_subcommand("train", "train one run per seed");
  add_common(train);
  train->add_option("--seed", seeds, "seed, range a..b, or list a,b,c");
  train->add_option("--out", out_override, "output directory (default: output.dir)");

  auto* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint (omit for freshly initialized weights)");
  eval->add_option("--episodes", episodes, "episodes (default: train.test_episodes)");
  eval->add_option("--policy", policy, "greedy|random")->check(CLI::IsMember({"greedy", "random"}));
  eval->add_option("--dump", dump, "write per-step trajectory records as JSON lines");

  auto* align = app.add_subcommand("align", "behaviour alignment against a rule file");
  add_common(align);
  align->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  align->add_option("--rules", rules_path, "rule file (default: knowledge.rules)");
  align->add_option("--episodes", episodes, "episodes (default 100)");

  auto* curves = app.add_subcommand("curves", "per-agent intrinsic rewards of one test episode as CSV");
  add_common(curves);
  curves->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  curves->add_option("--out", csv_path, "CSV path (default: stdout)");
  curves->add_option("--episode", episode_index, "test episode index");

  auto* extract = app.add_subcommand("extract-rules", "fit a decision tree to a trajectory log and emit rules");
  add_common(extract);
  extract->add_option("--input", input_path, "trajectory JSON lines")->required();
  extract->add_option("--out", csv_path, "rule file to write")->required();
  extract->add_option("--max-depth", tree.max_depth);
  extract->add_option("--min-leaf", tree.min_leaf);
  extract->add_option("--min-purity", tree.min_purity);
  extract->add_option("--min-support", tree.min_support);
  extract->add_option("--min-gain", tree.min_gain);

  auto* check = app.add_subcommand("validate-config", "parse a config and print the resolved form");
  add_common(check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const TrainConfig base = detail::resolve_config(config_path, sets, ablate, mixer);

    if (check->parsed()) {
      if (!base.rules.empty()) {
        const auto env = make_env(base);
        const RuleSet rs = load_rules(base.rules, *env);
        err << "rules: " << rs.size() << " loaded from " << base.rules << '\n';
      }
      out << format_config(base);
      return 0;
    }

    if (train->parsed()) {
      const auto seed_list = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : parse_seed_list(seeds);
      const std::string root = detail::output_dir_for(out_override.empty() ? base.output_dir : out_override);
      for (const auto s : seed_list) {
        TrainConfig cfg = base;
        cfg.seed = s;
        cfg.output_dir = seed_list.size() > 1 ? (std::filesystem::path(root) / ("seed" + std::to_string(s))).string() : root;
        Trainer trainer(cfg);
        const TrainResult r = trainer.run(cfg.output_dir);
        out << "seed " << s << ": " << r.env_steps << " env steps, " << r.updates << " updates, final return "
            << format_number(final_return(r.metrics)) << " -> " << cfg.output_dir << '\n';
      }
      return 0;
    }

    auto model = detail::load_model(base, checkpoint);

    if (eval->parsed()) {
      CollectOptions opt;
      opt.random_policy = policy == "random";
      opt.temperature = base.temperature;
      opt.lambda = 0.0;
      std::vector<nlohmann::json> traj;
      const EvalStats s = evaluate_policy(*model.env, model.net, model.params, KnowledgeSource{}, opt,
                                          episodes > 0 ? episodes : base.test_episodes, base.seed, stream::test_env,
                                          dump.empty() ? nullptr : &traj);
      if (!dump.empty()) {
        std::ofstream d(dump);
        if (!d) throw ConfigError("cannot write '" + dump + "'");
        for (const auto& j : traj) d << j.dump() << '\n';
      }
      out << "episodes " << s.returns.size() << " mean_return " << format_number(s.mean_return) << " win_rate "
          << format_number(s.win_rate) << " mean_ep_len " << format_number(s.mean_ep_len) << '\n';
      return 0;
    }

    if (align->parsed()) {
      const std::string path = rules_path.empty() ? base.rules : rules_path;
      if (path.empty()) throw ConfigError("align needs --rules or knowledge.rules");
      const RuleSet rs = load_rules(path, *model.env);
      const AlignmentStats a = alignment_stats(*model.env, model.net, model.params, rs, episodes > 0 ? episodes : 100,
                                               base.seed, base.temperature);
      out << "avg_steps " << format_number(a.avg_steps) << " consistency "
          << (a.consistency_fraction ? format_number(*a.consistency_fraction) : std::string("absent")) << " rule_steps "
          << a.rule_steps << '\n';
      return 0;
    }

    if (curves->parsed()) {
      KnowledgeSource ks;
      if (base.knowledge_active()) ks = KnowledgeSource(load_rules(base.rules, *model.env), base.ablation == Ablation::random_knowledge);
      CollectOptions opt;
      opt.temperature = base.temperature;
      opt.lambda = base.effective_lambda();
      std::vector<IntrinsicRecord> records;
      Rng action_rng(0), knowledge_rng(derive_seed(base.seed, stream::eval_knowledge));
      CollectTaps taps;
      taps.intrinsic = &records;
      collect_episode(*model.env, model.net, model.params, ks, opt,
                      derive_seed(base.seed, stream::test_env + static_cast<std::uint64_t>(episode_index)), action_rng,
                      &knowledge_rng, taps);
      const std::string csv = intrinsic_csv(records);
      if (csv_path.empty()) {
        out << csv;
      } else {
        std::ofstream(csv_path) << csv;
        out << records.size() << " rows -> " << csv_path << '\n';
      }
      return 0;
    }

    if (extract->parsed()) {
      std::ifstream in(input_path);
      if (!in) throw InvalidInput("cannot open '" + input_path + "'");
      const auto records = parse_json_lines(in);
      const ActionDataset data = dataset_from_records(records, model.env->vocabulary());
      const ExtractionResult r = extract_rules(data, tree);
      const std::string text = format_rules(r.rules);
      parse_rules(text, model.env->vocabulary(), model.env->feature_names());  // must round-trip
      std::ofstream o(csv_path);
      if (!o) throw ConfigError("cannot write '" + csv_path + "'");
      o << text;
      for (const auto& leaf : r.leaves) {
        if (!leaf.emitted) continue;
        out << leaf.rule << " support " << leaf.support << " purity " << format_number(leaf.purity) << '\n';
      }
      if (r.rules.empty()) err << "warning: no leaf reached min_support and min_purity; rule file is empty\n";
      char cov[32];
      std::snprintf(cov, sizeof cov, "%.2f", r.coverage);
      out << "rules " << r.rules.size() << " coverage " << cov << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace kgmarl
