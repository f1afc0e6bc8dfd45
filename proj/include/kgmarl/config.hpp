// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Run configuration in a sectioned key = value format:
//
//   [env]
//   name = lbf
//   [lbf]
//   n_agents = 3
//   [train]
//   seed = 1
//
// Every key is declared in one table that drives parsing, --set overrides and
// the resolved snapshot, so the three can never disagree.

#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kgmarl/env_lbf.hpp"
#include "kgmarl/env_skirmish.hpp"
#include "kgmarl/errors.hpp"
#include "kgmarl/mixer.hpp"
#include "kgmarl/rules.hpp"

namespace kgmarl {

enum class Ablation { none, no_knowledge, no_intrinsic, random_knowledge };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::no_knowledge:
      return "no_knowledge";
    case Ablation::no_intrinsic:
      return "no_intrinsic";
    case Ablation::random_knowledge:
      return "random_knowledge";
    case Ablation::none:
      break;
  }
  return "none";
}

struct TrainConfig {
  std::string env = "lbf";
  LbfConfig lbf;
  SkirmishConfig skirmish;

  int hidden = 64;
  MixerKind mixer = MixerKind::vdn;
  int mixing_embed = 32;

  long total_steps = 0;  // 0: 200000 for lbf, 500000 for skirmish
  int buffer_size = 5000;
  int batch_size = 32;
  double lr = 0.0005;
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  long epsilon_anneal = 50000;
  int target_update_interval = 200;
  long test_interval = 0;  // 0: 1000 for lbf, 2000 for skirmish
  int test_episodes = 32;
  double rms_decay = 0.99;
  double rms_eps = 1e-5;
  double grad_norm_clip = 10.0;
  std::uint64_t seed = 1;
  bool loss_i_mean = false;

  std::string rules;  // rule file path; empty for none
  double lambda = 0.5;
  double lambda_k = 0.02;
  double temperature = 1.0;
  Ablation ablation = Ablation::none;
  bool recompute_intrinsic = false;

  std::string output_dir = "runs/default";
  bool dump_intrinsic = true;

  long resolved_total_steps() const { return total_steps > 0 ? total_steps : (env == "lbf" ? 200000 : 500000); }
  long resolved_test_interval() const { return test_interval > 0 ? test_interval : (env == "lbf" ? 1000 : 2000); }
  /// Knowledge module participates at all (rules loaded and not ablated away).
  bool knowledge_active() const { return !rules.empty() && ablation != Ablation::no_knowledge; }
  double effective_lambda() const { return ablation == Ablation::no_intrinsic ? 0.0 : lambda; }
  double effective_lambda_k() const { return ablation == Ablation::no_intrinsic ? 0.0 : lambda_k; }
};

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* b = v.data();
  const char* e = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || ptr != e) throw ConfigError(key + ": '" + v + "' is not a valid number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

inline std::string fmt(double v) { return format_number(v); }

struct Field {
  std::string key;  // section.name
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Field int_field(std::string key, T TrainConfig::*member, T lo) {
  return {key,
          [key, member, lo](TrainConfig& c, const std::string& v) {
            const T x = parse_number<T>(key, v);
            if (x < lo) throw ConfigError(key + ": must be >= " + std::to_string(lo));
            c.*member = x;
          },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

template <typename S, typename T>
Field nested_int(std::string key, S TrainConfig::*outer, T S::*member, T lo) {
  return {key,
          [key, outer, member, lo](TrainConfig& c, const std::string& v) {
            const T x = parse_number<T>(key, v);
            if (x < lo) throw ConfigError(key + ": must be >= " + std::to_string(lo));
            (c.*outer).*member = x;
          },
          [outer, member](const TrainConfig& c) { return std::to_string((c.*outer).*member); }};
}

template <typename S>
Field nested_real(std::string key, S TrainConfig::*outer, double S::*member, double lo) {
  return {key,
          [key, outer, member, lo](TrainConfig& c, const std::string& v) {
            const double x = parse_number<double>(key, v);
            if (!(x >= lo)) throw ConfigError(key + ": must be >= " + fmt(lo));
            (c.*outer).*member = x;
          },
          [outer, member](const TrainConfig& c) { return fmt((c.*outer).*member); }};
}

template <typename S>
Field nested_bool(std::string key, S TrainConfig::*outer, bool S::*member) {
  return {key, [key, outer, member](TrainConfig& c, const std::string& v) { (c.*outer).*member = parse_bool(key, v); },
          [outer, member](const TrainConfig& c) { return std::string((c.*outer).*member ? "true" : "false"); }};
}

inline Field real_field(std::string key, double TrainConfig::*member, double lo, double hi, bool lo_open = false) {
  return {key,
          [=](TrainConfig& c, const std::string& v) {
            const double x = parse_number<double>(key, v);
            if (!(lo_open ? x > lo : x >= lo) || !(x <= hi)) {
              throw ConfigError(key + ": " + v + " outside " + (lo_open ? "(" : "[") + fmt(lo) + ", " + fmt(hi) + "]");
            }
            c.*member = x;
          },
          [member](const TrainConfig& c) { return fmt(c.*member); }};
}

inline Field bool_field(std::string key, bool TrainConfig::*member) {
  return {key, [key, member](TrainConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

inline Field string_field(std::string key, std::string TrainConfig::*member) {
  return {key, [member](TrainConfig& c, const std::string& v) { c.*member = v; },
          [member](const TrainConfig& c) { return c.*member; }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    constexpr double inf = 1e300;
    std::vector<Field> f;
    f.push_back({"env.name",
                 [](TrainConfig& c, const std::string& v) {
                   if (v != "lbf" && v != "skirmish") throw ConfigError("env.name: expected lbf or skirmish, got '" + v + "'");
                   c.env = v;
                 },
                 [](const TrainConfig& c) { return c.env; }});

    f.push_back(nested_int("lbf.rows", &TrainConfig::lbf, &LbfConfig::rows, 5));
    f.push_back(nested_int("lbf.cols", &TrainConfig::lbf, &LbfConfig::cols, 5));
    f.push_back(nested_int("lbf.n_agents", &TrainConfig::lbf, &LbfConfig::n_agents, 2));
    f.push_back(nested_int("lbf.n_foods", &TrainConfig::lbf, &LbfConfig::n_foods, 1));
    f.push_back(nested_int("lbf.horizon", &TrainConfig::lbf, &LbfConfig::horizon, 1));
    f.push_back(nested_int("lbf.max_agent_level", &TrainConfig::lbf, &LbfConfig::max_agent_level, 1));
    f.push_back(nested_int("lbf.sight", &TrainConfig::lbf, &LbfConfig::sight, 1));
    f.push_back(nested_bool("lbf.strict_threshold", &TrainConfig::lbf, &LbfConfig::strict_threshold));
    f.push_back(nested_bool("lbf.normalize_reward", &TrainConfig::lbf, &LbfConfig::normalize_reward));

    f.push_back(nested_int("skirmish.width", &TrainConfig::skirmish, &SkirmishConfig::width, 3));
    f.push_back(nested_int("skirmish.height", &TrainConfig::skirmish, &SkirmishConfig::height, 1));
    f.push_back(nested_int("skirmish.n_allies", &TrainConfig::skirmish, &SkirmishConfig::n_allies, 1));
    f.push_back(nested_int("skirmish.n_enemies", &TrainConfig::skirmish, &SkirmishConfig::n_enemies, 1));
    f.push_back(nested_int("skirmish.horizon", &TrainConfig::skirmish, &SkirmishConfig::horizon, 1));
    f.push_back(nested_int("skirmish.spawn_band", &TrainConfig::skirmish, &SkirmishConfig::spawn_band, 1));
    f.push_back(nested_int("skirmish.sight", &TrainConfig::skirmish, &SkirmishConfig::sight, 1));
    f.push_back(nested_real("skirmish.ally_hp", &TrainConfig::skirmish, &SkirmishConfig::ally_hp, 1e-9));
    f.push_back(nested_real("skirmish.ally_damage", &TrainConfig::skirmish, &SkirmishConfig::ally_damage, 0.0));
    f.push_back(nested_int("skirmish.ally_range", &TrainConfig::skirmish, &SkirmishConfig::ally_range, 0));
    f.push_back(nested_real("skirmish.enemy_hp", &TrainConfig::skirmish, &SkirmishConfig::enemy_hp, 1e-9));
    f.push_back(nested_real("skirmish.enemy_damage", &TrainConfig::skirmish, &SkirmishConfig::enemy_damage, 0.0));
    f.push_back(nested_int("skirmish.enemy_range", &TrainConfig::skirmish, &SkirmishConfig::enemy_range, 0));
    f.push_back(nested_bool("skirmish.dense_reward", &TrainConfig::skirmish, &SkirmishConfig::dense_reward));

    f.push_back(int_field("net.hidden", &TrainConfig::hidden, 1));
    f.push_back({"net.mixer",
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "vdn") c.mixer = MixerKind::vdn;
                   else if (v == "qmix") c.mixer = MixerKind::qmix;
                   else throw ConfigError("net.mixer: expected vdn or qmix, got '" + v + "'");
                 },
                 [](const TrainConfig& c) { return std::string(mixer_name(c.mixer)); }});
    f.push_back(int_field("net.mixing_embed", &TrainConfig::mixing_embed, 1));

    f.push_back(int_field("train.total_steps", &TrainConfig::total_steps, 0L));
    f.push_back(int_field("train.buffer_size", &TrainConfig::buffer_size, 1));
    f.push_back(int_field("train.batch_size", &TrainConfig::batch_size, 1));
    f.push_back(real_field("train.lr", &TrainConfig::lr, 0.0, inf, true));
    f.push_back(real_field("train.gamma", &TrainConfig::gamma, 0.0, 1.0));
    f.push_back(real_field("train.epsilon_start", &TrainConfig::epsilon_start, 0.0, 1.0));
    f.push_back(real_field("train.epsilon_end", &TrainConfig::epsilon_end, 0.0, 1.0));
    f.push_back(int_field("train.epsilon_anneal", &TrainConfig::epsilon_anneal, 1L));
    f.push_back(int_field("train.target_update_interval", &TrainConfig::target_update_interval, 1));
    f.push_back(int_field("train.test_interval", &TrainConfig::test_interval, 0L));
    f.push_back(int_field("train.test_episodes", &TrainConfig::test_episodes, 1));
    f.push_back(real_field("train.rms_decay", &TrainConfig::rms_decay, 0.0, 1.0, true));
    f.push_back(real_field("train.rms_eps", &TrainConfig::rms_eps, 0.0, inf, true));
    f.push_back(real_field("train.grad_norm_clip", &TrainConfig::grad_norm_clip, 0.0, inf));
    f.push_back(int_field("train.seed", &TrainConfig::seed, std::uint64_t{0}));
    f.push_back(bool_field("train.loss_i_mean", &TrainConfig::loss_i_mean));

    f.push_back(string_field("knowledge.rules", &TrainConfig::rules));
    f.push_back(real_field("knowledge.lambda", &TrainConfig::lambda, 0.0, inf));
    f.push_back(real_field("knowledge.lambda_k", &TrainConfig::lambda_k, 0.0, inf));
    f.push_back(real_field("knowledge.temperature", &TrainConfig::temperature, 0.0, inf, true));
    f.push_back({"knowledge.ablation",
                 [](TrainConfig& c, const std::string& v) {
                   if (v == "none") c.ablation = Ablation::none;
                   else if (v == "no_knowledge") c.ablation = Ablation::no_knowledge;
                   else if (v == "no_intrinsic") c.ablation = Ablation::no_intrinsic;
                   else if (v == "random_knowledge") c.ablation = Ablation::random_knowledge;
                   else throw ConfigError("knowledge.ablation: expected none, no_knowledge, no_intrinsic or random_knowledge");
                 },
                 [](const TrainConfig& c) { return std::string(ablation_name(c.ablation)); }});
    f.push_back(bool_field("knowledge.recompute_intrinsic", &TrainConfig::recompute_intrinsic));

    f.push_back(string_field("output.dir", &TrainConfig::output_dir));
    f.push_back(bool_field("output.dump_intrinsic", &TrainConfig::dump_intrinsic));
    return f;
  }();
  return table;
}

inline const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace detail

/// Sets one `section.key` value; unknown keys are rejected.
inline void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const detail::Field* f = detail::find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  f->set(cfg, value);
}

inline std::string get_setting(const TrainConfig& cfg, const std::string& key) {
  const detail::Field* f = detail::find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  return f->get(cfg);
}

/// Cross-field checks that single-key validation cannot express.
inline void validate(const TrainConfig& cfg) {
  if (cfg.epsilon_end > cfg.epsilon_start) throw ConfigError("train.epsilon_end must not exceed train.epsilon_start");
  if (cfg.batch_size > cfg.buffer_size) throw ConfigError("train.batch_size must not exceed train.buffer_size");
  if (cfg.env == "lbf") {
    LbfEnv probe(cfg.lbf);  // throws on an unplaceable scenario
  } else {
    SkirmishEnv probe(cfg.skirmish);
  }
}

/// Parses config text. Errors carry the 1-based line number.
inline TrainConfig parse_config(std::string_view text) {
  TrainConfig cfg;
  std::string section;
  std::istringstream is{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto p = line.find_first_of("#;"); p != std::string_view::npos) line = line.substr(0, p);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("malformed section header");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        if (section.empty()) throw ConfigError("empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      const std::string key(detail::trim(line.substr(0, eq)));
      std::string value(detail::trim(line.substr(eq + 1)));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (section.empty()) throw ConfigError("key '" + key + "' outside any section");
      apply_setting(cfg, section + "." + key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Full snapshot with every key, parseable by parse_config.
inline std::string format_config(const TrainConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : detail::fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace kgmarl
