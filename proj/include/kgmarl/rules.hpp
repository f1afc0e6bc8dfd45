// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// Soft logic rules: a boolean condition over named observation features and
// action availability, paired with action weights in [0, 1].
//
//   rule "low_hp_retreat" priority 10
//   when health < 15 or not available(attack)
//   prefer north:0.25 south:0.25 east:0.25 west:0.25
//
// Rules are tried in descending priority (file order on ties); the first
// whose condition holds decides the preference distribution.

#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kgmarl/env.hpp"
#include "kgmarl/errors.hpp"
#include "kgmarl/tensor.hpp"

namespace kgmarl {

class RuleParseError : public ConfigError {
 public:
  RuleParseError(int line, const std::string& msg)
      : ConfigError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

enum class Cmp { lt, le, gt, ge, eq };

inline const char* cmp_symbol(Cmp c) {
  switch (c) {
    case Cmp::lt:
      return "<";
    case Cmp::le:
      return "<=";
    case Cmp::gt:
      return ">";
    case Cmp::ge:
      return ">=";
    case Cmp::eq:
      return "=";
  }
  return "?";
}

inline bool compare(double lhs, Cmp c, double rhs) {
  switch (c) {
    case Cmp::lt:
      return lhs < rhs;
    case Cmp::le:
      return lhs <= rhs;
    case Cmp::gt:
      return lhs > rhs;
    case Cmp::ge:
      return lhs >= rhs;
    case Cmp::eq:
      return lhs == rhs;
  }
  return false;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest representation that still round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    double back = 0.0;
    std::from_chars(shorter, shorter + std::char_traits<char>::length(shorter), back);
    if (back == v) return shorter;
  }
  return buf;
}

/// Boolean expression tree stored as a flat node array (root is the last node).
class Condition {
 public:
  enum class Kind { always, compare, available, all_of, any_of, negate };

  struct Node {
    Kind kind = Kind::always;
    std::string name;  // feature or action name
    int feature = -1;  // index into the rule set's feature schema
    Cmp cmp = Cmp::lt;
    double value = 0.0;
    std::vector<int> actions;  // resolved action indices for available()
    std::vector<int> children;
  };

  Condition() { nodes_.push_back({}); }

  int add(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }
  void set_root(int r) { root_ = r; }
  int root() const { return root_; }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  const std::vector<Node>& nodes() const { return nodes_; }

  /// `lookup(node)` returns the feature value for a compare node.
  template <typename Lookup>
  bool eval(const Lookup& lookup, const Mask& available) const {
    return eval_node(root_, lookup, available);
  }

  std::string to_string() const { return node_string(root_, false); }

 private:
  template <typename Lookup>
  bool eval_node(int i, const Lookup& lookup, const Mask& available) const {
    const Node& n = node(i);
    switch (n.kind) {
      case Kind::always:
        return true;
      case Kind::compare:
        return compare(lookup(n), n.cmp, n.value);
      case Kind::available:
        for (int a : n.actions) {
          if (available.at(static_cast<std::size_t>(a))) return true;
        }
        return false;
      case Kind::all_of:
        for (int c : n.children) {
          if (!eval_node(c, lookup, available)) return false;
        }
        return true;
      case Kind::any_of:
        for (int c : n.children) {
          if (eval_node(c, lookup, available)) return true;
        }
        return false;
      case Kind::negate:
        return !eval_node(n.children.at(0), lookup, available);
    }
    return false;
  }

  std::string node_string(int i, bool nested) const {
    const Node& n = node(i);
    switch (n.kind) {
      case Kind::always:
        return "true";
      case Kind::compare:
        return n.name + " " + cmp_symbol(n.cmp) + " " + format_number(n.value);
      case Kind::available:
        return "available(" + n.name + ")";
      case Kind::negate:
        return "not " + node_string(n.children.at(0), true);
      case Kind::all_of:
      case Kind::any_of: {
        std::string s;
        for (std::size_t k = 0; k < n.children.size(); ++k) {
          if (k > 0) s += n.kind == Kind::all_of ? " and " : " or ";
          s += node_string(n.children[k], true);
        }
        return nested ? "(" + s + ")" : s;
      }
    }
    return "";
  }

  std::vector<Node> nodes_;
  int root_ = 0;
};

struct SoftRule {
  std::string name;
  int priority = 0;
  Condition condition;
  std::vector<std::pair<std::string, double>> preference;  // as written
  Vector weights;                                          // resolved over the action vocabulary
  std::size_t support = 0;                                 // records behind an extracted rule; 0 if hand-written
};

struct RuleMatch {
  int rule = -1;
  Vector distribution;
};

/// Ordered, immutable set of rules bound to an action vocabulary and a
/// feature schema.
class RuleSet {
 public:
  RuleSet() = default;
  RuleSet(ActionVocabulary vocab, std::vector<std::string> features, std::vector<SoftRule> rules)
      : vocab_(std::move(vocab)), features_(std::move(features)), rules_(std::move(rules)) {
    order_.resize(rules_.size());
    for (std::size_t i = 0; i < rules_.size(); ++i) order_[i] = static_cast<int>(i);
    std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) {
      return rules_[static_cast<std::size_t>(a)].priority > rules_[static_cast<std::size_t>(b)].priority;
    });
    for (const auto& r : rules_) {
      for (const auto& n : r.condition.nodes()) {
        if (n.kind == Condition::Kind::compare && std::find(used_.begin(), used_.end(), n.name) == used_.end()) {
          used_.push_back(n.name);
        }
      }
    }
  }

  bool empty() const { return rules_.empty(); }
  std::size_t size() const { return rules_.size(); }
  const SoftRule& rule(int i) const { return rules_.at(static_cast<std::size_t>(i)); }
  const std::vector<SoftRule>& rules() const { return rules_; }
  const ActionVocabulary& vocabulary() const { return vocab_; }
  const std::vector<std::string>& feature_names() const { return features_; }
  /// Feature names referenced by any condition.
  const std::vector<std::string>& used_features() const { return used_; }

  /// First matching rule, its weights masked by availability and renormalized.
  /// Absent when nothing matches or the matching rule's actions are all unavailable.
  std::optional<RuleMatch> match(std::span<const double> features, const Mask& available) const {
    if (features.size() != features_.size()) {
      throw ConfigError("rule evaluation: expected " + std::to_string(features_.size()) + " features, got " +
                        std::to_string(features.size()));
    }
    return match_impl([&](const Condition::Node& n) { return features[static_cast<std::size_t>(n.feature)]; },
                      available);
  }

  std::optional<RuleMatch> match(const std::map<std::string, double>& features, const Mask& available) const {
    for (const auto& name : used_) {
      if (features.count(name) == 0) throw ConfigError("rule evaluation: missing feature '" + name + "'");
    }
    return match_impl([&](const Condition::Node& n) { return features.at(n.name); }, available);
  }

 private:
  template <typename Lookup>
  std::optional<RuleMatch> match_impl(const Lookup& lookup, const Mask& available) const {
    if (available.size() != vocab_.size()) {
      throw ConfigError("rule evaluation: mask has " + std::to_string(available.size()) + " entries, vocabulary " +
                        std::to_string(vocab_.size()));
    }
    for (int idx : order_) {
      const SoftRule& r = rules_[static_cast<std::size_t>(idx)];
      if (!r.condition.eval(lookup, available)) continue;
      Vector d = r.weights;
      for (Eigen::Index a = 0; a < d.size(); ++a) {
        if (!available[static_cast<std::size_t>(a)]) d[a] = 0.0;
      }
      const double total = d.sum();
      if (!(total > 0.0)) return std::nullopt;
      return RuleMatch{idx, d / total};
    }
    return std::nullopt;
  }

  ActionVocabulary vocab_;
  std::vector<std::string> features_;
  std::vector<SoftRule> rules_;
  std::vector<int> order_;
  std::vector<std::string> used_;
};

/// Preference distribution H(o) for the given features, if any rule fires.
template <typename Features>
std::optional<Vector> evaluate(const RuleSet& rules, const Features& features, const Mask& available) {
  auto m = rules.match(features, available);
  if (!m) return std::nullopt;
  return std::move(m->distribution);
}

namespace detail {

struct Token {
  enum Kind { ident, number, op, lparen, rparen, colon, string, end } kind = end;
  std::string text;
  double value = 0.0;
};

class Lexer {
 public:
  Lexer(std::string_view src, int line) : src_(src), line_(line) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < src_.size()) {
      const char c = src_[i];
      if (std::isspace(static_cast<unsigned char>(c))) {
        ++i;
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::size_t j = i;
        while (j < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[j])) || src_[j] == '_')) ++j;
        out.push_back({Token::ident, std::string(src_.substr(i, j - i))});
        i = j;
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' ||
                 ((c == '-' || c == '+') && i + 1 < src_.size() &&
                  (std::isdigit(static_cast<unsigned char>(src_[i + 1])) || src_[i + 1] == '.'))) {
        double v = 0.0;
        const char* begin = src_.data() + i + (c == '+' ? 1 : 0);
        auto [ptr, ec] = std::from_chars(begin, src_.data() + src_.size(), v);
        if (ec != std::errc()) throw RuleParseError(line_, "bad number near '" + std::string(src_.substr(i)) + "'");
        const std::size_t j = static_cast<std::size_t>(ptr - src_.data());
        out.push_back({Token::number, std::string(src_.substr(i, j - i)), v});
        i = j;
      } else if (c == '"') {
        const std::size_t j = src_.find('"', i + 1);
        if (j == std::string_view::npos) throw RuleParseError(line_, "unterminated string");
        out.push_back({Token::string, std::string(src_.substr(i + 1, j - i - 1))});
        i = j + 1;
      } else if (c == '(') {
        out.push_back({Token::lparen, "("});
        ++i;
      } else if (c == ')') {
        out.push_back({Token::rparen, ")"});
        ++i;
      } else if (c == ':') {
        out.push_back({Token::colon, ":"});
        ++i;
      } else if (src_.substr(i, 2) == "<=" || src_.substr(i, 2) == ">=" || src_.substr(i, 2) == "==") {
        out.push_back({Token::op, std::string(src_.substr(i, 2))});
        i += 2;
      } else if (src_.substr(i, 3) == "\xE2\x89\xA4" || src_.substr(i, 3) == "\xE2\x89\xA5") {  // UTF-8 for <= / >=
        out.push_back({Token::op, src_.substr(i, 3) == "\xE2\x89\xA4" ? "<=" : ">="});
        i += 3;
      } else if (c == '<' || c == '>' || c == '=') {
        out.push_back({Token::op, std::string(1, c)});
        ++i;
      } else {
        throw RuleParseError(line_, std::string("unexpected character '") + c + "'");
      }
    }
    out.push_back({Token::end, ""});
    return out;
  }

 private:
  std::string_view src_;
  int line_;
};

class ConditionParser {
 public:
  ConditionParser(std::vector<Token> toks, int line, const ActionVocabulary& vocab,
                  const std::vector<std::string>& features, Condition& out)
      : toks_(std::move(toks)), line_(line), vocab_(vocab), features_(features), out_(out) {}

  void parse() {
    const int root = parse_or();
    if (peek().kind != Token::end) throw RuleParseError(line_, "unexpected '" + peek().text + "' in condition");
    out_.set_root(root);
  }

 private:
  const Token& peek() const { return toks_[std::min(pos_, toks_.size() - 1)]; }
  Token take() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  bool accept_word(const char* w) {
    if (peek().kind == Token::ident && peek().text == w) {
      ++pos_;
      return true;
    }
    return false;
  }

  int parse_or() {
    std::vector<int> parts{parse_and()};
    while (accept_word("or")) parts.push_back(parse_and());
    if (parts.size() == 1) return parts[0];
    Condition::Node n;
    n.kind = Condition::Kind::any_of;
    n.children = std::move(parts);
    return out_.add(std::move(n));
  }

  int parse_and() {
    std::vector<int> parts{parse_unary()};
    while (accept_word("and")) parts.push_back(parse_unary());
    if (parts.size() == 1) return parts[0];
    Condition::Node n;
    n.kind = Condition::Kind::all_of;
    n.children = std::move(parts);
    return out_.add(std::move(n));
  }

  int parse_unary() {
    if (accept_word("not")) {
      Condition::Node n;
      n.kind = Condition::Kind::negate;
      n.children = {parse_unary()};
      return out_.add(std::move(n));
    }
    if (peek().kind == Token::lparen) {
      take();
      const int inner = parse_or();
      if (take().kind != Token::rparen) throw RuleParseError(line_, "expected ')'");
      return inner;
    }
    return parse_atom();
  }

  int parse_atom() {
    const Token t = take();
    if (t.kind != Token::ident) throw RuleParseError(line_, "expected a feature or available(...), got '" + t.text + "'");
    if (t.text == "true") return out_.add({});
    if (t.text == "available") {
      if (take().kind != Token::lparen) throw RuleParseError(line_, "expected '(' after available");
      const Token a = take();
      if (a.kind != Token::ident) throw RuleParseError(line_, "expected an action name in available()");
      if (take().kind != Token::rparen) throw RuleParseError(line_, "expected ')' after action name");
      Condition::Node n;
      n.kind = Condition::Kind::available;
      n.name = a.text;
      n.actions = vocab_.resolve(a.text);
      if (n.actions.empty()) throw RuleParseError(line_, "unknown action '" + a.text + "'");
      return out_.add(std::move(n));
    }
    auto it = std::find(features_.begin(), features_.end(), t.text);
    if (it == features_.end()) throw RuleParseError(line_, "unknown feature '" + t.text + "'");
    const Token op = take();
    if (op.kind != Token::op) throw RuleParseError(line_, "expected a comparison after '" + t.text + "'");
    const Token num = take();
    if (num.kind != Token::number) throw RuleParseError(line_, "expected a number after '" + op.text + "'");
    Condition::Node n;
    n.kind = Condition::Kind::compare;
    n.name = t.text;
    n.feature = static_cast<int>(it - features_.begin());
    n.value = num.value;
    if (op.text == "<") n.cmp = Cmp::lt;
    else if (op.text == "<=") n.cmp = Cmp::le;
    else if (op.text == ">") n.cmp = Cmp::gt;
    else if (op.text == ">=") n.cmp = Cmp::ge;
    else n.cmp = Cmp::eq;
    return out_.add(std::move(n));
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int line_;
  const ActionVocabulary& vocab_;
  const std::vector<std::string>& features_;
  Condition& out_;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline Vector resolve_weights(const std::vector<std::pair<std::string, double>>& pref, const ActionVocabulary& vocab) {
  Vector w = Vector::Zero(static_cast<Eigen::Index>(vocab.size()));
  for (const auto& [name, weight] : pref) {
    const auto members = vocab.resolve(name);
    for (int a : members) w[a] += weight / static_cast<double>(members.size());
  }
  return w;
}

}  // namespace detail

/// Parses rule text against an action vocabulary and feature schema. Group
/// names (e.g. "attack") spread their weight evenly over member actions.
inline RuleSet parse_rules(std::string_view text, const ActionVocabulary& vocab, const std::vector<std::string>& features) {
  std::vector<SoftRule> rules;
  std::optional<SoftRule> cur;
  int cur_line = 0;
  bool has_when = false, has_prefer = false;
  auto finish = [&]() {
    if (!cur) return;
    if (!has_prefer) throw RuleParseError(cur_line, "rule '" + cur->name + "' has no prefer clause");
    if (!has_when) throw RuleParseError(cur_line, "rule '" + cur->name + "' has no when clause");
    rules.push_back(std::move(*cur));
    cur.reset();
  };

  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t stop = text.find('\n', start);
    if (stop == std::string_view::npos) stop = text.size();
    std::string_view line = text.substr(start, stop - start);
    start = stop + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) {
      if (stop == text.size()) break;
      continue;
    }
    auto toks = detail::Lexer(line, line_no).run();
    // Pad so lookahead past the end always sees end tokens.
    toks.resize(toks.size() + 3, detail::Token{});
    const std::string& head = toks[0].text;
    if (toks[0].kind == detail::Token::ident && head == "rule") {
      finish();
      if (toks[1].kind != detail::Token::string) throw RuleParseError(line_no, "expected a quoted rule name");
      cur = SoftRule{};
      cur->name = toks[1].text;
      cur_line = line_no;
      has_when = has_prefer = false;
      std::size_t k = 2;
      if (toks[k].kind == detail::Token::ident && toks[k].text == "priority") {
        if (toks[k + 1].kind != detail::Token::number) throw RuleParseError(line_no, "priority needs a number");
        cur->priority = static_cast<int>(toks[k + 1].value);
        if (static_cast<double>(cur->priority) != toks[k + 1].value) {
          throw RuleParseError(line_no, "priority must be an integer");
        }
        k += 2;
      }
      if (toks[k].kind == detail::Token::ident && toks[k].text == "support") {
        if (toks[k + 1].kind != detail::Token::number || toks[k + 1].value < 0) {
          throw RuleParseError(line_no, "support needs a nonnegative count");
        }
        cur->support = static_cast<std::size_t>(toks[k + 1].value);
        k += 2;
      }
      if (toks[k].kind != detail::Token::end) throw RuleParseError(line_no, "unexpected '" + toks[k].text + "'");
    } else if (toks[0].kind == detail::Token::ident && head == "when") {
      if (!cur) throw RuleParseError(line_no, "'when' outside a rule");
      if (has_when) throw RuleParseError(line_no, "duplicate when clause");
      toks.erase(toks.begin());
      cur->condition = Condition{};
      detail::ConditionParser(std::move(toks), line_no, vocab, features, cur->condition).parse();
      has_when = true;
    } else if (toks[0].kind == detail::Token::ident && head == "prefer") {
      if (!cur) throw RuleParseError(line_no, "'prefer' outside a rule");
      if (has_prefer) throw RuleParseError(line_no, "duplicate prefer clause");
      std::size_t k = 1;
      while (toks[k].kind != detail::Token::end) {
        if (toks[k].kind != detail::Token::ident || toks[k + 1].kind != detail::Token::colon ||
            toks[k + 2].kind != detail::Token::number) {
          throw RuleParseError(line_no, "expected action:weight pairs");
        }
        const std::string& action = toks[k].text;
        const double w = toks[k + 2].value;
        if (!vocab.knows(action)) throw RuleParseError(line_no, "unknown action '" + action + "'");
        if (!(w >= 0.0 && w <= 1.0)) throw RuleParseError(line_no, "weight " + toks[k + 2].text + " outside [0,1]");
        cur->preference.emplace_back(action, w);
        k += 3;
      }
      if (cur->preference.empty()) throw RuleParseError(line_no, "empty prefer clause");
      cur->weights = detail::resolve_weights(cur->preference, vocab);
      has_prefer = true;
    } else {
      throw RuleParseError(line_no, "expected 'rule', 'when' or 'prefer', got '" + head + "'");
    }
    if (stop == text.size()) break;
  }
  finish();
  return RuleSet(vocab, features, std::move(rules));
}

/// Writes rules back in the parseable text form.
inline std::string format_rules(const RuleSet& rules) {
  std::ostringstream os;
  for (const auto& r : rules.rules()) {
    os << "rule \"" << r.name << "\" priority " << r.priority;
    if (r.support > 0) os << " support " << r.support;
    os << "\nwhen " << r.condition.to_string() << "\nprefer";
    for (const auto& [action, w] : r.preference) os << ' ' << action << ':' << format_number(w);
    os << "\n\n";
  }
  return os.str();
}

}  // namespace kgmarl
