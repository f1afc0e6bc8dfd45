// Copyright 2026 The kgmarl Authors. Apache 2.0 License.
//
// CART-style rule extraction from (features, action) records: Gini impurity,
// single-feature midpoint thresholds, leaves turned into soft rules whose
// weights are the leaf's empirical action frequencies.

#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kgmarl/rules.hpp"

namespace kgmarl {

struct ActionRecord {
  std::vector<double> features;
  Mask available;  // may be empty when unknown
  int action = 0;
};

/// Labelled records over a fixed feature schema and action vocabulary.
struct ActionDataset {
  std::vector<std::string> feature_names;
  ActionVocabulary vocabulary;
  std::vector<ActionRecord> records;
};

struct TreeConfig {
  int max_depth = 4;
  std::size_t min_leaf = 20;
  double min_purity = 0.6;
  std::size_t min_support = 50;
  double min_gain = 0.005;  // smallest weighted Gini decrease worth a split
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

inline double gini(const std::vector<std::size_t>& counts, std::size_t total) {
  if (total == 0) return 0.0;
  double s = 1.0;
  for (std::size_t c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    s -= p * p;
  }
  return s;
}

namespace detail {
inline std::vector<std::size_t> class_counts(const ActionDataset& data, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> c(data.vocabulary.size(), 0);
  for (std::size_t i : idx) c[static_cast<std::size_t>(data.records[i].action)] += 1;
  return c;
}
}  // namespace detail

/// Best Gini split of the records in `idx` with both children holding at
/// least `min_leaf` records. Ties go to the lowest feature index, then the
/// lowest threshold. Absent when no admissible split has positive gain.
inline std::optional<Split> best_split(const ActionDataset& data, const std::vector<std::size_t>& idx,
                                       std::size_t min_leaf) {
  const std::size_t n = idx.size();
  if (n < 2 * std::max<std::size_t>(min_leaf, 1)) return std::nullopt;
  const auto parent_counts = detail::class_counts(data, idx);
  const double parent = gini(parent_counts, n);
  std::optional<Split> best;
  std::vector<std::size_t> order(idx);
  for (std::size_t f = 0; f < data.feature_names.size(); ++f) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return data.records[a].features[f] < data.records[b].features[f]; });
    std::vector<std::size_t> left(parent_counts.size(), 0);
    std::vector<std::size_t> right(parent_counts);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const auto cls = static_cast<std::size_t>(data.records[order[k]].action);
      left[cls] += 1;
      right[cls] -= 1;
      const double v = data.records[order[k]].features[f];
      const double next = data.records[order[k + 1]].features[f];
      if (!(v < next)) continue;
      const std::size_t nl = k + 1;
      const std::size_t nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double weighted = (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
                              static_cast<double>(n);
      const double gain = parent - weighted;
      if (gain > 0.0 && (!best || gain > best->gain)) {
        double thr = v + (next - v) / 2.0;
        if (!(v < thr)) thr = next;
        best = Split{static_cast<int>(f), thr, gain};
      }
    }
  }
  return best;
}

struct TreeNode {
  int feature = -1;  // -1 for a leaf
  double threshold = 0.0;
  int left = -1;   // feature < threshold
  int right = -1;  // feature >= threshold
  std::vector<std::size_t> counts;
  std::size_t support = 0;
  int depth = 0;
};

class DecisionTree {
 public:
  static DecisionTree fit(const ActionDataset& data, const TreeConfig& cfg) {
    if (data.records.empty()) throw InvalidInput("decision tree: empty dataset");
    if (data.vocabulary.size() == 0) throw InvalidInput("decision tree: empty action vocabulary");
    for (const auto& r : data.records) {
      if (r.features.size() != data.feature_names.size()) throw InvalidInput("decision tree: ragged feature rows");
      if (r.action < 0 || static_cast<std::size_t>(r.action) >= data.vocabulary.size()) {
        throw InvalidInput("decision tree: action label out of range");
      }
    }
    DecisionTree t;
    std::vector<std::size_t> all(data.records.size());
    std::iota(all.begin(), all.end(), 0);
    t.grow(data, cfg, all, 0);
    return t;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }

  int leaf_of(std::span<const double> features) const {
    int i = 0;
    while (nodes_[static_cast<std::size_t>(i)].feature >= 0) {
      const TreeNode& n = nodes_[static_cast<std::size_t>(i)];
      i = features[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    return i;
  }

  /// (feature, is_left_branch, threshold) predicates from the root to `leaf`.
  std::vector<std::tuple<int, bool, double>> path_to(int leaf) const {
    std::vector<std::tuple<int, bool, double>> path;
    int cur = leaf;
    while (cur != 0) {
      const int parent = parents_[static_cast<std::size_t>(cur)];
      const TreeNode& p = nodes_[static_cast<std::size_t>(parent)];
      path.emplace_back(p.feature, p.left == cur, p.threshold);
      cur = parent;
    }
    std::reverse(path.begin(), path.end());
    return path;
  }

 private:
  int grow(const ActionDataset& data, const TreeConfig& cfg, const std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    parents_.push_back(-1);
    TreeNode node;
    node.counts = detail::class_counts(data, idx);
    node.support = idx.size();
    node.depth = depth;
    const bool pure = std::count_if(node.counts.begin(), node.counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
    std::optional<Split> split;
    if (depth < cfg.max_depth && !pure) split = best_split(data, idx, cfg.min_leaf);
    if (split && split->gain >= cfg.min_gain) {
      std::vector<std::size_t> l, r;
      for (std::size_t i : idx) {
        (data.records[i].features[static_cast<std::size_t>(split->feature)] < split->threshold ? l : r).push_back(i);
      }
      node.feature = split->feature;
      node.threshold = split->threshold;
      nodes_[static_cast<std::size_t>(id)] = node;
      const int li = grow(data, cfg, l, depth + 1);
      const int ri = grow(data, cfg, r, depth + 1);
      nodes_[static_cast<std::size_t>(id)].left = li;
      nodes_[static_cast<std::size_t>(id)].right = ri;
      parents_[static_cast<std::size_t>(li)] = id;
      parents_[static_cast<std::size_t>(ri)] = id;
    } else {
      nodes_[static_cast<std::size_t>(id)] = node;
    }
    return id;
  }

  std::vector<TreeNode> nodes_;
  std::vector<int> parents_;
};

struct LeafReport {
  int leaf = -1;
  std::string rule;  // empty when the leaf was filtered out
  std::size_t support = 0;
  double purity = 0.0;
  bool emitted = false;
};

struct ExtractionResult {
  RuleSet rules;
  DecisionTree tree;
  std::vector<LeafReport> leaves;
  double coverage = 0.0;  // fraction of records routed to an emitted leaf
};

/// Fits a tree and turns each leaf with support >= min_support and majority
/// frequency >= min_purity into a rule (conjunction of path predicates,
/// weights = empirical action frequencies at the leaf).
inline ExtractionResult extract_rules(const ActionDataset& data, const TreeConfig& cfg) {
  if (data.records.empty()) throw InvalidInput("extract_rules: empty dataset");
  ExtractionResult out;
  out.tree = DecisionTree::fit(data, cfg);
  std::vector<SoftRule> rules;
  std::size_t covered = 0;
  const auto& nodes = out.tree.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const TreeNode& n = nodes[i];
    if (n.feature >= 0) continue;
    LeafReport rep;
    rep.leaf = static_cast<int>(i);
    rep.support = n.support;
    const std::size_t top = *std::max_element(n.counts.begin(), n.counts.end());
    rep.purity = static_cast<double>(top) / static_cast<double>(n.support);
    rep.emitted = n.support >= cfg.min_support && rep.purity >= cfg.min_purity;
    if (rep.emitted) {
      SoftRule r;
      r.name = "leaf_" + std::to_string(i);
      r.support = n.support;
      const auto path = out.tree.path_to(static_cast<int>(i));
      std::vector<int> parts;
      for (const auto& [f, is_left, thr] : path) {
        Condition::Node c;
        c.kind = Condition::Kind::compare;
        c.feature = f;
        c.name = data.feature_names[static_cast<std::size_t>(f)];
        c.cmp = is_left ? Cmp::lt : Cmp::ge;
        c.value = thr;
        parts.push_back(r.condition.add(std::move(c)));
      }
      if (parts.size() == 1) {
        r.condition.set_root(parts[0]);
      } else if (parts.size() > 1) {
        Condition::Node all;
        all.kind = Condition::Kind::all_of;
        all.children = parts;
        r.condition.set_root(r.condition.add(std::move(all)));
      }
      for (std::size_t a = 0; a < n.counts.size(); ++a) {
        if (n.counts[a] == 0) continue;
        r.preference.emplace_back(data.vocabulary.name(static_cast<int>(a)),
                                  static_cast<double>(n.counts[a]) / static_cast<double>(n.support));
      }
      r.weights = detail::resolve_weights(r.preference, data.vocabulary);
      rep.rule = r.name;
      covered += n.support;
      rules.push_back(std::move(r));
    }
    out.leaves.push_back(rep);
  }
  out.coverage = static_cast<double>(covered) / static_cast<double>(data.records.size());
  out.rules = RuleSet(data.vocabulary, data.feature_names, std::move(rules));
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory dumps: one JSON object per (agent, step):
//   {"episode":0,"step":3,"agent":1,"features":{"health":40,...},
//    "available":[1,1,0,...],"action":2,"action_name":"south"}

inline nlohmann::json trajectory_record(int episode, int step, int agent, const std::vector<std::string>& feature_names,
                                        const std::vector<double>& features, const Mask& available, int action,
                                        const ActionVocabulary& vocab) {
  nlohmann::json j;
  j["episode"] = episode;
  j["step"] = step;
  j["agent"] = agent;
  nlohmann::json f = nlohmann::json::object();
  for (std::size_t i = 0; i < feature_names.size(); ++i) f[feature_names[i]] = features[i];
  j["features"] = f;
  std::vector<int> av;
  for (bool b : available) av.push_back(b ? 1 : 0);
  j["available"] = av;
  j["action"] = action;
  j["action_name"] = vocab.name(action);
  return j;
}

/// Parses JSON-lines text. A malformed final line (partial write) is dropped;
/// a malformed line elsewhere is an error.
inline std::vector<nlohmann::json> parse_json_lines(std::istream& is) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  std::vector<nlohmann::json> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    auto j = nlohmann::json::parse(lines[i], nullptr, false);
    if (j.is_discarded()) {
      if (i + 1 == lines.size()) break;
      throw InvalidInput("line " + std::to_string(i + 1) + ": invalid JSON");
    }
    out.push_back(std::move(j));
  }
  return out;
}

/// Builds a dataset from trajectory records. Feature names come from the
/// first record; action labels use the given vocabulary.
inline ActionDataset dataset_from_records(const std::vector<nlohmann::json>& records, const ActionVocabulary& vocab) {
  if (records.empty()) throw InvalidInput("trajectory log contains no records");
  ActionDataset data;
  data.vocabulary = vocab;
  for (const auto& [name, _] : records.front().at("features").items()) data.feature_names.push_back(name);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& j = records[i];
    try {
      ActionRecord r;
      const auto& f = j.at("features");
      for (const auto& name : data.feature_names) r.features.push_back(f.at(name).get<double>());
      if (f.size() != data.feature_names.size()) throw InvalidInput("feature set differs from the first record");
      if (j.contains("action_name")) {
        auto idx = vocab.index_of(j.at("action_name").get<std::string>());
        if (!idx) throw InvalidInput("unknown action '" + j.at("action_name").get<std::string>() + "'");
        r.action = *idx;
      } else {
        r.action = j.at("action").get<int>();
      }
      if (r.action < 0 || static_cast<std::size_t>(r.action) >= vocab.size()) throw InvalidInput("action out of range");
      if (j.contains("available")) {
        for (const auto& b : j.at("available")) r.available.push_back(b.get<int>() != 0);
      }
      data.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput("record " + std::to_string(i + 1) + ": " + e.what());
    } catch (const InvalidInput& e) {
      throw InvalidInput("record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return data;
}

}  // namespace kgmarl
