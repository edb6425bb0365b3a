#pragma once

// Evaluation protocol: micro precision/recall/F1 for Code, Sub-code, and
// relaxed Span matching, plus top-k confusion tables. Code/Sub-code use
// per-example multiset intersection of label bags (set mode behind a flag);
// Span uses one-to-one maximum matching under containment-or-Jaccard.

#include "tabpo/confusion.hpp"
#include "tabpo/schema.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tabpo::eval {

struct LevelMetrics {
  long tp = 0;
  long fp = 0;
  long fn = 0;

  double precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision();
    const double r = recall();
    return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

struct EvalOptions {
  double jaccard_threshold = 0.6;
  bool multiset = true;            // bag intersection (default) vs set intersection
  bool count_duplicates = false;   // keep duplicate predicted triples instead of collapsing
};

struct MetricsReport {
  LevelMetrics code;
  LevelMetrics subcode;
  LevelMetrics span;
  long n_examples = 0;
  long parse_failures = 0;
  long malformed = 0;
  long invalid_label = 0;
  long hierarchy_violation = 0;
  EvalOptions options;

  Json to_json() const {
    auto level = [](const LevelMetrics& m) {
      return Json{{"precision", m.precision()}, {"recall", m.recall()}, {"f1", m.f1()},
                  {"tp", m.tp},                 {"fp", m.fp},           {"fn", m.fn}};
    };
    return Json{
        {"header",
         Json{{"span_matcher", "one_to_one_maximum"},
              {"span_rule", "containment_either_direction_or_jaccard"},
              {"jaccard_threshold", options.jaccard_threshold},
              {"label_scoring", options.multiset ? "multiset" : "set"},
              {"duplicate_predictions", options.count_duplicates ? "counted" : "collapsed"}}},
        {"n_examples", n_examples},
        {"parse_failures",
         Json{{"total", parse_failures},
              {"malformed", malformed},
              {"invalid_label", invalid_label},
              {"hierarchy_violation", hierarchy_violation}}},
        {"code", level(code)},
        {"subcode", level(subcode)},
        {"span", level(span)}};
  }
};

inline void save_report(const std::filesystem::path& path, const MetricsReport& report) {
  write_file_atomic(path, report.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Matching primitives
// ---------------------------------------------------------------------------

namespace detail {

// Relaxed span match: token-set containment in either direction, or Jaccard
// at or above the threshold.
inline bool span_match(const std::string& a, const std::string& b, double threshold) {
  const auto ta = prefs::span_token_set(a);
  const auto tb = prefs::span_token_set(b);
  const bool a_in_b = std::includes(tb.begin(), tb.end(), ta.begin(), ta.end());
  const bool b_in_a = std::includes(ta.begin(), ta.end(), tb.begin(), tb.end());
  if (a_in_b || b_in_a) return true;
  return prefs::jaccard_similarity(a, b) >= threshold;
}

// Maximum bipartite matching size (Kuhn's augmenting paths); instances are a
// handful of tuples per side.
inline long max_matching(const std::vector<std::vector<int>>& adj, int n_right) {
  std::vector<int> match_right(static_cast<std::size_t>(n_right), -1);
  std::vector<char> visited;
  std::function<bool(int)> try_augment = [&](int left) -> bool {
    for (int r : adj[static_cast<std::size_t>(left)]) {
      if (visited[static_cast<std::size_t>(r)]) continue;
      visited[static_cast<std::size_t>(r)] = 1;
      if (match_right[static_cast<std::size_t>(r)] == -1 ||
          try_augment(match_right[static_cast<std::size_t>(r)])) {
        match_right[static_cast<std::size_t>(r)] = left;
        return true;
      }
    }
    return false;
  };
  long matched = 0;
  for (int l = 0; l < static_cast<int>(adj.size()); ++l) {
    visited.assign(static_cast<std::size_t>(n_right), 0);
    if (try_augment(l)) ++matched;
  }
  return matched;
}

// Multiset (or set) intersection size of two label bags.
inline long bag_intersection(std::vector<std::string> a, std::vector<std::string> b,
                             bool multiset) {
  if (!multiset) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
  }
  std::map<std::string, long> counts;
  for (const auto& s : a) ++counts[s];
  long inter = 0;
  for (const auto& s : b) {
    auto it = counts.find(s);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++inter;
    }
  }
  return inter;
}

}  // namespace detail

// Scores one (gold, parsed prediction) pair into the three level tallies.
inline void score_pair(const schema::LabelSet& gold, const schema::LabelSet& pred,
                       const EvalOptions& opts, MetricsReport& report) {
  auto level = [&](auto get, LevelMetrics& m) {
    std::vector<std::string> g, p;
    for (const auto& t : gold.tuples) g.push_back(get(t));
    for (const auto& t : pred.tuples) p.push_back(get(t));
    const long inter = detail::bag_intersection(g, p, opts.multiset);
    long gn = static_cast<long>(g.size());
    long pn = static_cast<long>(p.size());
    if (!opts.multiset) {
      std::sort(g.begin(), g.end());
      g.erase(std::unique(g.begin(), g.end()), g.end());
      std::sort(p.begin(), p.end());
      p.erase(std::unique(p.begin(), p.end()), p.end());
      gn = static_cast<long>(g.size());
      pn = static_cast<long>(p.size());
    }
    m.tp += inter;
    m.fp += pn - inter;
    m.fn += gn - inter;
  };
  level([](const schema::AnnotationTuple& t) { return t.code; }, report.code);
  level([](const schema::AnnotationTuple& t) { return t.subcode; }, report.subcode);

  std::vector<std::vector<int>> adj(gold.size());
  for (int g = 0; g < static_cast<int>(gold.size()); ++g) {
    for (int p = 0; p < static_cast<int>(pred.size()); ++p) {
      if (detail::span_match(gold.tuples[static_cast<std::size_t>(g)].span,
                             pred.tuples[static_cast<std::size_t>(p)].span,
                             opts.jaccard_threshold)) {
        adj[static_cast<std::size_t>(g)].push_back(p);
      }
    }
  }
  const long matched = detail::max_matching(adj, static_cast<int>(pred.size()));
  report.span.tp += matched;
  report.span.fp += static_cast<long>(pred.size()) - matched;
  report.span.fn += static_cast<long>(gold.size()) - matched;
}

// Total function over raw prediction text: unparseable predictions count as
// empty label sets (all gold items become false negatives) and are tallied
// per error kind.
inline MetricsReport evaluate_predictions(
    std::span<const std::pair<schema::LabelSet, std::string>> pairs,
    const schema::Codebook& cb, const EvalOptions& opts = {}) {
  MetricsReport report;
  report.options = opts;
  report.n_examples = static_cast<long>(pairs.size());
  for (const auto& [gold, raw] : pairs) {
    schema::LabelSet pred;
    bool ok = true;
    try {
      pred = schema::parse_output(raw, cb, /*collapse_duplicates=*/!opts.count_duplicates);
    } catch (const schema::MalformedOutput&) {
      ++report.malformed;
      ok = false;
    } catch (const schema::InvalidLabel&) {
      ++report.invalid_label;
      ok = false;
    } catch (const schema::HierarchyViolation&) {
      ++report.hierarchy_violation;
      ok = false;
    }
    if (!ok) {
      ++report.parse_failures;
      pred = schema::LabelSet{};
    }
    score_pair(gold, pred, opts, report);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Confusion tables
// ---------------------------------------------------------------------------

struct ConfusionRow {
  std::string level;  // "code" | "subcode"
  std::string gold;
  std::string pred;
  long count = 0;
};

// Top-k most frequent (gold -> pred) mismatches per level over Jaccard-matched
// spans; ties broken by label name.
inline std::vector<ConfusionRow> confusion_report(
    std::span<const std::pair<schema::LabelSet, schema::LabelSet>> pairs, int k = 5) {
  if (k < 1) throw std::invalid_argument("confusion_report: k must be >= 1");
  const prefs::ConfusionModel cm = prefs::extract_confusion_model(pairs);
  std::vector<ConfusionRow> rows;
  auto emit = [&](const std::string& level,
                  const std::map<std::string, std::map<std::string, long>>& counts) {
    std::vector<ConfusionRow> level_rows;
    for (const auto& [gold, row] : counts) {
      for (const auto& [pred, c] : row) level_rows.push_back({level, gold, pred, c});
    }
    std::sort(level_rows.begin(), level_rows.end(), [](const ConfusionRow& a, const ConfusionRow& b) {
      if (a.count != b.count) return a.count > b.count;
      if (a.gold != b.gold) return a.gold < b.gold;
      return a.pred < b.pred;
    });
    if (static_cast<int>(level_rows.size()) > k) level_rows.resize(static_cast<std::size_t>(k));
    rows.insert(rows.end(), level_rows.begin(), level_rows.end());
  };
  emit("code", cm.code_counts);
  emit("subcode", cm.sub_counts);
  return rows;
}

inline void save_confusion_csv(const std::filesystem::path& path,
                               std::span<const ConfusionRow> rows) {
  std::string out = "level,gold,pred,count\n";
  for (const auto& r : rows) {
    out += r.level + "," + r.gold + "," + r.pred + "," + std::to_string(r.count) + "\n";
  }
  write_file_atomic(path, out);
}

// Symmetric mismatch count for one confusable label pair: code-level when the
// codes differ, sub-code-level otherwise.
inline long count_pair_confusions(
    std::span<const std::pair<schema::LabelSet, schema::LabelSet>> pairs,
    const synth::ComboLabel& a, const synth::ComboLabel& b) {
  const prefs::ConfusionModel cm = prefs::extract_confusion_model(pairs);
  auto lookup = [](const std::map<std::string, std::map<std::string, long>>& counts,
                   const std::string& g, const std::string& p) -> long {
    auto it = counts.find(g);
    if (it == counts.end()) return 0;
    auto jt = it->second.find(p);
    return jt == it->second.end() ? 0 : jt->second;
  };
  if (a.code != b.code) {
    return lookup(cm.code_counts, a.code, b.code) + lookup(cm.code_counts, b.code, a.code);
  }
  return lookup(cm.sub_counts, a.subcode, b.subcode) + lookup(cm.sub_counts, b.subcode, a.subcode);
}

}  // namespace tabpo::eval
