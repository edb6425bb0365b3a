#include "tabpo/eval.hpp"
#include "tabpo/rng.hpp"
#include "tabpo/synthetic.hpp"

#include <gtest/gtest.h>

using namespace tabpo;

namespace {

schema::Codebook test_codebook() {
  schema::Codebook cb;
  cb.codes = {"A", "B", "C"};
  cb.subcodes = {"X", "Y", "Z", "None"};
  cb.hierarchy["A"] = {"X", "Y"};
  cb.hierarchy["B"] = {"X", "Z"};
  cb.hierarchy["C"] = {"None"};
  cb.validate();
  return cb;
}

schema::LabelSet labels(std::initializer_list<schema::AnnotationTuple> ts) {
  schema::LabelSet ls;
  for (const auto& t : ts) ls.tuples.push_back(t);
  return ls;
}

// Independent oracle: exhaustive enumeration over all one-to-one assignments.
long oracle_max_matching(const std::vector<std::vector<bool>>& ok) {
  const int n = static_cast<int>(ok.size());
  if (n == 0) return 0;
  const int m = static_cast<int>(ok[0].size());
  long best = 0;
  std::vector<int> used(static_cast<std::size_t>(m), 0);
  std::function<void(int, long)> rec = [&](int g, long matched) {
    best = std::max(best, matched);
    if (g == n) return;
    rec(g + 1, matched);  // leave g unmatched
    for (int p = 0; p < m; ++p) {
      if (!used[static_cast<std::size_t>(p)] && ok[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)]) {
        used[static_cast<std::size_t>(p)] = 1;
        rec(g + 1, matched + 1);
        used[static_cast<std::size_t>(p)] = 0;
      }
    }
  };
  rec(0, 0);
  return best;
}

struct OracleCounts {
  long tp = 0, fp = 0, fn = 0;
};

OracleCounts oracle_level(const std::vector<std::string>& gold, const std::vector<std::string>& pred) {
  std::vector<std::vector<bool>> ok(gold.size(), std::vector<bool>(pred.size(), false));
  for (std::size_t g = 0; g < gold.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) ok[g][p] = gold[g] == pred[p];
  }
  OracleCounts c;
  c.tp = oracle_max_matching(ok);
  c.fp = static_cast<long>(pred.size()) - c.tp;
  c.fn = static_cast<long>(gold.size()) - c.tp;
  return c;
}

OracleCounts oracle_span(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                         double threshold) {
  std::vector<std::vector<bool>> ok(gold.size(), std::vector<bool>(pred.size(), false));
  for (std::size_t g = 0; g < gold.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      const auto tg = prefs::span_token_set(gold[g]);
      const auto tp_ = prefs::span_token_set(pred[p]);
      const bool contain = std::includes(tg.begin(), tg.end(), tp_.begin(), tp_.end()) ||
                           std::includes(tp_.begin(), tp_.end(), tg.begin(), tg.end());
      ok[g][p] = contain || prefs::jaccard_similarity(gold[g], pred[p]) >= threshold;
    }
  }
  OracleCounts c;
  c.tp = oracle_max_matching(ok);
  c.fp = static_cast<long>(pred.size()) - c.tp;
  c.fn = static_cast<long>(gold.size()) - c.tp;
  return c;
}

}  // namespace

TEST(Eval, PerfectPredictions) {
  const auto cb = test_codebook();
  const auto gold = labels({{"A", "X", "one two"}, {"B", "Z", "three"}});
  std::vector<std::pair<schema::LabelSet, std::string>> pairs = {
      {gold, schema::canonical_serialize(gold)}};
  const auto report = eval::evaluate_predictions(pairs, cb);
  for (const auto* m : {&report.code, &report.subcode, &report.span}) {
    EXPECT_EQ(m->precision(), 1.0);
    EXPECT_EQ(m->recall(), 1.0);
    EXPECT_EQ(m->f1(), 1.0);
  }
  EXPECT_EQ(report.parse_failures, 0);
}

TEST(Eval, HandCountedCodes) {
  const auto cb = test_codebook();
  // pred codes {A,B}, gold codes {A,C} -> TP=1, FP=1, FN=1 -> P=R=F1=0.5
  const auto gold = labels({{"A", "X", "one"}, {"C", "None", "two"}});
  const auto pred = labels({{"A", "X", "one"}, {"B", "Z", "two"}});
  std::vector<std::pair<schema::LabelSet, std::string>> pairs = {
      {gold, schema::canonical_serialize(pred)}};
  const auto report = eval::evaluate_predictions(pairs, cb);
  EXPECT_NEAR(report.code.precision(), 0.5, 1e-12);
  EXPECT_NEAR(report.code.recall(), 0.5, 1e-12);
  EXPECT_NEAR(report.code.f1(), 0.5, 1e-12);
}

TEST(Eval, ContainmentBothDirections) {
  const auto cb = test_codebook();
  // prediction contained in gold: J = 2/5 = 0.4 < 0.6, still a TP
  const auto gold = labels({{"A", "X", "a b c d e"}});
  const auto pred = labels({{"A", "X", "a b"}});
  std::vector<std::pair<schema::LabelSet, std::string>> pairs = {
      {gold, schema::canonical_serialize(pred)}};
  EXPECT_EQ(eval::evaluate_predictions(pairs, cb).span.tp, 1);

  // gold contained in prediction
  std::vector<std::pair<schema::LabelSet, std::string>> flipped = {
      {pred, schema::canonical_serialize(gold)}};
  EXPECT_EQ(eval::evaluate_predictions(flipped, cb).span.tp, 1);
}

TEST(Eval, UnparseableCountsAsEmpty) {
  const auto cb = test_codebook();
  const auto gold = labels({{"A", "X", "one"}, {"B", "Z", "two"}});
  std::vector<std::pair<schema::LabelSet, std::string>> pairs = {
      {gold, "certainly! here is my annotation"},
      {gold, "{\"results\": [{\"Code\": \"Q\", \"Sub-code\": \"X\", \"Span\": \"one\"}]}"},
      {gold, "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"Z\", \"Span\": \"one\"}]}"},
  };
  const auto report = eval::evaluate_predictions(pairs, cb);
  EXPECT_EQ(report.parse_failures, 3);
  EXPECT_EQ(report.malformed, 1);
  EXPECT_EQ(report.invalid_label, 1);
  EXPECT_EQ(report.hierarchy_violation, 1);
  EXPECT_EQ(report.code.fn, 6);
  EXPECT_EQ(report.code.tp, 0);
  EXPECT_EQ(report.span.fn, 6);
}

TEST(Eval, DuplicatePredictionsPolicy) {
  const auto cb = test_codebook();
  const auto gold = labels({{"A", "X", "one"}});
  const std::string dup =
      "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"X\", \"Span\": \"one\"}, "
      "{\"Code\": \"A\", \"Sub-code\": \"X\", \"Span\": \"one\"}]}";
  std::vector<std::pair<schema::LabelSet, std::string>> pairs = {{gold, dup}};
  const auto collapsed = eval::evaluate_predictions(pairs, cb);
  EXPECT_EQ(collapsed.code.fp, 0);
  eval::EvalOptions opts;
  opts.count_duplicates = true;
  const auto counted = eval::evaluate_predictions(pairs, cb, opts);
  EXPECT_EQ(counted.code.fp, 1);  // duplicate spam penalized under multiset scoring
}

TEST(Eval, OracleEquivalenceOnRandomInstances) {
  const auto cb = test_codebook();
  static const std::vector<std::string> span_pool = {
      "a b",  "a b c",  "c d", "d e f", "x",  "x y",
      "y z w", "a c e", "q r", "r s t", "m n", "n"};
  Rng rng(123);
  const eval::EvalOptions opts;

  for (int trial = 0; trial < 400; ++trial) {
    auto random_set = [&](int max_n) {
      schema::LabelSet ls;
      const int n = rng.uniform_int(max_n + 1);
      for (int i = 0; i < n; ++i) {
        const std::string& code = cb.codes[static_cast<std::size_t>(rng.uniform_int(3))];
        const auto& subs = cb.valid_subcodes(code);
        auto it = subs.begin();
        std::advance(it, rng.uniform_int(static_cast<int>(subs.size())));
        ls.tuples.push_back(
            {code, *it,
             span_pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(span_pool.size())))]});
      }
      return ls;
    };
    const auto gold = random_set(5);
    const auto pred = random_set(5);

    eval::MetricsReport got;
    got.options = opts;
    eval::score_pair(gold, pred, opts, got);

    std::vector<std::string> g_code, p_code, g_sub, p_sub, g_span, p_span;
    for (const auto& t : gold.tuples) {
      g_code.push_back(t.code);
      g_sub.push_back(t.subcode);
      g_span.push_back(t.span);
    }
    for (const auto& t : pred.tuples) {
      p_code.push_back(t.code);
      p_sub.push_back(t.subcode);
      p_span.push_back(t.span);
    }
    const auto oc = oracle_level(g_code, p_code);
    const auto os = oracle_level(g_sub, p_sub);
    const auto osp = oracle_span(g_span, p_span, opts.jaccard_threshold);
    EXPECT_EQ(got.code.tp, oc.tp);
    EXPECT_EQ(got.code.fp, oc.fp);
    EXPECT_EQ(got.code.fn, oc.fn);
    EXPECT_EQ(got.subcode.tp, os.tp);
    EXPECT_EQ(got.span.tp, osp.tp);
    EXPECT_EQ(got.span.fp, osp.fp);
    EXPECT_EQ(got.span.fn, osp.fn);

    EXPECT_LE(got.span.tp, std::min(gold.size(), pred.size()));
    for (const auto* m : {&got.code, &got.subcode, &got.span}) {
      EXPECT_GE(m->precision(), 0.0);
      EXPECT_LE(m->precision(), 1.0);
      EXPECT_GE(m->f1(), 0.0);
      EXPECT_LE(m->f1(), 1.0);
    }
  }
}

TEST(ConfusionReport, TopK) {
  const auto gold = labels({{"A", "X", "one two"}});
  const auto pred = labels({{"B", "X", "one two"}});
  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> pairs;
  for (int i = 0; i < 5; ++i) pairs.push_back({gold, pred});
  const auto rows = eval::confusion_report(pairs, 5);
  ASSERT_EQ(rows.size(), 1u);  // only the code level mismatches
  EXPECT_EQ(rows[0].level, "code");
  EXPECT_EQ(rows[0].gold, "A");
  EXPECT_EQ(rows[0].pred, "B");
  EXPECT_EQ(rows[0].count, 5);

  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> clean = {{gold, gold}};
  EXPECT_TRUE(eval::confusion_report(clean, 5).empty());
}

TEST(ConfusionReport, PairCounting) {
  const auto a_set = labels({{"A", "X", "one two"}});
  const auto b_set = labels({{"B", "X", "one two"}});
  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> pairs = {
      {a_set, b_set}, {b_set, a_set}, {a_set, b_set}};
  EXPECT_EQ(eval::count_pair_confusions(pairs, {"A", "X"}, {"B", "X"}), 3);

  const auto ax = labels({{"A", "X", "s t"}});
  const auto ay = labels({{"A", "Y", "s t"}});
  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> sub_pairs = {{ax, ay}, {ay, ax}};
  EXPECT_EQ(eval::count_pair_confusions(sub_pairs, {"A", "X"}, {"A", "Y"}), 2);
}
