#include "tabpo/confusion.hpp"
#include "tabpo/synthetic.hpp"

#include <gtest/gtest.h>

using namespace tabpo;

namespace {

schema::LabelSet labels(std::initializer_list<schema::AnnotationTuple> ts) {
  schema::LabelSet ls;
  for (const auto& t : ts) ls.tuples.push_back(t);
  return ls;
}

std::string scaffold_of(const schema::LabelSet& ls) {
  const auto ser = schema::canonical_serialize_with_spans(ls);
  std::string out;
  std::size_t pos = 0;
  for (const auto& f : ser.fields) {
    out += ser.text.substr(pos, f.begin - pos);
    out += "*";
    pos = f.end;
  }
  out += ser.text.substr(pos);
  return out;
}

}  // namespace

TEST(Jaccard, SpotValues) {
  EXPECT_EQ(prefs::jaccard_similarity("need a refill", "need a refill"), 1.0);
  EXPECT_NEAR(prefs::jaccard_similarity("a b c", "b c d"), 0.5, 1e-12);
  EXPECT_EQ(prefs::jaccard_similarity("one two", "three four"), 0.0);
  EXPECT_EQ(prefs::jaccard_similarity("", "  "), 1.0);
  EXPECT_EQ(prefs::jaccard_similarity("Hello", "hello"), 1.0);  // lowercased
}

TEST(MatchSpans, IdentityAndThreshold) {
  const auto gold = labels({{"A", "X", "one two"}, {"B", "None", "three four"}});
  const auto matches = prefs::match_spans(gold, gold, 0.6);
  ASSERT_EQ(matches.size(), 2u);
  EXPECT_EQ(matches[0], (std::pair<int, int>{0, 0}));
  EXPECT_EQ(matches[1], (std::pair<int, int>{1, 1}));

  const auto pred = labels({{"A", "X", "five six"}});
  EXPECT_TRUE(prefs::match_spans(gold, pred, 0.6).empty());
}

TEST(MatchSpans, GreedyPrefersHigherJaccard) {
  // gold has 10 tokens; pred0 shares 9 (J=0.9), pred1 shares 7 (J=0.7)
  const std::string g = "a b c d e f g h i j";
  const auto gold = labels({{"A", "X", g}});
  const auto pred = labels({{"A", "X", "a b c d e f g h i"},
                            {"A", "X", "a b c d e f g"}});
  const auto matches = prefs::match_spans(gold, pred, 0.6);
  ASSERT_EQ(matches.size(), 1u);
  EXPECT_EQ(matches[0], (std::pair<int, int>{0, 0}));
}

TEST(ConfusionModel, ExtractAndNormalize) {
  const auto gold = labels({{"C1", "S1", "x y"}});
  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> same = {{gold, gold}};
  const auto clean = prefs::extract_confusion_model(same);
  EXPECT_TRUE(clean.code_counts.empty());
  EXPECT_TRUE(clean.sub_counts.empty());
  EXPECT_EQ(clean.code_matches, 1);

  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> pairs;
  for (int i = 0; i < 3; ++i) pairs.push_back({gold, labels({{"C2", "S1", "x y"}})});
  pairs.push_back({gold, labels({{"C3", "S1", "x y"}})});
  const auto cm = prefs::extract_confusion_model(pairs);
  const auto dist = cm.code_conf("C1");
  EXPECT_NEAR(dist.at("C2"), 0.75, 1e-12);
  EXPECT_NEAR(dist.at("C3"), 0.25, 1e-12);
  double total = 0.0;
  for (const auto& [_, p] : dist) total += p;
  EXPECT_NEAR(total, 1.0, 1e-9);

  // single mismatch -> all mass on the one confused label
  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> one = {
      {gold, labels({{"C2", "S1", "x y"}})}};
  EXPECT_NEAR(prefs::extract_confusion_model(one).code_conf("C1").at("C2"), 1.0, 1e-12);
}

TEST(ConfusionModel, TopQuartileKeepsHeaviestPairs) {
  prefs::ConfusionModel cm;
  cm.code_counts["A"]["B"] = 90;
  cm.code_counts["A"]["C"] = 20;
  cm.code_counts["D"]["E"] = 5;
  const auto top = prefs::top_quartile_model(cm);
  EXPECT_EQ(top.code_counts.size(), 1u);
  EXPECT_EQ(top.code_counts.at("A").at("B"), 90);
}

TEST(Perturb, PropertiesOverSeededDraws) {
  const auto spec = synth::default_task_spec();
  const auto& cb = spec.codebook;
  prefs::ConfusionModel cm;
  cm.code_counts["C2"]["C3"] = 4;
  cm.sub_counts["S10"]["S11"] = 3;

  const auto gold = labels({{"C2", "S10", "alpha beta"},
                            {"C1", "S2", "gamma delta"},
                            {"C6", "None", "epsilon zeta"}});
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    const auto out =
        prefs::perturb_label_set(gold, prefs::Family::confusion, cm, cb, "msg", rng);
    ASSERT_EQ(out.size(), gold.size());
    bool changed = false;
    for (std::size_t k = 0; k < out.size(); ++k) {
      EXPECT_EQ(out.tuples[k].span, gold.tuples[k].span);
      EXPECT_TRUE(cb.valid_pair(out.tuples[k].code, out.tuples[k].subcode));
      changed |= !(out.tuples[k] == gold.tuples[k]);
    }
    EXPECT_TRUE(changed);
    std::set<schema::AnnotationTuple> uniq(out.tuples.begin(), out.tuples.end());
    EXPECT_EQ(uniq.size(), out.size());
  }

  for (int i = 0; i < 500; ++i) {
    const auto out = prefs::perturb_label_set(gold, prefs::Family::deletion, cm, cb, "msg", rng);
    EXPECT_EQ(out.size(), gold.size() - 1);
    for (const auto& t : out.tuples) {
      EXPECT_TRUE(std::find(gold.tuples.begin(), gold.tuples.end(), t) != gold.tuples.end());
    }
  }

  for (int i = 0; i < 500; ++i) {
    const auto out = prefs::perturb_label_set(gold, prefs::Family::insertion, cm, cb, "msg", rng);
    ASSERT_EQ(out.size(), gold.size() + 1);
    for (std::size_t k = 0; k < gold.size(); ++k) EXPECT_EQ(out.tuples[k], gold.tuples[k]);
    const auto& extra = out.tuples.back();
    EXPECT_TRUE(cb.valid_pair(extra.code, extra.subcode));
    bool substring = false;
    for (const auto& t : gold.tuples) {
      substring |= t.span.find(extra.span) != std::string::npos;
    }
    EXPECT_TRUE(substring);
  }
}

TEST(Perturb, UnavailableCases) {
  const auto spec = synth::default_task_spec();
  prefs::ConfusionModel cm;
  Rng rng(1);
  const schema::LabelSet empty;
  EXPECT_THROW(prefs::perturb_label_set(empty, prefs::Family::confusion, cm, spec.codebook, "m", rng),
               prefs::PerturbationUnavailable);
  EXPECT_THROW(prefs::perturb_label_set(empty, prefs::Family::insertion, cm, spec.codebook, "m", rng),
               prefs::PerturbationUnavailable);
  const auto single = labels({{"C1", "S1", "x"}});
  EXPECT_THROW(prefs::perturb_label_set(single, prefs::Family::deletion, cm, spec.codebook, "m", rng),
               prefs::PerturbationUnavailable);
}

TEST(Perturb, MaxPerturbedCapsEdits) {
  const auto spec = synth::default_task_spec();
  prefs::ConfusionModel cm;
  const auto gold = labels({{"C1", "S1", "a"}, {"C4", "S18", "b"}, {"C5", "S21", "c"}});
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto out =
        prefs::perturb_label_set(gold, prefs::Family::confusion, cm, spec.codebook, "m", rng, 1);
    int changed = 0;
    for (std::size_t k = 0; k < out.size(); ++k) changed += !(out.tuples[k] == gold.tuples[k]);
    EXPECT_EQ(changed, 1);
  }
}

TEST(BuildPrefs, QuotasDeterminismAndValidity) {
  auto spec = synth::default_task_spec();
  spec.n_examples = 300;
  const auto corpus = synth::generate_corpus(spec);
  prefs::ConfusionModel cm;
  cm.code_counts["C2"]["C3"] = 10;
  cm.sub_counts["S10"]["S11"] = 6;

  prefs::BuildReport report;
  const auto triples = prefs::build_preference_dataset(corpus, cm, spec.codebook, {}, 0.4, 1000,
                                                       9, &report);
  ASSERT_EQ(triples.size(), 1000u);

  std::map<std::string, long> hist;
  for (const auto& t : triples) ++hist[prefs::family_name(t.family)];
  EXPECT_NEAR(hist["curated_standin"] / 1000.0, 0.4, 0.03);
  EXPECT_NEAR(hist["confusion"] / 1000.0, 0.36, 0.03);
  EXPECT_NEAR(hist["deletion"] / 1000.0, 0.12, 0.03);
  EXPECT_NEAR(hist["insertion"] / 1000.0, 0.12, 0.03);

  for (const auto& t : triples) {
    EXPECT_FALSE(t.chosen == t.rejected);
    const auto report_r = schema::validate_label_set(
        t.rejected, spec.codebook,
        "");  // hierarchy only; spans of rejected needn't ground in ""
    for (const auto& check : report_r.checks) EXPECT_TRUE(check.hierarchy_ok);
    // round-trips through the canonical serializer
    const auto back =
        schema::parse_output(schema::canonical_serialize(t.rejected), spec.codebook);
    EXPECT_EQ(back, t.rejected);
  }

  // determinism: identical inputs and seed -> byte-identical file
  const auto path_a = std::filesystem::temp_directory_path() / "tabpo_prefs_a.jsonl";
  const auto path_b = std::filesystem::temp_directory_path() / "tabpo_prefs_b.jsonl";
  prefs::save_preferences(path_a, triples);
  const auto again = prefs::build_preference_dataset(corpus, cm, spec.codebook, {}, 0.4, 1000, 9);
  prefs::save_preferences(path_b, again);
  EXPECT_EQ(read_file(path_a), read_file(path_b));
  std::filesystem::remove(path_a);
  std::filesystem::remove(path_b);
}

TEST(BuildPrefs, DeletionOnlyMixtureYieldsStrictSubsets) {
  auto spec = synth::default_task_spec();
  spec.n_examples = 200;
  const auto corpus = synth::generate_corpus(spec);
  prefs::ConfusionModel cm;
  const auto triples = prefs::build_preference_dataset(
      corpus, cm, spec.codebook, prefs::MixtureWeights{0.0, 1.0, 0.0}, 0.0, 100, 3);
  ASSERT_EQ(triples.size(), 100u);
  for (const auto& t : triples) {
    EXPECT_EQ(t.family, prefs::Family::deletion);
    EXPECT_EQ(t.rejected.size(), t.chosen.size() - 1);
    for (const auto& tuple : t.rejected.tuples) {
      EXPECT_TRUE(std::find(t.chosen.tuples.begin(), t.chosen.tuples.end(), tuple) !=
                  t.chosen.tuples.end());
    }
  }
}

TEST(BuildPrefs, EmptyRequestAndScaffoldInvariance) {
  auto spec = synth::default_task_spec();
  spec.n_examples = 100;
  const auto corpus = synth::generate_corpus(spec);
  prefs::ConfusionModel cm;
  EXPECT_TRUE(prefs::build_preference_dataset(corpus, cm, spec.codebook, {}, 0.4, 0, 1).empty());

  // confusion-family rejects differ from chosen only inside field values
  const auto triples = prefs::build_preference_dataset(
      corpus, cm, spec.codebook, prefs::MixtureWeights{1.0, 0.0, 0.0}, 0.0, 50, 2);
  for (const auto& t : triples) {
    EXPECT_EQ(scaffold_of(t.chosen), scaffold_of(t.rejected));
  }
}

TEST(PrefsIo, RoundTrip) {
  auto spec = synth::default_task_spec();
  spec.n_examples = 60;
  const auto corpus = synth::generate_corpus(spec);
  prefs::ConfusionModel cm;
  const auto triples = prefs::build_preference_dataset(corpus, cm, spec.codebook, {}, 0.4, 40, 4);
  const auto path = std::filesystem::temp_directory_path() / "tabpo_prefs_io.jsonl";
  prefs::save_preferences(path, triples);
  const auto loaded = prefs::load_preferences(path, spec.codebook);
  ASSERT_EQ(loaded.size(), triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    EXPECT_EQ(loaded[i].prompt, triples[i].prompt);
    EXPECT_EQ(loaded[i].chosen, triples[i].chosen);
    EXPECT_EQ(loaded[i].rejected, triples[i].rejected);
    EXPECT_EQ(loaded[i].family, triples[i].family);
  }
  std::filesystem::remove(path);
}

TEST(ConfusionModelIo, RoundTrip) {
  prefs::ConfusionModel cm;
  cm.code_counts["A"]["B"] = 3;
  cm.sub_counts["X"]["Y"] = 2;
  cm.code_matches = 5;
  cm.sub_mismatches = 2;
  const auto path = std::filesystem::temp_directory_path() / "tabpo_cm.json";
  prefs::save_confusion_model(path, cm);
  const auto back = prefs::load_confusion_model(path);
  EXPECT_EQ(back.code_counts, cm.code_counts);
  EXPECT_EQ(back.sub_counts, cm.sub_counts);
  EXPECT_EQ(back.code_matches, 5);
  std::filesystem::remove(path);
}
