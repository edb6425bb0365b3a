#include "tabpo/rng.hpp"
#include "tabpo/schema.hpp"
#include "tabpo/tokenizer.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace tabpo;

namespace {

schema::Codebook test_codebook() {
  schema::Codebook cb;
  cb.codes = {"A", "B"};
  cb.subcodes = {"X", "Y", "None"};
  cb.hierarchy["A"] = {"X", "Y"};
  cb.hierarchy["B"] = {"None"};
  cb.validate();
  return cb;
}

schema::LabelSet random_label_set(const schema::Codebook& cb, Rng& rng, int max_tuples = 4) {
  static const std::vector<std::string> spans = {
      "hi", "need a refill", "say \"hi\"", "back\\slash", "one two three", "a"};
  schema::LabelSet out;
  const int n = rng.uniform_int(max_tuples + 1);
  for (int i = 0; i < n; ++i) {
    const std::string& code = cb.codes[static_cast<std::size_t>(rng.uniform_int(2))];
    const auto& subs = cb.valid_subcodes(code);
    auto it = subs.begin();
    std::advance(it, rng.uniform_int(static_cast<int>(subs.size())));
    schema::AnnotationTuple t{code, *it,
                              spans[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(spans.size())))]};
    if (std::find(out.tuples.begin(), out.tuples.end(), t) == out.tuples.end()) {
      out.tuples.push_back(t);
    }
  }
  return out;
}

}  // namespace

TEST(Serialize, EmptyLabelSet) {
  EXPECT_EQ(schema::canonical_serialize(schema::LabelSet{}), "{\"results\": []}");
}

TEST(Serialize, SingleTupleGolden) {
  schema::LabelSet ls;
  ls.tuples.push_back({"C1", "S1", "hi"});
  EXPECT_EQ(schema::canonical_serialize(ls),
            "{\"results\": [{\"Code\": \"C1\", \"Sub-code\": \"S1\", \"Span\": \"hi\"}]}");
}

TEST(Serialize, RoundTripProperty) {
  const auto cb = test_codebook();
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ls = random_label_set(cb, rng);
    const std::string text = schema::canonical_serialize(ls);
    const auto parsed = schema::parse_output(text, cb);
    EXPECT_EQ(parsed, ls);
    EXPECT_EQ(schema::canonical_serialize(parsed), text);  // idempotent bytes
  }
}

TEST(Serialize, FieldSpansCoverValues) {
  schema::LabelSet ls;
  ls.tuples.push_back({"A", "X", "say \"hi\""});
  const auto ser = schema::canonical_serialize_with_spans(ls);
  ASSERT_EQ(ser.fields.size(), 3u);
  EXPECT_EQ(ser.text.substr(ser.fields[0].begin, ser.fields[0].end - ser.fields[0].begin), "A");
  EXPECT_EQ(ser.text.substr(ser.fields[1].begin, ser.fields[1].end - ser.fields[1].begin), "X");
  // span interior holds the escaped representation
  EXPECT_EQ(ser.text.substr(ser.fields[2].begin, ser.fields[2].end - ser.fields[2].begin),
            "say \\\"hi\\\"");
}

TEST(Parse, EmptyResults) {
  const auto cb = test_codebook();
  EXPECT_TRUE(schema::parse_output("{\"results\": []}", cb).empty());
}

TEST(Parse, TrailingProse) {
  const auto cb = test_codebook();
  EXPECT_THROW(schema::parse_output("{\"results\": []} sure!", cb), schema::MalformedOutput);
}

TEST(Parse, StructuralErrors) {
  const auto cb = test_codebook();
  EXPECT_THROW(schema::parse_output("not json", cb), schema::MalformedOutput);
  EXPECT_THROW(schema::parse_output("{\"results\": [{}]}", cb), schema::MalformedOutput);
  EXPECT_THROW(schema::parse_output("{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"X\"}]}", cb),
               schema::MalformedOutput);
  EXPECT_THROW(
      schema::parse_output(
          "{\"results\": [], \"extra\": 1}", cb),
      schema::MalformedOutput);
  EXPECT_THROW(
      schema::parse_output(
          "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"X\", \"Span\": 3}]}", cb),
      schema::MalformedOutput);
  EXPECT_THROW(
      schema::parse_output(
          "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"X\", \"Span\": \"\"}]}", cb),
      schema::MalformedOutput);
}

TEST(Parse, LabelErrors) {
  const auto cb = test_codebook();
  EXPECT_THROW(
      schema::parse_output(
          "{\"results\": [{\"Code\": \"Q\", \"Sub-code\": \"X\", \"Span\": \"hi\"}]}", cb),
      schema::InvalidLabel);
  EXPECT_THROW(
      schema::parse_output(
          "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"Q\", \"Span\": \"hi\"}]}", cb),
      schema::InvalidLabel);
  EXPECT_THROW(
      schema::parse_output(
          "{\"results\": [{\"Code\": \"B\", \"Sub-code\": \"X\", \"Span\": \"hi\"}]}", cb),
      schema::HierarchyViolation);
}

TEST(Parse, DuplicatesCollapse) {
  const auto cb = test_codebook();
  const std::string dup =
      "{\"results\": [{\"Code\": \"A\", \"Sub-code\": \"X\", \"Span\": \"hi\"}, "
      "{\"Code\": \"A\", \"Sub-code\": \"X\", \"Span\": \"hi\"}]}";
  int n_dups = 0;
  const auto ls = schema::parse_output(dup, cb, true, &n_dups);
  EXPECT_EQ(ls.size(), 1u);
  EXPECT_EQ(n_dups, 1);
  const auto kept = schema::parse_output(dup, cb, false);
  EXPECT_EQ(kept.size(), 2u);
}

TEST(Validate, ReportsGroundingAndHierarchy) {
  const auto cb = test_codebook();
  schema::LabelSet ls;
  ls.tuples.push_back({"A", "X", "refill please"});
  ls.tuples.push_back({"A", "X", "xyz"});
  ls.tuples.push_back({"B", "X", "refill"});
  const auto report = schema::validate_label_set(ls, cb, "refill please now");
  ASSERT_EQ(report.checks.size(), 3u);
  EXPECT_TRUE(report.checks[0].hierarchy_ok);
  EXPECT_TRUE(report.checks[0].grounded);
  EXPECT_FALSE(report.checks[1].grounded);
  EXPECT_FALSE(report.checks[2].hierarchy_ok);
  EXPECT_FALSE(report.pass);
}

TEST(Codebook, InvariantViolations) {
  schema::Codebook cb = test_codebook();
  cb.hierarchy["A"].insert("Z");  // not in inventory
  EXPECT_THROW(cb.validate(), schema::SchemaError);

  schema::Codebook dup = test_codebook();
  dup.codes.push_back("A");
  EXPECT_THROW(dup.validate(), schema::SchemaError);

  schema::Codebook empty = test_codebook();
  empty.hierarchy["A"].clear();
  EXPECT_THROW(empty.validate(), schema::SchemaError);
}

TEST(Codebook, JsonRoundTrip) {
  const auto cb = test_codebook();
  const auto back = schema::Codebook::from_json(cb.to_json());
  EXPECT_EQ(back.codes, cb.codes);
  EXPECT_EQ(back.subcodes, cb.subcodes);
  EXPECT_EQ(back.hierarchy, cb.hierarchy);
}

// ---------------------------------------------------------------------------

TEST(Tokenizer, EmptyResultsHasNoFields) {
  const auto tc = tok::tokenize_with_fields("prompt", "{\"results\": []}");
  EXPECT_TRUE(tc.t_code.empty());
  EXPECT_TRUE(tc.t_sub.empty());
  EXPECT_TRUE(tc.t_span.empty());
  for (double w : tc.weights) EXPECT_EQ(w, 0.0);
  EXPECT_EQ(tc.tokens.back(), tok::kEos);
  EXPECT_GE(std::count(tc.completion_mask.begin(), tc.completion_mask.end(), 1), 1);
}

TEST(Tokenizer, FieldSetsDisjointAndMasked) {
  schema::LabelSet ls;
  ls.tuples.push_back({"A", "X", "say hi"});
  ls.tuples.push_back({"B", "None", "bye"});
  const auto tc = tok::tokenize_with_fields("msg", schema::canonical_serialize(ls));
  EXPECT_GE(tc.t_code.size(), 1u);
  EXPECT_GE(tc.t_sub.size(), 1u);
  EXPECT_GE(tc.t_span.size(), 1u);

  std::set<int> all;
  for (int i : tc.t_code) EXPECT_TRUE(all.insert(i).second);
  for (int i : tc.t_sub) EXPECT_TRUE(all.insert(i).second);
  for (int i : tc.t_span) EXPECT_TRUE(all.insert(i).second);
  for (int i : all) {
    EXPECT_EQ(tc.completion_mask[static_cast<std::size_t>(i)], 1);
  }
  for (std::size_t i = 0; i < tc.prompt_len; ++i) EXPECT_EQ(tc.completion_mask[i], 0);

  // byte tokenizer: field tokens decode to the exact value characters
  std::string code_text;
  for (int i : tc.t_code) code_text.push_back(static_cast<char>(tc.tokens[static_cast<std::size_t>(i)]));
  EXPECT_EQ(code_text, "AB");
}

TEST(Tokenizer, Deterministic) {
  schema::LabelSet ls;
  ls.tuples.push_back({"A", "Y", "one two"});
  const auto a = tok::tokenize_with_fields("p", schema::canonical_serialize(ls));
  const auto b = tok::tokenize_with_fields("p", schema::canonical_serialize(ls));
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.completion_mask, b.completion_mask);
  EXPECT_EQ(a.t_span, b.t_span);
}

TEST(Tokenizer, NonCanonicalCompletionFails) {
  EXPECT_THROW(tok::tokenize_with_fields("p", "{\"results\":[]}"), tok::FieldRecoveryFailure);
  EXPECT_THROW(tok::tokenize_with_fields("p", "{\"results\": []} "), tok::FieldRecoveryFailure);
  EXPECT_THROW(tok::tokenize_with_fields("p", "free text"), tok::FieldRecoveryFailure);
}
