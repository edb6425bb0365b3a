#include "tabpo/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tabpo;

namespace {

train::TrainConfig tiny_train_config(std::uint64_t seed = 3) {
  train::TrainConfig cfg;
  cfg.model.vocab_size = tok::kVocabSize;
  cfg.model.context_window = 8;
  cfg.model.embed_dim = 6;
  cfg.model.hidden_dim = 12;
  cfg.model.init_scale = 0.2;
  cfg.model.seed = seed;
  cfg.model.pooling = policy::Pooling::concat;
  cfg.lr = 3e-3;
  cfg.steps = 40;
  cfg.batch_size = 4;
  cfg.seed = seed;
  return cfg;
}

synth::Corpus tiny_corpus(int n = 20) {
  auto spec = synth::default_task_spec();
  spec.n_examples = n;
  spec.seed = 17;
  return synth::generate_corpus(spec);
}

std::vector<prefs::PreferenceTriple> tiny_prefs(const synth::Corpus& corpus,
                                                const schema::Codebook& cb, long n = 24) {
  prefs::ConfusionModel cm;
  cm.code_counts["C2"]["C3"] = 2;
  return prefs::build_preference_dataset(corpus, cm, cb, {}, 0.4, n, 5);
}

}  // namespace

TEST(Sft, LossDecreasesAndIsDeterministic) {
  const auto corpus = tiny_corpus();
  auto cfg = tiny_train_config();
  const auto a = train::run_sft(cfg, corpus);
  EXPECT_LT(a.final_loss, a.initial_loss);

  const auto b = train::run_sft(cfg, corpus);
  ASSERT_EQ(a.params.flat.size(), b.params.flat.size());
  for (std::size_t i = 0; i < a.params.flat.size(); ++i) {
    ASSERT_EQ(a.params.flat[i], b.params.flat[i]);
  }
}

TEST(Sft, ZeroLearningRateLeavesParamsUnchanged) {
  const auto corpus = tiny_corpus(5);
  auto cfg = tiny_train_config();
  cfg.lr = 0.0;
  cfg.steps = 5;
  const auto result = train::run_sft(cfg, corpus);
  const auto fresh = policy::PolicyParams::init(cfg.model);
  for (std::size_t i = 0; i < fresh.flat.size(); ++i) {
    EXPECT_EQ(result.params.flat[i], fresh.flat[i]);
  }
}

TEST(Sft, OverfitsSingleExample) {
  // a single-tuple example: every byte window is unique, so the model can
  // memorize the completion
  const auto full = tiny_corpus(20);
  synth::Corpus corpus;
  for (const auto& ex : full.examples) {
    if (ex.gold.size() == 1) {
      corpus.examples.push_back(ex);
      break;
    }
  }
  ASSERT_EQ(corpus.examples.size(), 1u);
  auto cfg = tiny_train_config(9);
  cfg.model.context_window = 24;
  cfg.model.hidden_dim = 16;
  cfg.steps = 500;
  cfg.batch_size = 1;
  cfg.lr = 8e-3;
  train::RunLog log("");
  const auto result = train::run_sft(cfg, corpus, &log);
  EXPECT_LT(result.final_loss, 0.1 * result.initial_loss);

  // gold-token probabilities all above 0.9
  const auto tc = train::tokenize_example(corpus.examples[0]);
  const auto lp = policy::sequence_log_probs(result.params, tc.tokens, tc.prompt_len);
  for (std::size_t i = tc.prompt_len; i < tc.tokens.size(); ++i) {
    EXPECT_GT(std::exp(lp[i]), 0.9);
  }

  // greedy decoding reproduces the completion exactly
  std::string prompt = synth::build_prompt(corpus.examples[0]);
  prompt.push_back('\n');
  const std::string decoded =
      policy::greedy_decode(result.params, tok::encode_bytes(prompt), 256);
  EXPECT_EQ(decoded, schema::canonical_serialize(corpus.examples[0].gold));

  // run log captured every step
  EXPECT_EQ(log.records.size(), 500u);
  EXPECT_EQ(log.records.front().at("step").get<int>(), 0);
}

TEST(Tabpo, FirstStepEqualsDpoUnderReduction) {
  const auto corpus = tiny_corpus();
  auto cfg = tiny_train_config();
  cfg.steps = 1;
  const auto sft = train::run_sft(cfg, corpus);

  const auto cb = synth::default_task_spec().codebook;
  const auto triples = tiny_prefs(corpus, cb);

  auto pocfg = cfg;
  pocfg.objective.lambda_sft = 0.0;
  pocfg.objective.token_weighting = false;
  pocfg.objective.length_norm = false;
  pocfg.objective.class_balance = false;
  pocfg.steps = 1;
  pocfg.lr = 0.0;
  const auto result = train::run_tabpo(pocfg, sft.params, triples);

  // replicate the sampled batch and compute plain DPO by hand
  Rng rng(pocfg.seed);
  double manual = 0.0;
  policy::Scratch s;
  auto plain_sum = [&](const policy::PolicyParams& p, const tok::TokenizedCompletion& tc) {
    const auto lp = policy::sequence_log_probs(p, tc.tokens, tc.prompt_len, s);
    double sum = 0.0;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (tc.completion_mask[i]) sum += lp[i];
    }
    return sum;
  };
  for (int b = 0; b < pocfg.batch_size; ++b) {
    const auto& t = triples[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(triples.size())))];
    const auto tt = train::tokenize_triple(t);
    const double delta =
        (plain_sum(sft.params, tt.pos) - plain_sum(sft.params, tt.neg)) -
        (plain_sum(sft.params, tt.pos) - plain_sum(sft.params, tt.neg));
    manual += obj::preference_loss(delta, pocfg.objective.beta) / pocfg.batch_size;
  }
  EXPECT_NEAR(result.initial_loss, manual, 1e-12);
  EXPECT_NEAR(result.initial_loss, std::log(2.0), 1e-12);  // policy == reference at step 1
}

TEST(Tabpo, ReferenceStaysFrozenAndDeltaImproves) {
  const auto corpus = tiny_corpus(40);
  auto cfg = tiny_train_config(21);
  cfg.model.context_window = 16;
  cfg.model.embed_dim = 8;
  cfg.model.hidden_dim = 16;
  cfg.lr = 5e-3;
  cfg.steps = 600;
  cfg.batch_size = 6;
  const auto sft = train::run_sft(cfg, corpus);
  const auto sft_copy = sft.params.flat;

  const auto cb = synth::default_task_spec().codebook;
  const auto triples = tiny_prefs(corpus, cb, 30);

  auto pocfg = cfg;
  pocfg.steps = 200;
  pocfg.lr = 2e-3;
  train::RunLog log("");
  const auto result = train::run_tabpo(pocfg, sft.params, triples, &log);

  // caller's checkpoint untouched
  EXPECT_EQ(sft.params.flat, sft_copy);

  // mean weighted advantage over the dataset increases from its zero start
  double mean_delta = 0.0;
  for (const auto& t : triples) {
    const auto tt = train::tokenize_triple(t);
    const auto w_pos = obj::compute_token_weights(tt.pos, &tt.neg, pocfg.weights);
    const auto w_neg = obj::compute_token_weights(tt.neg, &tt.pos, pocfg.weights);
    mean_delta += obj::preference_delta(result.params, sft.params, tt.pos, tt.neg, w_pos, w_neg,
                                        pocfg.objective.length_norm);
  }
  mean_delta /= static_cast<double>(triples.size());
  EXPECT_GT(mean_delta, 0.0);

  // run log covers every step with the squeezing monitor fields
  EXPECT_EQ(log.records.size(), static_cast<std::size_t>(pocfg.steps));
  EXPECT_TRUE(log.records.front().contains("chosen_loglik"));
  EXPECT_TRUE(log.records.front().contains("gate_fraction"));

  // determinism
  const auto again = train::run_tabpo(pocfg, sft.params, triples);
  EXPECT_EQ(again.params.flat, result.params.flat);
}

TEST(Tabpo, EmptyPrefsRejected) {
  const auto corpus = tiny_corpus(5);
  auto cfg = tiny_train_config();
  cfg.steps = 1;
  const auto sft = train::run_sft(cfg, corpus);
  std::vector<prefs::PreferenceTriple> empty;
  EXPECT_THROW(train::run_tabpo(cfg, sft.params, empty), train::ConfigError);
}

TEST(Trainer, ConfigValidation) {
  train::TrainConfig cfg = tiny_train_config();
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), train::ConfigError);
  cfg = tiny_train_config();
  cfg.lr = -1.0;
  EXPECT_THROW(cfg.validate(), train::ConfigError);
  cfg = tiny_train_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), train::ConfigError);
}

TEST(Trainer, CheckpointArtifactsRoundTrip) {
  const auto corpus = tiny_corpus(8);
  auto cfg = tiny_train_config(4);
  cfg.steps = 10;
  const auto dir = std::filesystem::temp_directory_path() / "tabpo_trainer_test";
  std::filesystem::create_directories(dir);
  cfg.checkpoint_out = (dir / "sft.ckpt").string();
  cfg.runlog_out = (dir / "sft.runlog.jsonl").string();
  const auto result = train::run_sft(cfg, corpus, nullptr);
  const auto loaded = policy::load_checkpoint(cfg.checkpoint_out);
  EXPECT_EQ(loaded.flat, result.params.flat);
  std::filesystem::remove_all(dir);
}
