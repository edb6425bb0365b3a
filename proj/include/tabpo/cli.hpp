#pragma once

// Command-line pipeline: gen-data, split, sft, predict, build-prefs, tabpo,
// eval, ablate. Every run writes a manifest with the resolved flags and
// config; the only environment variable read is TABPO_OUT_DIR (default output
// directory), and it is logged in the manifest.

#include "tabpo/config.hpp"
#include "tabpo/confusion.hpp"
#include "tabpo/eval.hpp"
#include "tabpo/synthetic.hpp"
#include "tabpo/trainer.hpp"

#include <CLI11.hpp>

#include <array>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace tabpo::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kIo = 3,
  kData = 4,
  kParse = 5,
};

namespace detail {

inline std::string default_out_dir(std::string* env_value) {
  const char* env = std::getenv("TABPO_OUT_DIR");
  if (env_value) *env_value = env ? env : "";
  return env && *env ? env : ".";
}

inline void write_manifest(const std::filesystem::path& out_dir, const std::string& subcommand,
                           Json flags, const Json* cfg, std::vector<std::string> inputs,
                           std::vector<std::string> outputs, const std::string& env_out_dir) {
  Json m{{"subcommand", subcommand},
         {"flags", std::move(flags)},
         {"inputs", inputs},
         {"outputs", outputs},
         {"env", Json{{"TABPO_OUT_DIR", env_out_dir}}}};
  if (cfg) m["config"] = *cfg;
  write_file_atomic(out_dir / ("manifest." + subcommand + ".json"), m.dump(2) + "\n");
}

// Corpora travel with their codebook: codebook.json in the same directory.
inline schema::Codebook sibling_codebook(const std::filesystem::path& corpus_path) {
  return schema::load_codebook(corpus_path.parent_path() / "codebook.json");
}

inline std::array<double, 3> parse_ratios(const std::string& raw) {
  std::array<double, 3> out{};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const std::size_t comma = raw.find(',', pos);
    const std::string part =
        raw.substr(pos, comma == std::string::npos ? comma : comma - pos);
    try {
      out[static_cast<std::size_t>(i)] = std::stod(part);
    } catch (const std::exception&) {
      throw train::ConfigError("bad ratios: " + raw);
    }
    if (comma == std::string::npos && i != 2) throw train::ConfigError("need three ratios");
    pos = comma + 1;
  }
  return out;
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& raw) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    const std::size_t comma = raw.find(',', pos);
    const std::string part =
        raw.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (part.empty()) throw train::ConfigError("bad seed list: " + raw);
    seeds.push_back(std::stoull(part));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return seeds;
}

inline std::vector<std::pair<schema::LabelSet, std::string>> pair_gold_with_predictions(
    const synth::Corpus& gold, std::span<const train::Prediction> preds) {
  std::map<std::string, const std::string*> by_id;
  for (const auto& p : preds) by_id[p.id] = &p.text;
  std::vector<std::pair<schema::LabelSet, std::string>> out;
  out.reserve(gold.examples.size());
  for (const auto& ex : gold.examples) {
    auto it = by_id.find(ex.id);
    out.push_back({ex.gold, it == by_id.end() ? std::string() : *it->second});
  }
  return out;
}

inline std::vector<std::pair<schema::LabelSet, schema::LabelSet>> parsed_pairs(
    std::span<const std::pair<schema::LabelSet, std::string>> raw_pairs,
    const schema::Codebook& cb, long* failures = nullptr) {
  std::vector<std::pair<schema::LabelSet, schema::LabelSet>> out;
  long failed = 0;
  for (const auto& [gold, text] : raw_pairs) {
    schema::LabelSet pred;
    try {
      pred = schema::parse_output(text, cb);
    } catch (const schema::ParseError&) {
      ++failed;
      pred = schema::LabelSet{};
    }
    out.push_back({gold, pred});
  }
  if (failures) *failures = failed;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string out_dir;
  std::string env_out_dir;
};

inline void cmd_gen_data(const std::string& spec_path, const CommonArgs& common) {
  synth::TaskSpec spec = spec_path.empty()
                             ? synth::default_task_spec()
                             : synth::task_spec_from_json(parse_json_file(spec_path));
  const synth::Corpus corpus = synth::generate_corpus(spec);
  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  synth::save_corpus(out / "corpus.jsonl", corpus);
  synth::save_stats(out / "corpus.stats.json", corpus);
  schema::save_codebook(out / "codebook.json", spec.codebook);
  write_file_atomic(out / "taskspec.json", synth::task_spec_to_json(spec).dump(2) + "\n");
  detail::write_manifest(out, "gen-data",
                         Json{{"spec", spec_path}, {"out", common.out_dir}, {"seed", spec.seed}},
                         nullptr, spec_path.empty() ? std::vector<std::string>{} : std::vector<std::string>{spec_path},
                         {(out / "corpus.jsonl").string(), (out / "corpus.stats.json").string(),
                          (out / "codebook.json").string(), (out / "taskspec.json").string()},
                         common.env_out_dir);
}

inline void cmd_split(const std::string& corpus_path, const std::string& ratios_raw,
                      std::uint64_t seed, const CommonArgs& common) {
  const auto ratios = detail::parse_ratios(ratios_raw);
  const schema::Codebook cb = detail::sibling_codebook(corpus_path);
  const synth::Corpus corpus = synth::load_corpus(corpus_path, cb);
  const auto splits = synth::stratified_split(corpus, ratios, seed);
  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  const std::array<std::string, 3> names = {"train", "val", "test"};
  std::vector<std::string> outputs;
  for (int s = 0; s < 3; ++s) {
    const auto si = static_cast<std::size_t>(s);
    synth::save_corpus(out / (names[si] + ".jsonl"), splits[si]);
    synth::save_stats(out / (names[si] + ".stats.json"), splits[si]);
    outputs.push_back((out / (names[si] + ".jsonl")).string());
  }
  if (!std::filesystem::exists(out / "codebook.json")) {
    schema::save_codebook(out / "codebook.json", cb);
  }
  detail::write_manifest(out, "split",
                         Json{{"corpus", corpus_path},
                              {"ratios", ratios_raw},
                              {"seed", seed},
                              {"out", common.out_dir}},
                         nullptr, {corpus_path}, outputs, common.env_out_dir);
}

inline void cmd_sft(const std::string& config_path, const std::vector<std::string>& overrides,
                    const CommonArgs& common) {
  config::RunConfig cfg = config::load_run_config(config_path, overrides);
  if (cfg.data.train_corpus.empty()) throw train::ConfigError("data.train_corpus is required");
  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  if (cfg.train.checkpoint_out.empty()) cfg.train.checkpoint_out = (out / "sft.ckpt").string();
  if (cfg.train.runlog_out.empty()) cfg.train.runlog_out = (out / "sft.runlog.jsonl").string();

  const schema::Codebook cb = cfg.data.codebook.empty()
                                  ? detail::sibling_codebook(cfg.data.train_corpus)
                                  : schema::load_codebook(cfg.data.codebook);
  const synth::Corpus corpus = synth::load_corpus(cfg.data.train_corpus, cb);
  train::RunLog log(cfg.train.runlog_out);
  train::run_sft(cfg.train, corpus, &log);

  const Json resolved = cfg.to_json();
  detail::write_manifest(out, "sft",
                         Json{{"config", config_path}, {"overrides", overrides},
                              {"out", common.out_dir}, {"seed", cfg.train.seed}},
                         &resolved, {config_path, cfg.data.train_corpus},
                         {cfg.train.checkpoint_out, cfg.train.runlog_out}, common.env_out_dir);
}

inline void cmd_predict(const std::string& checkpoint_path, const std::string& split_path,
                        const std::string& out_file, int max_tokens,
                        const std::string& stop_sequence, const CommonArgs& common) {
  if (!std::filesystem::exists(checkpoint_path)) {
    throw train::ConfigError("checkpoint not found: " + checkpoint_path);
  }
  const policy::PolicyParams params = policy::load_checkpoint(checkpoint_path);
  const schema::Codebook cb = detail::sibling_codebook(split_path);
  const synth::Corpus corpus = synth::load_corpus(split_path, cb);
  const auto preds = train::predict_split(params, corpus, max_tokens, stop_sequence);
  train::save_predictions(out_file, preds);
  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  detail::write_manifest(out, "predict",
                         Json{{"checkpoint", checkpoint_path},
                              {"split", split_path},
                              {"out", out_file},
                              {"max_tokens", max_tokens},
                              {"stop", stop_sequence}},
                         nullptr, {checkpoint_path, split_path}, {out_file},
                         common.env_out_dir);
}

inline void cmd_build_prefs(const std::string& gold_path, const std::string& pred_path,
                            const std::string& mixture_raw, double standin_frac, long n_triples,
                            std::uint64_t seed, int max_perturbed, const CommonArgs& common) {
  const schema::Codebook cb = detail::sibling_codebook(gold_path);
  const synth::Corpus gold = synth::load_corpus(gold_path, cb);
  const auto preds = train::load_predictions(pred_path);
  const auto raw_pairs = detail::pair_gold_with_predictions(gold, preds);
  long parse_failures = 0;
  const auto pairs = detail::parsed_pairs(raw_pairs, cb, &parse_failures);
  const prefs::ConfusionModel cm = prefs::extract_confusion_model(pairs);

  const auto mix = detail::parse_ratios(mixture_raw);  // confusion, deletion, insertion
  prefs::MixtureWeights mixture{mix[0], mix[1], mix[2]};
  prefs::BuildReport report;
  const auto triples = prefs::build_preference_dataset(gold, cm, cb, mixture, standin_frac,
                                                       n_triples, seed, &report, max_perturbed);

  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  prefs::save_preferences(out / "prefs.jsonl", triples);
  prefs::save_confusion_model(out / "confusion_model.json", cm);
  if (!std::filesystem::exists(out / "codebook.json")) {
    schema::save_codebook(out / "codebook.json", cb);
  }
  Json family_counts = Json::object();
  for (const auto& [k, v] : report.family_counts) family_counts[k] = v;
  detail::write_manifest(out, "build-prefs",
                         Json{{"gold", gold_path},
                              {"pred", pred_path},
                              {"mixture", mixture_raw},
                              {"standin_frac", standin_frac},
                              {"n", n_triples},
                              {"seed", seed},
                              {"max_perturbed", max_perturbed},
                              {"prediction_parse_failures", parse_failures},
                              {"skipped", report.skipped},
                              {"family_counts", family_counts}},
                         nullptr, {gold_path, pred_path},
                         {(out / "prefs.jsonl").string(), (out / "confusion_model.json").string()},
                         common.env_out_dir);
}

inline void cmd_tabpo(const std::string& config_path, const std::string& sft_checkpoint,
                      const std::string& prefs_path, const std::vector<std::string>& overrides,
                      const CommonArgs& common) {
  config::RunConfig cfg = config::load_run_config(config_path, overrides);
  if (!std::filesystem::exists(sft_checkpoint)) {
    throw train::ConfigError("sft checkpoint not found: " + sft_checkpoint);
  }
  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  if (cfg.train.checkpoint_out.empty()) cfg.train.checkpoint_out = (out / "tabpo.ckpt").string();
  if (cfg.train.runlog_out.empty()) cfg.train.runlog_out = (out / "tabpo.runlog.jsonl").string();

  const policy::PolicyParams sft_params = policy::load_checkpoint(sft_checkpoint);
  const schema::Codebook cb = cfg.data.codebook.empty()
                                  ? detail::sibling_codebook(prefs_path)
                                  : schema::load_codebook(cfg.data.codebook);
  const auto triples = prefs::load_preferences(prefs_path, cb);
  train::RunLog log(cfg.train.runlog_out);
  cfg.train.model = sft_params.cfg;  // policy shape comes from the checkpoint
  train::run_tabpo(cfg.train, sft_params, triples, &log);

  const Json resolved = cfg.to_json();
  detail::write_manifest(out, "tabpo",
                         Json{{"config", config_path},
                              {"sft_checkpoint", sft_checkpoint},
                              {"prefs", prefs_path},
                              {"overrides", overrides},
                              {"out", common.out_dir},
                              {"seed", cfg.train.seed}},
                         &resolved, {config_path, sft_checkpoint, prefs_path},
                         {cfg.train.checkpoint_out, cfg.train.runlog_out}, common.env_out_dir);
}

inline void cmd_eval(const std::string& gold_path, const std::string& pred_path,
                     const std::string& out_file, const CommonArgs& common) {
  const schema::Codebook cb = detail::sibling_codebook(gold_path);
  const synth::Corpus gold = synth::load_corpus(gold_path, cb);
  const auto preds = train::load_predictions(pred_path);
  const auto raw_pairs = detail::pair_gold_with_predictions(gold, preds);
  const eval::MetricsReport report = eval::evaluate_predictions(raw_pairs, cb);
  eval::save_report(out_file, report);

  const auto pairs = detail::parsed_pairs(raw_pairs, cb);
  const auto rows = eval::confusion_report(pairs, 5);
  std::filesystem::path csv(out_file);
  csv.replace_extension(".confusion.csv");
  eval::save_confusion_csv(csv, rows);

  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);
  detail::write_manifest(out, "eval",
                         Json{{"gold", gold_path}, {"pred", pred_path}, {"out", out_file}},
                         nullptr, {gold_path, pred_path}, {out_file, csv.string()},
                         common.env_out_dir);
}

// ---------------------------------------------------------------------------
// Ablation sweep: the 2^3 toggle grid (LN, CB, TW) x seed list
// ---------------------------------------------------------------------------

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  double code_f1 = 0.0;
  double subcode_f1 = 0.0;
  double span_f1 = 0.0;
};

inline void cmd_ablate(const std::string& config_path, const std::string& seeds_raw,
                       const std::vector<std::string>& overrides, const CommonArgs& common) {
  const config::RunConfig base = config::load_run_config(config_path, overrides);
  if (base.data.train_corpus.empty() || base.data.val_corpus.empty() ||
      base.data.test_corpus.empty()) {
    throw train::ConfigError("ablate needs data.train_corpus, data.val_corpus, data.test_corpus");
  }
  const auto seeds = detail::parse_seed_list(seeds_raw);
  const std::filesystem::path out(common.out_dir);
  std::filesystem::create_directories(out);

  const schema::Codebook cb = base.data.codebook.empty()
                                  ? detail::sibling_codebook(base.data.train_corpus)
                                  : schema::load_codebook(base.data.codebook);
  const synth::Corpus train_corpus = synth::load_corpus(base.data.train_corpus, cb);
  const synth::Corpus val_corpus = synth::load_corpus(base.data.val_corpus, cb);
  const synth::Corpus test_corpus = synth::load_corpus(base.data.test_corpus, cb);

  std::vector<ArmResult> results;
  for (const std::uint64_t seed : seeds) {
    config::RunConfig cfg = base;
    cfg.model.seed = seed;
    cfg.train.model = cfg.model;
    cfg.train.seed = seed;
    cfg.train.checkpoint_out.clear();
    cfg.train.runlog_out.clear();

    const auto sft = train::run_sft(cfg.train, train_corpus);
    const auto val_preds = train::predict_split(sft.params, val_corpus);

    std::vector<std::pair<schema::LabelSet, std::string>> raw_pairs =
        detail::pair_gold_with_predictions(val_corpus, val_preds);
    const auto pairs = detail::parsed_pairs(raw_pairs, cb);
    const prefs::ConfusionModel cm = prefs::extract_confusion_model(pairs);
    const auto triples = prefs::build_preference_dataset(
        val_corpus, cm, cb, prefs::MixtureWeights{}, 0.4, base.data.n_prefs, seed);

    for (int mask = 0; mask < 8; ++mask) {
      config::RunConfig arm_cfg = cfg;
      arm_cfg.objective.length_norm = mask & 1;
      arm_cfg.objective.class_balance = mask & 2;
      arm_cfg.objective.token_weighting = mask & 4;
      arm_cfg.train.objective = arm_cfg.objective;
      const auto tabpo = train::run_tabpo(arm_cfg.train, sft.params, triples);
      const auto test_preds = train::predict_split(tabpo.params, test_corpus);
      const auto report = eval::evaluate_predictions(
          detail::pair_gold_with_predictions(test_corpus, test_preds), cb);
      std::string arm = std::string("LN") + ((mask & 1) ? "1" : "0") + "_CB" +
                        ((mask & 2) ? "1" : "0") + "_TW" + ((mask & 4) ? "1" : "0");
      results.push_back({arm, seed, report.code.f1(), report.subcode.f1(), report.span.f1()});
    }
  }

  // Consolidated table: mean and std per arm over seeds, per level.
  Json table = Json::array();
  std::string csv = "arm,metric,mean,std,n_runs\n";
  for (int mask = 0; mask < 8; ++mask) {
    std::string arm = std::string("LN") + ((mask & 1) ? "1" : "0") + "_CB" +
                      ((mask & 2) ? "1" : "0") + "_TW" + ((mask & 4) ? "1" : "0");
    auto stat = [&](auto get, const char* metric) {
      std::vector<double> xs;
      for (const auto& r : results) {
        if (r.arm == arm) xs.push_back(get(r));
      }
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
      table.push_back(Json{{"arm", arm},
                           {"metric", metric},
                           {"mean", mean},
                           {"std", sd},
                           {"n_runs", xs.size()}});
      csv += arm;
      csv += ",";
      csv += metric;
      csv += "," + std::to_string(mean) + "," + std::to_string(sd) + "," +
             std::to_string(xs.size()) + "\n";
    };
    stat([](const ArmResult& r) { return r.code_f1; }, "code_f1");
    stat([](const ArmResult& r) { return r.subcode_f1; }, "subcode_f1");
    stat([](const ArmResult& r) { return r.span_f1; }, "span_f1");
  }
  write_file_atomic(out / "ablation.json", table.dump(2) + "\n");
  write_file_atomic(out / "ablation.csv", csv);
  std::cout << csv;

  const Json resolved = base.to_json();
  detail::write_manifest(out, "ablate",
                         Json{{"config", config_path},
                              {"seeds", seeds_raw},
                              {"overrides", overrides},
                              {"out", common.out_dir}},
                         &resolved,
                         {config_path, base.data.train_corpus, base.data.val_corpus,
                          base.data.test_corpus},
                         {(out / "ablation.json").string(), (out / "ablation.csv").string()},
                         common.env_out_dir);
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"TAB-PO: token-adaptive barrier preference optimization pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  const std::string default_out = detail::default_out_dir(&common.env_out_dir);

  std::string spec_path, corpus_path, ratios, config_path, checkpoint_path, split_path;
  std::string gold_path, pred_path, out_file, prefs_path, sft_checkpoint, mixture = "0.6,0.2,0.2";
  std::string seeds_raw = "1,2,3,4,5", stop_sequence;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  double standin_frac = 0.4;
  long n_triples = 1000;
  int max_perturbed = 0;
  int max_tokens = 1024;

  auto add_out = [&](CLI::App* sub) {
    sub->add_option("--out", common.out_dir, "output directory")->default_val(default_out);
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  gen->add_option("--spec", spec_path, "task spec JSON (defaults built in)");
  add_out(gen);

  auto* split = app.add_subcommand("split", "stratified train/val/test split");
  split->add_option("--corpus", corpus_path)->required();
  split->add_option("--ratios", ratios)->required();
  split->add_option("--seed", seed)->required();
  add_out(split);

  auto* sft = app.add_subcommand("sft", "supervised fine-tuning");
  sft->add_option("--config", config_path)->required();
  sft->add_option("--set", overrides, "dotted config overrides (key.path=value)");
  add_out(sft);

  auto* predict = app.add_subcommand("predict", "greedy decoding over a split");
  predict->add_option("--checkpoint", checkpoint_path)->required();
  predict->add_option("--split", split_path)->required();
  predict->add_option("--out", out_file, "predictions JSONL")->required();
  predict->add_option("--max-tokens", max_tokens);
  predict->add_option("--stop", stop_sequence);

  auto* build = app.add_subcommand("build-prefs", "confusion-aware preference dataset");
  build->add_option("--gold", gold_path)->required();
  build->add_option("--pred", pred_path)->required();
  build->add_option("--mixture", mixture, "confusion,deletion,insertion weights");
  build->add_option("--standin-frac", standin_frac);
  build->add_option("--n", n_triples)->required();
  build->add_option("--seed", seed)->required();
  build->add_option("--max-perturbed", max_perturbed,
                    "cap on perturbed tuples per triple (0 = all)");
  add_out(build);

  auto* tabpo = app.add_subcommand("tabpo", "preference optimization from an SFT checkpoint");
  tabpo->add_option("--config", config_path)->required();
  tabpo->add_option("--sft-checkpoint", sft_checkpoint)->required();
  tabpo->add_option("--prefs", prefs_path)->required();
  tabpo->add_option("--set", overrides, "dotted config overrides");
  add_out(tabpo);

  auto* evaluate = app.add_subcommand("eval", "score predictions against gold");
  evaluate->add_option("--gold", gold_path)->required();
  evaluate->add_option("--pred", pred_path)->required();
  evaluate->add_option("--out", out_file, "report JSON")->required();

  auto* ablate = app.add_subcommand("ablate", "LN/CB/TW toggle grid over seeds");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--seeds", seeds_raw);
  ablate->add_option("--set", overrides, "dotted config overrides");
  add_out(ablate);

  std::vector<const char*> argv;
  argv.push_back("tabpo");
  for (const auto& a : args) argv.push_back(a.c_str());

  auto fail = [](int code, const char* kind, const std::string& message) {
    std::cerr << Json{{"error", kind}, {"message", message}}.dump() << "\n";
    return code;
  };

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return kOk;
    }
    return fail(kConfig, "ConfigError", e.what());
  }

  if (common.out_dir.empty()) common.out_dir = default_out;

  try {
    if (gen->parsed()) {
      cmd_gen_data(spec_path, common);
    } else if (split->parsed()) {
      cmd_split(corpus_path, ratios, seed, common);
    } else if (sft->parsed()) {
      cmd_sft(config_path, overrides, common);
    } else if (predict->parsed()) {
      common.out_dir = std::filesystem::path(out_file).parent_path().string();
      if (common.out_dir.empty()) common.out_dir = ".";
      cmd_predict(checkpoint_path, split_path, out_file, max_tokens, stop_sequence, common);
    } else if (build->parsed()) {
      cmd_build_prefs(gold_path, pred_path, mixture, standin_frac, n_triples, seed,
                      max_perturbed, common);
    } else if (tabpo->parsed()) {
      cmd_tabpo(config_path, sft_checkpoint, prefs_path, overrides, common);
    } else if (evaluate->parsed()) {
      common.out_dir = std::filesystem::path(out_file).parent_path().string();
      if (common.out_dir.empty()) common.out_dir = ".";
      cmd_eval(gold_path, pred_path, out_file, common);
    } else if (ablate->parsed()) {
      cmd_ablate(config_path, seeds_raw, overrides, common);
    }
  } catch (const train::ConfigError& e) {
    return fail(kConfig, "ConfigError", e.what());
  } catch (const IoError& e) {
    return fail(kIo, "IoError", e.what());
  } catch (const synth::SpecError& e) {
    return fail(kData, "SpecError", e.what());
  } catch (const synth::SplitError& e) {
    return fail(kData, "SplitError", e.what());
  } catch (const schema::ParseError& e) {
    return fail(kParse, "ParseError", e.what());
  } catch (const std::exception& e) {
    return fail(kInternal, "InternalError", e.what());
  }
  return kOk;
}

}  // namespace tabpo::cli
