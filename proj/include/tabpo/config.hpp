#pragma once

// Run configuration: one JSON document with sections model / objective /
// weights / train / data. Unknown keys are rejected; dotted-path overrides
// (e.g. objective.tau=0.9) are applied before parsing so ablations never need
// config forks.

#include "tabpo/objectives.hpp"
#include "tabpo/policy.hpp"
#include "tabpo/trainer.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace tabpo::config {

using train::ConfigError;

struct DataConfig {
  std::string train_corpus;
  std::string val_corpus;
  std::string test_corpus;
  std::string codebook;
  std::string prefs;
  long n_prefs = 1000;  // triples built per seed by `ablate`

  Json to_json() const {
    return Json{{"train_corpus", train_corpus}, {"val_corpus", val_corpus},
                {"test_corpus", test_corpus},   {"codebook", codebook},
                {"prefs", prefs},               {"n_prefs", n_prefs}};
  }
  static DataConfig from_json(const Json& j) {
    DataConfig c;
    if (j.contains("train_corpus")) c.train_corpus = j.at("train_corpus").get<std::string>();
    if (j.contains("val_corpus")) c.val_corpus = j.at("val_corpus").get<std::string>();
    if (j.contains("test_corpus")) c.test_corpus = j.at("test_corpus").get<std::string>();
    if (j.contains("codebook")) c.codebook = j.at("codebook").get<std::string>();
    if (j.contains("prefs")) c.prefs = j.at("prefs").get<std::string>();
    if (j.contains("n_prefs")) c.n_prefs = j.at("n_prefs").get<long>();
    return c;
  }
};

struct RunConfig {
  policy::ModelConfig model;
  obj::ObjectiveConfig objective;
  obj::WeightConfig weights;
  train::TrainConfig train;
  DataConfig data;

  Json to_json() const {
    Json j{{"model", model.to_json()},
           {"objective", objective.to_json()},
           {"weights", weights.to_json()},
           {"train", train.to_json()},
           {"data", data.to_json()}};
    return j;
  }
};

namespace detail {

inline void reject_unknown(const Json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section must be an object: " + where);
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key: " + where + "." + key);
  }
}

inline Json parse_override_value(const std::string& raw) {
  try {
    return Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    return Json(raw);  // bare string
  }
}

}  // namespace detail

// key.path=value, value parsed as JSON when possible, else taken as a string.
inline void apply_override(Json& doc, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like section.key=value: " + spec);
  }
  const std::string path = spec.substr(0, eq);
  Json* node = &doc;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw ConfigError("bad override path: " + spec);
    if (dot == std::string::npos) {
      (*node)[key] = detail::parse_override_value(spec.substr(eq + 1));
      return;
    }
    if (!node->contains(key)) (*node)[key] = Json::object();
    node = &(*node)[key];
    pos = dot + 1;
  }
}

inline RunConfig parse_run_config(Json doc, const std::vector<std::string>& overrides = {}) {
  for (const auto& ov : overrides) apply_override(doc, ov);

  detail::reject_unknown(doc, {"model", "objective", "weights", "train", "data"}, "config");
  RunConfig cfg;
  try {
    if (doc.contains("model")) {
      detail::reject_unknown(doc.at("model"),
                             {"vocab_size", "context_window", "embed_dim", "hidden_dim",
                              "init_scale", "seed", "pooling"},
                             "model");
      cfg.model = policy::ModelConfig::from_json(doc.at("model"));
    }
    if (doc.contains("objective")) {
      detail::reject_unknown(doc.at("objective"),
                             {"beta", "tau", "lambda_sft", "length_norm", "class_balance",
                              "token_weighting", "rho", "omega_max"},
                             "objective");
      cfg.objective = obj::ObjectiveConfig::from_json(doc.at("objective"));
    }
    if (doc.contains("weights")) {
      detail::reject_unknown(
          doc.at("weights"),
          {"w_code", "w_sub", "w_span", "diff_upweight", "normalize_mean_active"}, "weights");
      cfg.weights = obj::WeightConfig::from_json(doc.at("weights"));
    }
    if (doc.contains("train")) {
      detail::reject_unknown(doc.at("train"),
                             {"lr", "steps", "batch_size", "grad_accum", "seed", "eval_every",
                              "warmup_frac", "checkpoint_out", "runlog_out"},
                             "train");
      cfg.train = train::TrainConfig::from_json(doc.at("train"));
    }
    if (doc.contains("data")) {
      detail::reject_unknown(
          doc.at("data"),
          {"train_corpus", "val_corpus", "test_corpus", "codebook", "prefs", "n_prefs"}, "data");
      cfg.data = DataConfig::from_json(doc.at("data"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  cfg.train.model = cfg.model;
  cfg.train.objective = cfg.objective;
  cfg.train.weights = cfg.weights;
  cfg.train.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {}) {
  return parse_run_config(parse_json_file(path), overrides);
}

}  // namespace tabpo::config
