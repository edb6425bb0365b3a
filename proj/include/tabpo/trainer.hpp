#pragma once

// Two-stage training: SFT on gold completions, then TAB-PO from the merged
// SFT checkpoint with a frozen copy as the reference policy. Deterministic
// given (config, data, seed); checkpoints are written atomically.

#include "tabpo/confusion.hpp"
#include "tabpo/objectives.hpp"
#include "tabpo/policy.hpp"
#include "tabpo/synthetic.hpp"
#include "tabpo/tokenizer.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace tabpo::train {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  policy::ModelConfig model;
  obj::ObjectiveConfig objective;
  obj::WeightConfig weights;
  double lr = 1e-3;
  int steps = 2000;
  int batch_size = 8;
  int grad_accum = 1;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables mid-run snapshots
  double warmup_frac = 0.1;
  std::string checkpoint_out;
  std::string runlog_out;

  void validate() const {
    model.validate();
    objective.validate();
    weights.validate();
    if (lr < 0) throw ConfigError("lr must be >= 0");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (grad_accum < 1) throw ConfigError("grad_accum must be >= 1");
    if (!(warmup_frac >= 0 && warmup_frac <= 1)) throw ConfigError("warmup_frac in [0,1]");
  }

  Json to_json() const {
    return Json{{"lr", lr},
                {"steps", steps},
                {"batch_size", batch_size},
                {"grad_accum", grad_accum},
                {"seed", seed},
                {"eval_every", eval_every},
                {"warmup_frac", warmup_frac},
                {"checkpoint_out", checkpoint_out},
                {"runlog_out", runlog_out}};
  }

  static TrainConfig from_json(const Json& j) {
    TrainConfig c;
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("steps")) c.steps = j.at("steps").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("grad_accum")) c.grad_accum = j.at("grad_accum").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("eval_every")) c.eval_every = j.at("eval_every").get<int>();
    if (j.contains("warmup_frac")) c.warmup_frac = j.at("warmup_frac").get<double>();
    if (j.contains("checkpoint_out")) c.checkpoint_out = j.at("checkpoint_out").get<std::string>();
    if (j.contains("runlog_out")) c.runlog_out = j.at("runlog_out").get<std::string>();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Optimizer: Adam (0.9 / 0.999, eps 1e-8), weight decay 0, linear warmup
// ---------------------------------------------------------------------------

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<double> m;
  std::vector<double> v;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& params, std::span<const double> grad, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

inline double warmup_lr(double base_lr, int step, int total_steps, double warmup_frac) {
  const int warm = static_cast<int>(warmup_frac * total_steps);
  if (warm > 0 && step < warm) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  }
  return base_lr;
}

// ---------------------------------------------------------------------------
// Run log (JSONL, one record per step; append-only)
// ---------------------------------------------------------------------------

class RunLog {
 public:
  explicit RunLog(const std::string& path) {
    if (path.empty()) return;
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open run log: " + path);
  }

  void append(const Json& record) {
    records.push_back(record);
    if (out_.is_open()) {
      out_ << record.dump() << '\n';
      out_.flush();
    }
  }

  std::vector<Json> records;

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// SFT
// ---------------------------------------------------------------------------

inline tok::TokenizedCompletion tokenize_example(const schema::Example& ex) {
  return tok::tokenize_with_fields(synth::build_prompt(ex),
                                   schema::canonical_serialize(ex.gold));
}

struct SftResult {
  policy::PolicyParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

inline SftResult run_sft(const TrainConfig& cfg, const synth::Corpus& corpus,
                         RunLog* log = nullptr) {
  cfg.validate();
  if (corpus.examples.empty()) throw ConfigError("sft: empty corpus");

  std::vector<tok::TokenizedCompletion> data;
  data.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) data.push_back(tokenize_example(ex));

  policy::PolicyParams params = policy::PolicyParams::init(cfg.model);
  Adam adam(params.flat.size());
  Rng rng(cfg.seed);
  std::vector<double> grad(params.flat.size(), 0.0);
  std::vector<double> accum(params.flat.size(), 0.0);
  std::vector<tok::TokenizedCompletion> batch;

  SftResult result;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.steps; ++step) {
    double loss = 0.0;
    std::fill(accum.begin(), accum.end(), 0.0);
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      batch.clear();
      for (int b = 0; b < cfg.batch_size; ++b) {
        batch.push_back(data[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(data.size())))]);
      }
      loss += obj::sft_loss_grad(params, batch, grad) / cfg.grad_accum;
      for (std::size_t i = 0; i < grad.size(); ++i) accum[i] += grad[i] / cfg.grad_accum;
    }
    if (!std::isfinite(loss)) throw DivergenceError("sft loss diverged at step " + std::to_string(step));
    adam.step(params.flat, accum, warmup_lr(cfg.lr, step, cfg.steps, cfg.warmup_frac));

    if (step == 0) result.initial_loss = loss;
    result.final_loss = loss;
    if (log) {
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      log->append(Json{{"step", step}, {"loss", loss}, {"wall_ms", ms}});
    }
  }
  result.params = std::move(params);
  if (!cfg.checkpoint_out.empty()) policy::save_checkpoint(cfg.checkpoint_out, result.params);
  return result;
}

// ---------------------------------------------------------------------------
// TAB-PO
// ---------------------------------------------------------------------------

inline obj::TokenizedTriple tokenize_triple(const prefs::PreferenceTriple& t) {
  obj::TokenizedTriple out;
  out.pos = tok::tokenize_with_fields(t.prompt, schema::canonical_serialize(t.chosen));
  out.neg = tok::tokenize_with_fields(t.prompt, schema::canonical_serialize(t.rejected));
  out.chosen_labels = t.chosen;
  return out;
}

// n_kappa: code frequencies over the chosen label sets of the preference
// dataset (the training set of this stage).
inline std::map<std::string, long> code_frequencies(
    std::span<const prefs::PreferenceTriple> triples) {
  std::map<std::string, long> freq;
  for (const auto& t : triples) {
    for (const auto& tuple : t.chosen.tuples) ++freq[tuple.code];
  }
  return freq;
}

struct TabpoResult {
  policy::PolicyParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double initial_chosen_loglik = 0.0;
  double min_chosen_loglik = 0.0;
};

inline TabpoResult run_tabpo(const TrainConfig& cfg, const policy::PolicyParams& sft_params,
                             std::span<const prefs::PreferenceTriple> triples,
                             RunLog* log = nullptr) {
  cfg.validate();
  if (triples.empty()) throw ConfigError("tabpo: empty preference dataset");
  if (sft_params.cfg.vocab_size != cfg.model.vocab_size) {
    throw ConfigError("tabpo: checkpoint vocab does not match config");
  }

  const policy::PolicyParams ref = sft_params;  // frozen reference
  policy::PolicyParams params = sft_params;

  const auto freq = code_frequencies(triples);
  std::vector<obj::PreparedTriple> prepared;
  prepared.reserve(triples.size());
  for (const auto& t : triples) {
    prepared.push_back(
        obj::prepare_triple(ref, tokenize_triple(t), cfg.objective, cfg.weights, &freq));
  }

  Adam adam(params.flat.size());
  Rng rng(cfg.seed);
  std::vector<double> grad(params.flat.size(), 0.0);
  std::vector<double> accum(params.flat.size(), 0.0);
  std::vector<obj::PreparedTriple> batch;

  TabpoResult result;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.steps; ++step) {
    obj::BatchStats stats;
    std::fill(accum.begin(), accum.end(), 0.0);
    double loss = 0.0;
    double chosen_ll = 0.0;
    double rejected_ll = 0.0;
    double gate_frac = 0.0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      batch.clear();
      for (int b = 0; b < cfg.batch_size; ++b) {
        batch.push_back(prepared[static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(prepared.size())))]);
      }
      stats = obj::tabpo_batch(params, batch, cfg.objective, &grad);
      loss += stats.loss / cfg.grad_accum;
      chosen_ll += stats.mean_chosen_loglik / cfg.grad_accum;
      rejected_ll += stats.mean_rejected_loglik / cfg.grad_accum;
      gate_frac += stats.gate_fraction / cfg.grad_accum;
      for (std::size_t i = 0; i < grad.size(); ++i) accum[i] += grad[i] / cfg.grad_accum;
    }
    if (!std::isfinite(loss)) {
      throw DivergenceError("tabpo loss diverged at step " + std::to_string(step));
    }
    adam.step(params.flat, accum, warmup_lr(cfg.lr, step, cfg.steps, cfg.warmup_frac));

    if (step == 0) {
      result.initial_loss = loss;
      result.initial_chosen_loglik = chosen_ll;
      result.min_chosen_loglik = chosen_ll;
    }
    result.final_loss = loss;
    result.min_chosen_loglik = std::min(result.min_chosen_loglik, chosen_ll);
    if (log) {
      const double ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
      log->append(Json{{"step", step},
                       {"loss", loss},
                       {"gate_fraction", gate_frac},
                       {"chosen_loglik", chosen_ll},
                       {"rejected_loglik", rejected_ll},
                       {"wall_ms", ms}});
    }
  }
  result.params = std::move(params);
  if (!cfg.checkpoint_out.empty()) policy::save_checkpoint(cfg.checkpoint_out, result.params);
  return result;
}

// ---------------------------------------------------------------------------
// Prediction (greedy decoding over a split)
// ---------------------------------------------------------------------------

struct Prediction {
  std::string id;
  std::string text;
};

inline std::vector<Prediction> predict_split(const policy::PolicyParams& params,
                                             const synth::Corpus& corpus,
                                             int max_tokens = 1024,
                                             std::string_view stop_sequence = "") {
  std::vector<Prediction> out;
  out.reserve(corpus.examples.size());
  for (const auto& ex : corpus.examples) {
    std::string prompt = synth::build_prompt(ex);
    prompt.push_back('\n');
    const auto prompt_tokens = tok::encode_bytes(prompt);
    out.push_back({ex.id, policy::greedy_decode(params, prompt_tokens, max_tokens, stop_sequence)});
  }
  return out;
}

inline void save_predictions(const std::filesystem::path& path,
                             std::span<const Prediction> preds) {
  std::string out;
  for (const auto& p : preds) {
    out += Json{{"id", p.id}, {"text", p.text}}.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

inline std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::vector<Prediction> out;
  for (const auto& line : read_lines(path)) {
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad prediction line in " + path.string() + ": " + e.what());
    }
    out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
  }
  return out;
}

}  // namespace tabpo::train
