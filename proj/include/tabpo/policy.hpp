#pragma once

// Tiny autoregressive byte policy: last-K window -> pooled embeddings ->
// tanh hidden layer -> linear logits -> log-softmax. All arithmetic is 64-bit
// so analytic gradients can be checked against central finite differences at
// tight tolerance. Forward/backward are hand-rolled; there is no autograd.

#include "tabpo/files.hpp"
#include "tabpo/rng.hpp"
#include "tabpo/tokenizer.hpp"

#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tabpo::policy {

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Pooling { mean, concat };

inline std::string pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "concat"; }

inline Pooling pooling_from_name(const std::string& s) {
  if (s == "mean") return Pooling::mean;
  if (s == "concat") return Pooling::concat;
  throw std::invalid_argument("unknown pooling: " + s);
}

struct ModelConfig {
  int vocab_size = tok::kVocabSize;
  int context_window = 16;
  int embed_dim = 16;
  int hidden_dim = 32;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  // "mean" averages the K window embeddings (default); "concat" keeps them
  // positional, which the window model needs to copy spans.
  Pooling pooling = Pooling::mean;

  int input_dim() const {
    return pooling == Pooling::mean ? embed_dim : context_window * embed_dim;
  }

  void validate() const {
    if (vocab_size < 1 || context_window < 1 || embed_dim < 1 || hidden_dim < 1) {
      throw std::invalid_argument("model dims must be >= 1");
    }
  }

  Json to_json() const {
    return Json{{"vocab_size", vocab_size},   {"context_window", context_window},
                {"embed_dim", embed_dim},     {"hidden_dim", hidden_dim},
                {"init_scale", init_scale},   {"seed", seed},
                {"pooling", pooling_name(pooling)}};
  }

  static ModelConfig from_json(const Json& j) {
    ModelConfig c;
    if (j.contains("vocab_size")) c.vocab_size = j.at("vocab_size").get<int>();
    if (j.contains("context_window")) c.context_window = j.at("context_window").get<int>();
    if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim").get<int>();
    if (j.contains("hidden_dim")) c.hidden_dim = j.at("hidden_dim").get<int>();
    if (j.contains("init_scale")) c.init_scale = j.at("init_scale").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("pooling")) c.pooling = pooling_from_name(j.at("pooling").get<std::string>());
    c.validate();
    return c;
  }
};

// Flat parameter vector with typed views: [embedding | W1 | b1 | W2 | b2].
struct PolicyParams {
  ModelConfig cfg;
  std::vector<double> flat;

  static PolicyParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    PolicyParams p;
    p.cfg = cfg;
    p.flat.assign(p.total_size(), 0.0);
    return p;
  }

  // i.i.d. uniform in [-init_scale, init_scale], seed-deterministic.
  static PolicyParams init(const ModelConfig& cfg) {
    PolicyParams p = zeros(cfg);
    Rng rng(cfg.seed);
    for (double& w : p.flat) w = rng.uniform(-cfg.init_scale, cfg.init_scale);
    return p;
  }

  std::size_t embed_size() const {
    return static_cast<std::size_t>(cfg.vocab_size) * cfg.embed_dim;
  }
  std::size_t w1_size() const {
    return static_cast<std::size_t>(cfg.input_dim()) * cfg.hidden_dim;
  }
  std::size_t total_size() const {
    return embed_size() + w1_size() + cfg.hidden_dim +
           static_cast<std::size_t>(cfg.hidden_dim) * cfg.vocab_size + cfg.vocab_size;
  }

  const double* embed(int token) const {
    return flat.data() + static_cast<std::size_t>(token) * cfg.embed_dim;
  }
  const double* w1() const { return flat.data() + embed_size(); }
  const double* b1() const { return w1() + w1_size(); }
  const double* w2() const { return b1() + cfg.hidden_dim; }
  const double* b2() const { return w2() + static_cast<std::size_t>(cfg.hidden_dim) * cfg.vocab_size; }

  std::size_t embed_offset(int token) const {
    return static_cast<std::size_t>(token) * cfg.embed_dim;
  }
  int pad_id() const { return cfg.vocab_size - 1; }
  std::size_t w1_offset() const { return embed_size(); }
  std::size_t b1_offset() const { return embed_size() + w1_size(); }
  std::size_t w2_offset() const { return b1_offset() + cfg.hidden_dim; }
  std::size_t b2_offset() const {
    return w2_offset() + static_cast<std::size_t>(cfg.hidden_dim) * cfg.vocab_size;
  }
};

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

// Reusable buffers so the per-token loops never allocate.
struct Scratch {
  std::vector<int> window;
  std::vector<double> x;        // pooled input (input_dim)
  std::vector<double> h;        // tanh activations (hidden_dim)
  std::vector<double> logits;   // vocab_size
  std::vector<double> dlogits;  // vocab_size
  std::vector<double> dh;       // hidden_dim
  std::vector<double> dx;       // input_dim
  double log_z = 0.0;

  void resize(const ModelConfig& cfg) {
    window.resize(static_cast<std::size_t>(cfg.context_window));
    x.resize(static_cast<std::size_t>(cfg.input_dim()));
    h.resize(static_cast<std::size_t>(cfg.hidden_dim));
    logits.resize(static_cast<std::size_t>(cfg.vocab_size));
    dlogits.resize(static_cast<std::size_t>(cfg.vocab_size));
    dh.resize(static_cast<std::size_t>(cfg.hidden_dim));
    dx.resize(static_cast<std::size_t>(cfg.input_dim()));
  }
};

namespace detail {

// Last-K window before position `pos`, left-padded with the pad id. The pad
// id is the model's top vocab slot (258 for the full byte vocabulary), which
// keeps reduced-vocab models self-contained.
inline void fill_window(std::span<const int> tokens, std::size_t pos, int K, int pad_id,
                        int* window) {
  for (int k = 0; k < K; ++k) {
    const long long idx = static_cast<long long>(pos) - K + k;
    window[k] = idx >= 0 ? tokens[static_cast<std::size_t>(idx)] : pad_id;
  }
}

inline void forward_window(const PolicyParams& p, const int* window, Scratch& s) {
  const ModelConfig& cfg = p.cfg;
  const int K = cfg.context_window;
  const int E = cfg.embed_dim;
  const int H = cfg.hidden_dim;
  const int V = cfg.vocab_size;
  const int in = cfg.input_dim();

  if (cfg.pooling == Pooling::mean) {
    double* x = s.x.data();
    for (int e = 0; e < E; ++e) x[e] = 0.0;
    for (int k = 0; k < K; ++k) {
      const double* row = p.embed(window[k]);
      for (int e = 0; e < E; ++e) x[e] += row[e];
    }
    const double inv = 1.0 / K;
    for (int e = 0; e < E; ++e) x[e] *= inv;
  } else {
    double* x = s.x.data();
    for (int k = 0; k < K; ++k) {
      std::memcpy(x + static_cast<std::size_t>(k) * E, p.embed(window[k]),
                  sizeof(double) * static_cast<std::size_t>(E));
    }
  }

  const double* w1 = p.w1();
  const double* b1 = p.b1();
  double* h = s.h.data();
  for (int j = 0; j < H; ++j) h[j] = b1[j];
  for (int i = 0; i < in; ++i) {
    const double xi = s.x[static_cast<std::size_t>(i)];
    if (xi == 0.0) continue;
    const double* row = w1 + static_cast<std::size_t>(i) * H;
    for (int j = 0; j < H; ++j) h[j] += xi * row[j];
  }
  for (int j = 0; j < H; ++j) h[j] = std::tanh(h[j]);

  const double* w2 = p.w2();
  const double* b2 = p.b2();
  double* logits = s.logits.data();
  for (int v = 0; v < V; ++v) logits[v] = b2[v];
  for (int j = 0; j < H; ++j) {
    const double hj = h[j];
    const double* row = w2 + static_cast<std::size_t>(j) * V;
    for (int v = 0; v < V; ++v) logits[v] += hj * row[v];
  }

  double max_logit = logits[0];
  for (int v = 1; v < V; ++v) max_logit = std::max(max_logit, logits[v]);
  double sum = 0.0;
  for (int v = 0; v < V; ++v) sum += std::exp(logits[v] - max_logit);
  s.log_z = max_logit + std::log(sum);
}

// Accumulates coeff * d(log p(target | window)) / d(theta) into grad.
// Must be called right after forward_window on the same scratch.
inline void backward_window(const PolicyParams& p, const int* window, int target,
                            double coeff, Scratch& s, double* grad) {
  const ModelConfig& cfg = p.cfg;
  const int K = cfg.context_window;
  const int E = cfg.embed_dim;
  const int H = cfg.hidden_dim;
  const int V = cfg.vocab_size;
  const int in = cfg.input_dim();

  // d(log p_target)/d(logit_v) = [v == target] - softmax_v
  double* dlogits = s.dlogits.data();
  for (int v = 0; v < V; ++v) {
    dlogits[v] = -coeff * std::exp(s.logits[static_cast<std::size_t>(v)] - s.log_z);
  }
  dlogits[target] += coeff;

  double* db2 = grad + p.b2_offset();
  for (int v = 0; v < V; ++v) db2[v] += dlogits[v];

  const double* w2 = p.w2();
  double* dw2 = grad + p.w2_offset();
  double* dh = s.dh.data();
  for (int j = 0; j < H; ++j) {
    const double hj = s.h[static_cast<std::size_t>(j)];
    const double* row = w2 + static_cast<std::size_t>(j) * V;
    double* drow = dw2 + static_cast<std::size_t>(j) * V;
    double acc = 0.0;
    for (int v = 0; v < V; ++v) {
      drow[v] += hj * dlogits[v];
      acc += row[v] * dlogits[v];
    }
    // through tanh
    dh[j] = acc * (1.0 - hj * hj);
  }

  double* db1 = grad + p.b1_offset();
  for (int j = 0; j < H; ++j) db1[j] += dh[j];

  const double* w1 = p.w1();
  double* dw1 = grad + p.w1_offset();
  double* dx = s.dx.data();
  for (int i = 0; i < in; ++i) {
    const double xi = s.x[static_cast<std::size_t>(i)];
    const double* row = w1 + static_cast<std::size_t>(i) * H;
    double* drow = dw1 + static_cast<std::size_t>(i) * H;
    double acc = 0.0;
    for (int j = 0; j < H; ++j) {
      drow[j] += xi * dh[j];
      acc += row[j] * dh[j];
    }
    dx[i] = acc;
  }

  if (cfg.pooling == Pooling::mean) {
    const double inv = 1.0 / K;
    for (int k = 0; k < K; ++k) {
      double* drow = grad + p.embed_offset(window[k]);
      for (int e = 0; e < E; ++e) drow[e] += inv * dx[e];
    }
  } else {
    for (int k = 0; k < K; ++k) {
      double* drow = grad + p.embed_offset(window[k]);
      const double* dxk = dx + static_cast<std::size_t>(k) * E;
      for (int e = 0; e < E; ++e) drow[e] += dxk[e];
    }
  }
}

}  // namespace detail

// Log-normalized next-token distribution given the last-K context (shorter
// contexts are left-padded with PAD, longer ones keep their last K ids).
inline std::vector<double> next_token_log_probs(const PolicyParams& p,
                                                std::span<const int> context) {
  Scratch s;
  s.resize(p.cfg);
  const int K = p.cfg.context_window;
  detail::fill_window(context, context.size(), K, p.pad_id(), s.window.data());
  detail::forward_window(p, s.window.data(), s);
  std::vector<double> out(static_cast<std::size_t>(p.cfg.vocab_size));
  for (int v = 0; v < p.cfg.vocab_size; ++v) {
    out[static_cast<std::size_t>(v)] = s.logits[static_cast<std::size_t>(v)] - s.log_z;
  }
  return out;
}

// Per-position log p(tokens[i] | window) for i in [start, tokens.size());
// positions before start are 0. Aligns with TokenizedCompletion masks.
inline std::vector<double> sequence_log_probs(const PolicyParams& p,
                                              std::span<const int> tokens,
                                              std::size_t start, Scratch& s) {
  s.resize(p.cfg);
  std::vector<double> lp(tokens.size(), 0.0);
  for (std::size_t i = start; i < tokens.size(); ++i) {
    detail::fill_window(tokens, i, p.cfg.context_window, p.pad_id(), s.window.data());
    detail::forward_window(p, s.window.data(), s);
    lp[i] = s.logits[static_cast<std::size_t>(tokens[i])] - s.log_z;
  }
  return lp;
}

inline std::vector<double> sequence_log_probs(const PolicyParams& p,
                                              std::span<const int> tokens,
                                              std::size_t start) {
  Scratch s;
  return sequence_log_probs(p, tokens, start, s);
}

// log pi(y_t | x, y_<t) for every completion position.
inline std::vector<double> completion_log_probs(const PolicyParams& p,
                                                std::span<const int> prompt,
                                                std::span<const int> completion) {
  std::vector<int> tokens(prompt.begin(), prompt.end());
  tokens.insert(tokens.end(), completion.begin(), completion.end());
  const auto lp = sequence_log_probs(p, tokens, prompt.size());
  return std::vector<double>(lp.begin() + static_cast<std::ptrdiff_t>(prompt.size()), lp.end());
}

// Accumulates sum_i coeffs[i] * d(log p(tokens[i]|window_i))/d(theta) into grad.
// coeffs is full-sequence length; zero entries are skipped. When weighted_lp
// is given it receives sum_i coeffs[i] * log p(tokens[i]|window_i), which is
// the loss itself for losses linear in the log-probs (single fused pass).
inline void accumulate_log_prob_gradient(const PolicyParams& p, std::span<const int> tokens,
                                         std::size_t start, std::span<const double> coeffs,
                                         std::vector<double>& grad, Scratch& s,
                                         double* weighted_lp = nullptr) {
  s.resize(p.cfg);
  if (grad.size() != p.flat.size()) grad.assign(p.flat.size(), 0.0);
  double lp_sum = 0.0;
  for (std::size_t i = start; i < tokens.size(); ++i) {
    const double c = coeffs[i];
    if (c == 0.0) continue;
    detail::fill_window(tokens, i, p.cfg.context_window, p.pad_id(), s.window.data());
    detail::forward_window(p, s.window.data(), s);
    lp_sum += c * (s.logits[static_cast<std::size_t>(tokens[i])] - s.log_z);
    detail::backward_window(p, s.window.data(), tokens[i], c, s, grad.data());
  }
  if (weighted_lp) *weighted_lp = lp_sum;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle (test use only: O(|theta|) loss evaluations)
// ---------------------------------------------------------------------------

inline std::vector<double> fd_gradient(const PolicyParams& params,
                                       const std::function<double(const PolicyParams&)>& loss,
                                       double h) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_gradient: h must be positive");
  PolicyParams probe = params;
  std::vector<double> grad(params.flat.size(), 0.0);
  for (std::size_t i = 0; i < params.flat.size(); ++i) {
    const double saved = probe.flat[i];
    probe.flat[i] = saved + h;
    const double up = loss(probe);
    probe.flat[i] = saved - h;
    const double down = loss(probe);
    probe.flat[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Greedy decoding
// ---------------------------------------------------------------------------

// Argmax decoding (ties -> lowest token id). Stops at EOS, at the stop
// sequence (stripped from the output), or after max_tokens.
inline std::string greedy_decode(const PolicyParams& p, std::span<const int> prompt_tokens,
                                 int max_tokens = 1024, std::string_view stop_sequence = "") {
  Scratch s;
  s.resize(p.cfg);
  std::vector<int> tokens(prompt_tokens.begin(), prompt_tokens.end());
  std::string text;
  for (int n = 0; n < max_tokens; ++n) {
    detail::fill_window(tokens, tokens.size(), p.cfg.context_window, p.pad_id(), s.window.data());
    detail::forward_window(p, s.window.data(), s);
    int best = 0;
    for (int v = 1; v < p.cfg.vocab_size; ++v) {
      if (s.logits[static_cast<std::size_t>(v)] > s.logits[static_cast<std::size_t>(best)]) best = v;
    }
    if (best == tok::kEos) break;
    tokens.push_back(best);
    if (best < tok::kByteVocab) text.push_back(static_cast<char>(best));
    if (!stop_sequence.empty() && text.size() >= stop_sequence.size() &&
        std::string_view(text).substr(text.size() - stop_sequence.size()) == stop_sequence) {
      text.resize(text.size() - stop_sequence.size());
      break;
    }
  }
  return text;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then the flat f64 little-endian vector
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const PolicyParams& p) {
  Json header{{"format_version", kCheckpointVersion}, {"model", p.cfg.to_json()}};
  std::string data = header.dump();
  data.push_back('\n');
  const std::size_t off = data.size();
  data.resize(off + p.flat.size() * sizeof(double));
  std::memcpy(data.data() + off, p.flat.data(), p.flat.size() * sizeof(double));
  write_file_atomic(path, data);
}

inline PolicyParams load_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  const std::size_t nl = data.find('\n');
  if (nl == std::string::npos) throw IoError("checkpoint missing header: " + path.string());
  Json header;
  try {
    header = Json::parse(data.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint header invalid: " + std::string(e.what()));
  }
  if (header.at("format_version").get<int>() != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version");
  }
  PolicyParams p = PolicyParams::zeros(ModelConfig::from_json(header.at("model")));
  const std::size_t need = p.flat.size() * sizeof(double);
  if (data.size() - nl - 1 != need) throw IoError("checkpoint payload size mismatch");
  std::memcpy(p.flat.data(), data.data() + nl + 1, need);
  return p;
}

}  // namespace tabpo::policy
