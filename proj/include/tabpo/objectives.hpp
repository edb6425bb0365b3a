#pragma once

// The full loss stack: masked SFT NLL, the logistic preference loss over a
// token-weighted reference-adjusted advantage, the confidence-gated barrier,
// effective-number class balancing, and the combined objective. Every loss
// comes in a value form and an analytic-gradient form; gradients are assembled
// as per-token coefficients on log-probs and pushed through the policy's
// hand-rolled backward pass.

#include "tabpo/policy.hpp"
#include "tabpo/schema.hpp"
#include "tabpo/tokenizer.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tabpo::obj {

using tok::TokenizedCompletion;

struct EmptyCompletion : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ZeroWeightMass : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFrequency : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct WeightConfig {
  double w_code = 2.0;
  double w_sub = 3.0;
  double w_span = 1.5;
  double diff_upweight = 2.0;
  bool normalize_mean_active = true;

  void validate() const {
    if (w_code < 0 || w_sub < 0 || w_span < 0) throw std::invalid_argument("weights must be >= 0");
    if (diff_upweight < 1.0) throw std::invalid_argument("diff_upweight must be >= 1");
  }

  Json to_json() const {
    return Json{{"w_code", w_code},
                {"w_sub", w_sub},
                {"w_span", w_span},
                {"diff_upweight", diff_upweight},
                {"normalize_mean_active", normalize_mean_active}};
  }
  static WeightConfig from_json(const Json& j) {
    WeightConfig c;
    if (j.contains("w_code")) c.w_code = j.at("w_code").get<double>();
    if (j.contains("w_sub")) c.w_sub = j.at("w_sub").get<double>();
    if (j.contains("w_span")) c.w_span = j.at("w_span").get<double>();
    if (j.contains("diff_upweight")) c.diff_upweight = j.at("diff_upweight").get<double>();
    if (j.contains("normalize_mean_active"))
      c.normalize_mean_active = j.at("normalize_mean_active").get<bool>();
    c.validate();
    return c;
  }
};

struct ObjectiveConfig {
  double beta = 0.1;
  double tau = 0.8;
  double lambda_sft = 1.0;
  bool length_norm = true;
  bool class_balance = true;
  bool token_weighting = true;
  double rho = 0.99;
  double omega_max = 10.0;

  void validate() const {
    if (!(beta > 0)) throw std::invalid_argument("beta must be > 0");
    if (!(tau > 0 && tau < 1)) throw std::invalid_argument("tau must be in (0,1)");
    if (lambda_sft < 0) throw std::invalid_argument("lambda_sft must be >= 0");
    if (!(rho >= 0 && rho < 1)) throw std::invalid_argument("rho must be in [0,1)");
    if (!(omega_max > 0)) throw std::invalid_argument("omega_max must be > 0");
  }

  Json to_json() const {
    return Json{{"beta", beta},
                {"tau", tau},
                {"lambda_sft", lambda_sft},
                {"length_norm", length_norm},
                {"class_balance", class_balance},
                {"token_weighting", token_weighting},
                {"rho", rho},
                {"omega_max", omega_max}};
  }
  static ObjectiveConfig from_json(const Json& j) {
    ObjectiveConfig c;
    if (j.contains("beta")) c.beta = j.at("beta").get<double>();
    if (j.contains("tau")) c.tau = j.at("tau").get<double>();
    if (j.contains("lambda_sft")) c.lambda_sft = j.at("lambda_sft").get<double>();
    if (j.contains("length_norm")) c.length_norm = j.at("length_norm").get<bool>();
    if (j.contains("class_balance")) c.class_balance = j.at("class_balance").get<bool>();
    if (j.contains("token_weighting")) c.token_weighting = j.at("token_weighting").get<bool>();
    if (j.contains("rho")) c.rho = j.at("rho").get<double>();
    if (j.contains("omega_max")) c.omega_max = j.at("omega_max").get<double>();
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// SFT masked NLL
// ---------------------------------------------------------------------------

// Per-example mean NLL over completion tokens, then batch mean. Prompt tokens
// contribute nothing.
inline double sft_loss(const policy::PolicyParams& p,
                       std::span<const TokenizedCompletion> batch) {
  if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
  policy::Scratch s;
  double total = 0.0;
  for (const auto& tc : batch) {
    const auto lp = policy::sequence_log_probs(p, tc.tokens, tc.prompt_len, s);
    double sum = 0.0;
    long n = 0;
    for (std::size_t i = tc.prompt_len; i < tc.tokens.size(); ++i) {
      if (!tc.completion_mask[i]) continue;
      sum += lp[i];
      ++n;
    }
    if (n == 0) throw EmptyCompletion("completion has no unmasked tokens");
    total += -sum / static_cast<double>(n);
  }
  return total / static_cast<double>(batch.size());
}

inline double sft_loss_grad(const policy::PolicyParams& p,
                            std::span<const TokenizedCompletion> batch,
                            std::vector<double>& grad) {
  if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
  grad.assign(p.flat.size(), 0.0);
  policy::Scratch s;
  double total = 0.0;
  std::vector<double> coeffs;
  for (const auto& tc : batch) {
    long n = 0;
    for (std::size_t i = tc.prompt_len; i < tc.tokens.size(); ++i) n += tc.completion_mask[i];
    if (n == 0) throw EmptyCompletion("completion has no unmasked tokens");
    // loss is linear in the log-probs, so value and gradient come from one pass
    const double c = -1.0 / (static_cast<double>(n) * static_cast<double>(batch.size()));
    coeffs.assign(tc.tokens.size(), 0.0);
    for (std::size_t i = tc.prompt_len; i < tc.tokens.size(); ++i) {
      if (tc.completion_mask[i]) coeffs[i] = c;
    }
    double contribution = 0.0;
    policy::accumulate_log_prob_gradient(p, tc.tokens, tc.prompt_len, coeffs, grad, s,
                                         &contribution);
    total += contribution;
  }
  if (!std::isfinite(total)) throw policy::NonFiniteLoss("sft loss is not finite");
  return total;
}

// ---------------------------------------------------------------------------
// Token weights
// ---------------------------------------------------------------------------

// Unit weights: 1 on every completion token (token weighting disabled).
inline std::vector<double> unit_weights(const TokenizedCompletion& tc) {
  std::vector<double> w(tc.tokens.size(), 0.0);
  for (std::size_t i = 0; i < tc.tokens.size(); ++i) w[i] = tc.completion_mask[i] ? 1.0 : 0.0;
  return w;
}

namespace detail {

// Minimal-edit alignment between two token sequences (match 0, substitute /
// insert / delete 1; ties prefer match, then substitute). Returns, for each
// side, a flag per position: true when substituted or unaligned.
inline std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> edit_diff_flags(
    std::span<const int> a, std::span<const int> b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<int> dp((n + 1) * (m + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> int& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const int diag = at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
      const int del = at(i - 1, j) + 1;
      const int ins = at(i, j - 1) + 1;
      at(i, j) = std::min(diag, std::min(del, ins));
    }
  }
  std::vector<std::uint8_t> da(n, 0), db(m, 0);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const int diag = at(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
      if (at(i, j) == diag) {
        if (a[i - 1] != b[j - 1]) {
          da[i - 1] = 1;
          db[j - 1] = 1;
        }
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      da[i - 1] = 1;
      --i;
      continue;
    }
    db[j - 1] = 1;
    --j;
  }
  return {std::move(da), std::move(db)};
}

}  // namespace detail

// Field-typed token weights for one completion. If a partner is given,
// positions whose token differs from the partner under minimal-edit alignment
// are multiplied by diff_upweight. With normalize_mean_active the nonzero
// weights are rescaled so their mean is exactly 1.
inline std::vector<double> compute_token_weights(const TokenizedCompletion& tc,
                                                 const TokenizedCompletion* partner,
                                                 const WeightConfig& cfg) {
  std::vector<double> w(tc.tokens.size(), 0.0);
  for (int i : tc.t_code) w[static_cast<std::size_t>(i)] = cfg.w_code;
  for (int i : tc.t_sub) w[static_cast<std::size_t>(i)] = cfg.w_sub;
  for (int i : tc.t_span) w[static_cast<std::size_t>(i)] = cfg.w_span;

  if (partner != nullptr) {
    std::span<const int> own(tc.tokens.data() + tc.prompt_len, tc.completion_tokens());
    std::span<const int> other(partner->tokens.data() + partner->prompt_len,
                               partner->completion_tokens());
    const auto [diff_own, diff_other] = detail::edit_diff_flags(own, other);
    for (std::size_t i = tc.prompt_len; i < tc.tokens.size(); ++i) {
      if (w[i] != 0.0 && diff_own[i - tc.prompt_len]) w[i] *= cfg.diff_upweight;
    }
  }

  if (cfg.normalize_mean_active) {
    double sum = 0.0;
    long nonzero = 0;
    for (double v : w) {
      if (v != 0.0) {
        sum += v;
        ++nonzero;
      }
    }
    if (nonzero > 0 && sum > 0.0) {
      const double scale = static_cast<double>(nonzero) / sum;
      for (double& v : w) v *= scale;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Weighted log-likelihood aggregates
// ---------------------------------------------------------------------------

inline double weight_mass(std::span<const double> weights,
                          std::span<const std::uint8_t> mask) {
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (mask[i]) total += weights[i];
  }
  return total;
}

// Core form over a precomputed log-prob table.
inline double weighted_loglik_lp(std::span<const double> lp, std::span<const double> weights,
                                 std::span<const std::uint8_t> mask, bool length_norm) {
  double sum = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (mask[i] && weights[i] != 0.0) sum += weights[i] * lp[i];
  }
  if (!length_norm) return sum;
  const double mass = weight_mass(weights, mask);
  if (!(mass > 0.0)) throw ZeroWeightMass("length normalization with zero weight mass");
  return sum / mass;
}

inline double weighted_loglik(const policy::PolicyParams& p, const TokenizedCompletion& tc,
                              std::span<const double> weights, bool length_norm) {
  const auto lp = policy::sequence_log_probs(p, tc.tokens, tc.prompt_len);
  return weighted_loglik_lp(lp, weights, tc.completion_mask, length_norm);
}

// ---------------------------------------------------------------------------
// Preference loss
// ---------------------------------------------------------------------------

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// sigma(-x), stable for large |x|.
inline double sigmoid_neg(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

// -log sigma(beta * delta)
inline double preference_loss(double delta, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("preference_loss: beta must be > 0");
  return softplus(-beta * delta);
}

inline double preference_loss_ddelta(double delta, double beta) {
  return -beta * sigmoid_neg(beta * delta);
}

// Token-weighted reference-adjusted advantage:
//   (l_w_theta(Y+) - l_w_theta(Y-)) - (l_w_ref(Y+) - l_w_ref(Y-))
inline double preference_delta(const policy::PolicyParams& params,
                               const policy::PolicyParams& ref_params,
                               const TokenizedCompletion& pos, const TokenizedCompletion& neg,
                               std::span<const double> w_pos, std::span<const double> w_neg,
                               bool length_norm) {
  const double a_pos = weighted_loglik(params, pos, w_pos, length_norm);
  const double a_neg = weighted_loglik(params, neg, w_neg, length_norm);
  const double r_pos = weighted_loglik(ref_params, pos, w_pos, length_norm);
  const double r_neg = weighted_loglik(ref_params, neg, w_neg, length_norm);
  return (a_pos - a_neg) - (r_pos - r_neg);
}

// ---------------------------------------------------------------------------
// Barrier
// ---------------------------------------------------------------------------

// g_t = 1[ log pi(y+_t) < log tau ] over completion positions. The indicator
// is a detached mask: gradients never flow through it.
inline std::vector<std::uint8_t> barrier_gate_lp(std::span<const double> lp,
                                                 std::span<const std::uint8_t> mask,
                                                 double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("barrier_gate: tau in (0,1)");
  const double log_tau = std::log(tau);
  std::vector<std::uint8_t> gate(lp.size(), 0);
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (mask[i] && lp[i] < log_tau) gate[i] = 1;
  }
  return gate;
}

inline std::vector<std::uint8_t> barrier_gate(const policy::PolicyParams& p,
                                              const TokenizedCompletion& pos, double tau) {
  const auto lp = policy::sequence_log_probs(p, pos.tokens, pos.prompt_len);
  return barrier_gate_lp(lp, pos.completion_mask, tau);
}

// Weighted gated NLL, self-normalized by the gated weight mass; exactly 0
// when nothing is gated.
inline double barrier_loss_lp(std::span<const double> lp, std::span<const double> weights,
                              std::span<const std::uint8_t> gate) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (!gate[i]) continue;
    num += weights[i] * (-lp[i]);
    den += weights[i];
  }
  if (!(den > 0.0)) return 0.0;
  return num / den;
}

inline double barrier_loss(const policy::PolicyParams& p, const TokenizedCompletion& pos,
                           std::span<const double> weights,
                           std::span<const std::uint8_t> gate) {
  const auto lp = policy::sequence_log_probs(p, pos.tokens, pos.prompt_len);
  return barrier_loss_lp(lp, weights, gate);
}

// Analytic gradient of the barrier alone against a fixed gate mask.
inline double barrier_loss_grad(const policy::PolicyParams& p, const TokenizedCompletion& pos,
                                std::span<const double> weights,
                                std::span<const std::uint8_t> gate, std::vector<double>& grad) {
  grad.assign(p.flat.size(), 0.0);
  policy::Scratch s;
  const auto lp = policy::sequence_log_probs(p, pos.tokens, pos.prompt_len, s);
  double den = 0.0;
  for (std::size_t i = 0; i < gate.size(); ++i) {
    if (gate[i]) den += weights[i];
  }
  const double value = barrier_loss_lp(lp, weights, gate);
  if (den > 0.0) {
    std::vector<double> coeffs(lp.size(), 0.0);
    for (std::size_t i = 0; i < gate.size(); ++i) {
      if (gate[i] && weights[i] != 0.0) coeffs[i] = -weights[i] / den;
    }
    policy::accumulate_log_prob_gradient(p, pos.tokens, pos.prompt_len, coeffs, grad, s);
  }
  return value;
}

// ---------------------------------------------------------------------------
// Class balancing
// ---------------------------------------------------------------------------

// Effective-number weight eta(kappa) = (1 - rho) / (1 - rho^n).
inline double effective_number_weight(long n, double rho) {
  if (n < 1) throw std::invalid_argument("effective_number_weight: n must be >= 1");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must be in [0,1)");
  if (rho == 0.0) return 1.0;
  return (1.0 - rho) / (1.0 - std::pow(rho, static_cast<double>(n)));
}

// omega_i = min(max_{kappa in codes(gold_i)} eta(kappa), omega_max); examples
// with no codes get a neutral weight of 1.
inline double example_weight(const schema::LabelSet& gold,
                             const std::map<std::string, long>& code_frequency,
                             const ObjectiveConfig& cfg) {
  double omega = 0.0;
  bool any = false;
  for (const auto& code : gold.code_set()) {
    auto it = code_frequency.find(code);
    if (it == code_frequency.end()) throw MissingFrequency("no frequency for code: " + code);
    omega = std::max(omega, effective_number_weight(it->second, cfg.rho));
    any = true;
  }
  if (!any) omega = 1.0;
  return std::min(omega, cfg.omega_max);
}

// Normalized weighted mean sum_i omega_i L_i / sum_i omega_i; plain mean when
// class balancing is off.
inline double class_balanced_aggregate(std::span<const double> losses,
                                       std::span<const schema::LabelSet> golds,
                                       const std::map<std::string, long>& code_frequency,
                                       const ObjectiveConfig& cfg) {
  if (losses.empty() || losses.size() != golds.size()) {
    throw std::invalid_argument("class_balanced_aggregate: batch size mismatch or empty");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const double w = cfg.class_balance ? example_weight(golds[i], code_frequency, cfg) : 1.0;
    num += w * losses[i];
    den += w;
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Pluggable preference objective (baseline interface; logistic is the default)
// ---------------------------------------------------------------------------

struct PreferenceObjective {
  virtual ~PreferenceObjective() = default;
  // Aggregates are the four weighted log-likelihoods (policy +/-, reference +/-).
  virtual double loss(double pol_pos, double pol_neg, double ref_pos, double ref_neg,
                      double beta) const = 0;
  // Partial derivatives in the same order.
  virtual std::array<double, 4> dloss(double pol_pos, double pol_neg, double ref_pos,
                                      double ref_neg, double beta) const = 0;
};

struct LogisticPreference final : PreferenceObjective {
  double loss(double pol_pos, double pol_neg, double ref_pos, double ref_neg,
              double beta) const override {
    return preference_loss((pol_pos - pol_neg) - (ref_pos - ref_neg), beta);
  }
  std::array<double, 4> dloss(double pol_pos, double pol_neg, double ref_pos, double ref_neg,
                              double beta) const override {
    const double d = preference_loss_ddelta((pol_pos - pol_neg) - (ref_pos - ref_neg), beta);
    return {d, -d, -d, d};
  }
};

// ---------------------------------------------------------------------------
// TAB-PO objective
// ---------------------------------------------------------------------------

struct TokenizedTriple {
  TokenizedCompletion pos;  // chosen Y+
  TokenizedCompletion neg;  // rejected Y-
  schema::LabelSet chosen_labels;
};

// Everything theta-independent about one triple, computed once: token weights,
// frozen-reference log-probs, and the class weight.
struct PreparedTriple {
  TokenizedCompletion pos;
  TokenizedCompletion neg;
  std::vector<double> w_pos;
  std::vector<double> w_neg;
  std::vector<double> ref_lp_pos;
  std::vector<double> ref_lp_neg;
  double ref_term = 0.0;  // r+ - r-
  double omega = 1.0;
};

inline PreparedTriple prepare_triple(const policy::PolicyParams& ref_params,
                                     const TokenizedTriple& triple, const ObjectiveConfig& ocfg,
                                     const WeightConfig& wcfg,
                                     const std::map<std::string, long>* code_frequency) {
  PreparedTriple out;
  out.pos = triple.pos;
  out.neg = triple.neg;
  if (ocfg.token_weighting) {
    out.w_pos = compute_token_weights(out.pos, &out.neg, wcfg);
    out.w_neg = compute_token_weights(out.neg, &out.pos, wcfg);
  } else {
    out.w_pos = unit_weights(out.pos);
    out.w_neg = unit_weights(out.neg);
  }
  out.ref_lp_pos = policy::sequence_log_probs(ref_params, out.pos.tokens, out.pos.prompt_len);
  out.ref_lp_neg = policy::sequence_log_probs(ref_params, out.neg.tokens, out.neg.prompt_len);
  const double r_pos =
      weighted_loglik_lp(out.ref_lp_pos, out.w_pos, out.pos.completion_mask, ocfg.length_norm);
  const double r_neg =
      weighted_loglik_lp(out.ref_lp_neg, out.w_neg, out.neg.completion_mask, ocfg.length_norm);
  out.ref_term = r_pos - r_neg;
  if (ocfg.class_balance && code_frequency != nullptr) {
    out.omega = example_weight(triple.chosen_labels, *code_frequency, ocfg);
  }
  return out;
}

struct BatchStats {
  double loss = 0.0;
  double gate_fraction = 0.0;       // gated share of chosen completion tokens
  double mean_chosen_loglik = 0.0;  // mean per-token log-prob of chosen completions
  double mean_rejected_loglik = 0.0;
};

namespace detail {

inline double mean_masked(std::span<const double> lp, std::span<const std::uint8_t> mask) {
  double sum = 0.0;
  long n = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (mask[i]) {
      sum += lp[i];
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

struct TripleEval {
  double loss = 0.0;
  std::vector<double> coeff_pos;  // dL_i / dlp+ per position
  std::vector<double> coeff_neg;
  long gated = 0;
  long chosen_tokens = 0;
  double chosen_ll_sum = 0.0;
  double rejected_ll_sum = 0.0;
};

inline TripleEval eval_triple(const policy::PolicyParams& params, const PreparedTriple& t,
                              const ObjectiveConfig& cfg, const PreferenceObjective& pref,
                              bool want_grad, policy::Scratch& s) {
  TripleEval ev;
  const auto lp_pos = policy::sequence_log_probs(params, t.pos.tokens, t.pos.prompt_len, s);
  const auto lp_neg = policy::sequence_log_probs(params, t.neg.tokens, t.neg.prompt_len, s);

  const double mass_pos =
      cfg.length_norm ? weight_mass(t.w_pos, t.pos.completion_mask) : 1.0;
  const double mass_neg =
      cfg.length_norm ? weight_mass(t.w_neg, t.neg.completion_mask) : 1.0;
  const double a_pos = weighted_loglik_lp(lp_pos, t.w_pos, t.pos.completion_mask, cfg.length_norm);
  const double a_neg = weighted_loglik_lp(lp_neg, t.w_neg, t.neg.completion_mask, cfg.length_norm);
  const double r_pos =
      weighted_loglik_lp(t.ref_lp_pos, t.w_pos, t.pos.completion_mask, cfg.length_norm);
  const double r_neg =
      weighted_loglik_lp(t.ref_lp_neg, t.w_neg, t.neg.completion_mask, cfg.length_norm);

  const double pref_loss = pref.loss(a_pos, a_neg, r_pos, r_neg, cfg.beta);

  const auto gate = barrier_gate_lp(lp_pos, t.pos.completion_mask, cfg.tau);
  double gated_mass = 0.0;
  for (std::size_t i = 0; i < gate.size(); ++i) {
    if (gate[i]) {
      gated_mass += t.w_pos[i];
      ++ev.gated;
    }
  }
  const double bar_loss = barrier_loss_lp(lp_pos, t.w_pos, gate);

  ev.loss = pref_loss + cfg.lambda_sft * bar_loss;

  for (std::size_t i = t.pos.prompt_len; i < lp_pos.size(); ++i) {
    if (t.pos.completion_mask[i]) {
      ++ev.chosen_tokens;
      ev.chosen_ll_sum += lp_pos[i];
    }
  }
  ev.rejected_ll_sum = mean_masked(lp_neg, t.neg.completion_mask);

  if (want_grad) {
    const auto d = pref.dloss(a_pos, a_neg, r_pos, r_neg, cfg.beta);
    ev.coeff_pos.assign(lp_pos.size(), 0.0);
    ev.coeff_neg.assign(lp_neg.size(), 0.0);
    for (std::size_t i = t.pos.prompt_len; i < lp_pos.size(); ++i) {
      if (!t.pos.completion_mask[i] || t.w_pos[i] == 0.0) continue;
      ev.coeff_pos[i] = d[0] * t.w_pos[i] / mass_pos;
    }
    for (std::size_t i = t.neg.prompt_len; i < lp_neg.size(); ++i) {
      if (!t.neg.completion_mask[i] || t.w_neg[i] == 0.0) continue;
      ev.coeff_neg[i] = d[1] * t.w_neg[i] / mass_neg;
    }
    if (cfg.lambda_sft > 0.0 && gated_mass > 0.0) {
      for (std::size_t i = t.pos.prompt_len; i < lp_pos.size(); ++i) {
        if (!gate[i] || t.w_pos[i] == 0.0) continue;
        ev.coeff_pos[i] += cfg.lambda_sft * (-t.w_pos[i] / gated_mass);
      }
    }
  }
  return ev;
}

}  // namespace detail

// Single-triple TAB-PO loss: L_pref^w + lambda_SFT * L_barrier. Token weights
// fall back to unit weights when token weighting is off.
inline double tabpo_loss(const policy::PolicyParams& params,
                         const policy::PolicyParams& ref_params, const TokenizedTriple& triple,
                         const ObjectiveConfig& ocfg, const WeightConfig& wcfg) {
  ocfg.validate();
  wcfg.validate();
  const PreparedTriple t = prepare_triple(ref_params, triple, ocfg, wcfg, nullptr);
  policy::Scratch s;
  LogisticPreference logistic;
  return detail::eval_triple(params, t, ocfg, logistic, /*want_grad=*/false, s).loss;
}

// Class-balanced batch loss. With want_grad, also accumulates the analytic
// gradient (gate treated as a detached mask).
inline BatchStats tabpo_batch(const policy::PolicyParams& params,
                              std::span<const PreparedTriple> batch,
                              const ObjectiveConfig& cfg, std::vector<double>* grad,
                              const PreferenceObjective* objective = nullptr) {
  if (batch.empty()) throw std::invalid_argument("tabpo_batch: empty batch");
  LogisticPreference logistic;
  const PreferenceObjective& pref = objective ? *objective : logistic;
  policy::Scratch s;
  const bool want_grad = grad != nullptr;
  if (want_grad) grad->assign(params.flat.size(), 0.0);

  std::vector<detail::TripleEval> evals;
  evals.reserve(batch.size());
  double omega_sum = 0.0;
  for (const auto& t : batch) {
    evals.push_back(detail::eval_triple(params, t, cfg, pref, want_grad, s));
    omega_sum += t.omega;
  }

  BatchStats stats;
  long total_chosen = 0;
  long total_gated = 0;
  double chosen_ll = 0.0;
  double rejected_ll = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double scale = batch[i].omega / omega_sum;
    stats.loss += scale * evals[i].loss;
    total_chosen += evals[i].chosen_tokens;
    total_gated += evals[i].gated;
    chosen_ll += evals[i].chosen_ll_sum / static_cast<double>(evals[i].chosen_tokens);
    rejected_ll += evals[i].rejected_ll_sum;
    if (want_grad) {
      for (double& c : evals[i].coeff_pos) c *= scale;
      for (double& c : evals[i].coeff_neg) c *= scale;
      policy::accumulate_log_prob_gradient(params, batch[i].pos.tokens, batch[i].pos.prompt_len,
                                           evals[i].coeff_pos, *grad, s);
      policy::accumulate_log_prob_gradient(params, batch[i].neg.tokens, batch[i].neg.prompt_len,
                                           evals[i].coeff_neg, *grad, s);
    }
  }
  stats.gate_fraction =
      total_chosen > 0 ? static_cast<double>(total_gated) / static_cast<double>(total_chosen) : 0.0;
  stats.mean_chosen_loglik = chosen_ll / static_cast<double>(batch.size());
  stats.mean_rejected_loglik = rejected_ll / static_cast<double>(batch.size());
  if (!std::isfinite(stats.loss)) throw policy::NonFiniteLoss("tabpo loss is not finite");
  return stats;
}

}  // namespace tabpo::obj
