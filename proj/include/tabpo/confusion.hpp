#pragma once

// Preference dataset construction: Jaccard span matching against held-out
// predictions, frequency-weighted confusion distributions, and the three
// perturbation families (label confusion, deletion, insertion) plus the
// curated stand-in stream restricted to the most-confused pairs.

#include "tabpo/rng.hpp"
#include "tabpo/schema.hpp"
#include "tabpo/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tabpo::prefs {

struct PerturbationUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Span similarity
// ---------------------------------------------------------------------------

// Lowercased whitespace tokens of a span, as a set.
inline std::set<std::string> span_token_set(std::string_view span) {
  std::set<std::string> out;
  std::string word;
  for (char c : span) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!word.empty()) out.insert(word);
      word.clear();
    } else {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!word.empty()) out.insert(word);
  return out;
}

// |A n B| / |A u B| over whitespace token sets; both empty -> 1 by convention.
inline double jaccard_similarity(std::string_view a, std::string_view b) {
  const auto ta = span_token_set(a);
  const auto tb = span_token_set(b);
  if (ta.empty() && tb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : ta) inter += tb.count(w);
  const std::size_t uni = ta.size() + tb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// One-to-one greedy matching of gold spans to predicted spans: candidate
// pairs with J >= threshold sorted by (J desc, gold index, pred index), then
// accepted greedily while both endpoints are unused.
inline std::vector<std::pair<int, int>> match_spans(const schema::LabelSet& gold,
                                                    const schema::LabelSet& pred,
                                                    double threshold = 0.6) {
  struct Cand {
    double j;
    int g;
    int p;
  };
  std::vector<Cand> cands;
  for (int g = 0; g < static_cast<int>(gold.size()); ++g) {
    for (int p = 0; p < static_cast<int>(pred.size()); ++p) {
      const double j = jaccard_similarity(gold.tuples[static_cast<std::size_t>(g)].span,
                                          pred.tuples[static_cast<std::size_t>(p)].span);
      if (j >= threshold) cands.push_back({j, g, p});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.j != b.j) return a.j > b.j;
    if (a.g != b.g) return a.g < b.g;
    return a.p < b.p;
  });
  std::vector<std::pair<int, int>> matches;
  std::set<int> used_g, used_p;
  for (const auto& c : cands) {
    if (used_g.count(c.g) || used_p.count(c.p)) continue;
    used_g.insert(c.g);
    used_p.insert(c.p);
    matches.push_back({c.g, c.p});
  }
  std::sort(matches.begin(), matches.end());
  return matches;
}

// ---------------------------------------------------------------------------
// Confusion model
// ---------------------------------------------------------------------------

struct ConfusionModel {
  // raw mismatch counts: gold label -> predicted label -> count
  std::map<std::string, std::map<std::string, long>> code_counts;
  std::map<std::string, std::map<std::string, long>> sub_counts;
  long code_matches = 0;
  long code_mismatches = 0;
  long sub_matches = 0;
  long sub_mismatches = 0;

  static std::map<std::string, double> normalize(const std::map<std::string, long>& counts) {
    double total = 0.0;
    for (const auto& [_, c] : counts) total += static_cast<double>(c);
    std::map<std::string, double> out;
    if (total <= 0.0) return out;
    for (const auto& [label, c] : counts) out[label] = static_cast<double>(c) / total;
    return out;
  }

  std::map<std::string, double> code_conf(const std::string& gold) const {
    auto it = code_counts.find(gold);
    return it == code_counts.end() ? std::map<std::string, double>{} : normalize(it->second);
  }
  std::map<std::string, double> sub_conf(const std::string& gold) const {
    auto it = sub_counts.find(gold);
    return it == sub_counts.end() ? std::map<std::string, double>{} : normalize(it->second);
  }

  Json to_json() const {
    auto table = [](const std::map<std::string, std::map<std::string, long>>& counts) {
      Json t = Json::object();
      for (const auto& [gold, row] : counts) {
        Json r = Json::object();
        for (const auto& [pred, c] : row) r[pred] = c;
        t[gold] = r;
      }
      return t;
    };
    return Json{{"code_counts", table(code_counts)},
                {"sub_counts", table(sub_counts)},
                {"code_matches", code_matches},
                {"code_mismatches", code_mismatches},
                {"sub_matches", sub_matches},
                {"sub_mismatches", sub_mismatches}};
  }

  static ConfusionModel from_json(const Json& j) {
    ConfusionModel cm;
    auto table = [](const Json& t) {
      std::map<std::string, std::map<std::string, long>> out;
      for (const auto& [gold, row] : t.items()) {
        for (const auto& [pred, c] : row.items()) out[gold][pred] = c.get<long>();
      }
      return out;
    };
    cm.code_counts = table(j.at("code_counts"));
    cm.sub_counts = table(j.at("sub_counts"));
    cm.code_matches = j.at("code_matches").get<long>();
    cm.code_mismatches = j.at("code_mismatches").get<long>();
    cm.sub_matches = j.at("sub_matches").get<long>();
    cm.sub_mismatches = j.at("sub_mismatches").get<long>();
    return cm;
  }
};

inline void save_confusion_model(const std::filesystem::path& path, const ConfusionModel& cm) {
  write_file_atomic(path, cm.to_json().dump(2) + "\n");
}

inline ConfusionModel load_confusion_model(const std::filesystem::path& path) {
  return ConfusionModel::from_json(parse_json_file(path));
}

// Counts (gold label -> predicted label) over Jaccard-matched span pairs with
// differing labels, per hierarchy level.
inline ConfusionModel extract_confusion_model(
    std::span<const std::pair<schema::LabelSet, schema::LabelSet>> pairs,
    double threshold = 0.6, bool many_to_many = false) {
  ConfusionModel cm;
  for (const auto& [gold, pred] : pairs) {
    std::vector<std::pair<int, int>> matches;
    if (many_to_many) {
      for (int g = 0; g < static_cast<int>(gold.size()); ++g) {
        for (int p = 0; p < static_cast<int>(pred.size()); ++p) {
          if (jaccard_similarity(gold.tuples[static_cast<std::size_t>(g)].span,
                                 pred.tuples[static_cast<std::size_t>(p)].span) >= threshold) {
            matches.push_back({g, p});
          }
        }
      }
    } else {
      matches = match_spans(gold, pred, threshold);
    }
    for (const auto& [g, p] : matches) {
      const auto& gt = gold.tuples[static_cast<std::size_t>(g)];
      const auto& pt = pred.tuples[static_cast<std::size_t>(p)];
      if (gt.code != pt.code) {
        ++cm.code_counts[gt.code][pt.code];
        ++cm.code_mismatches;
      } else {
        ++cm.code_matches;
      }
      if (gt.subcode != pt.subcode) {
        ++cm.sub_counts[gt.subcode][pt.subcode];
        ++cm.sub_mismatches;
      } else {
        ++cm.sub_matches;
      }
    }
  }
  return cm;
}

// Restriction of the model to the most-confused pairs: keep, per level, the
// highest-count (gold, pred) pairs that together carry the top quartile of
// total mismatch mass (at least one pair per level when any exist). Used as
// the programmatic stand-in for expert-curated preferences.
inline ConfusionModel top_quartile_model(const ConfusionModel& cm) {
  auto restrict_table = [](const std::map<std::string, std::map<std::string, long>>& counts) {
    struct Entry {
      std::string gold, pred;
      long c;
    };
    std::vector<Entry> entries;
    long total = 0;
    for (const auto& [gold, row] : counts) {
      for (const auto& [pred, c] : row) {
        entries.push_back({gold, pred, c});
        total += c;
      }
    }
    std::map<std::string, std::map<std::string, long>> out;
    if (entries.empty()) return out;
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.c != b.c) return a.c > b.c;
      if (a.gold != b.gold) return a.gold < b.gold;
      return a.pred < b.pred;
    });
    long kept = 0;
    for (const auto& e : entries) {
      out[e.gold][e.pred] = e.c;
      kept += e.c;
      if (4 * kept >= total) break;
    }
    return out;
  };
  ConfusionModel out = cm;
  out.code_counts = restrict_table(cm.code_counts);
  out.sub_counts = restrict_table(cm.sub_counts);
  return out;
}

// ---------------------------------------------------------------------------
// Perturbation families
// ---------------------------------------------------------------------------

enum class Family { confusion, deletion, insertion, curated_standin };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::confusion: return "confusion";
    case Family::deletion: return "deletion";
    case Family::insertion: return "insertion";
    case Family::curated_standin: return "curated_standin";
  }
  throw std::logic_error("bad family");
}

inline Family family_from_name(const std::string& s) {
  if (s == "confusion") return Family::confusion;
  if (s == "deletion") return Family::deletion;
  if (s == "insertion") return Family::insertion;
  if (s == "curated_standin") return Family::curated_standin;
  throw std::invalid_argument("unknown family: " + s);
}

struct PreferenceTriple {
  std::string example_id;
  std::string prompt;
  schema::LabelSet chosen;
  schema::LabelSet rejected;
  Family family = Family::confusion;
};

namespace detail {

inline std::string sample_from_distribution(const std::map<std::string, double>& dist,
                                            Rng& rng) {
  std::vector<double> w;
  std::vector<const std::string*> labels;
  for (const auto& [label, p] : dist) {
    labels.push_back(&label);
    w.push_back(p);
  }
  return *labels[static_cast<std::size_t>(rng.weighted_index(w))];
}

// Confused code: empirical distribution conditioned on the gold code, falling
// back to uniform over the other codes when the conditional is empty.
inline std::string sample_confused_code(const std::string& code, const ConfusionModel& cm,
                                        const schema::Codebook& cb, Rng& rng) {
  auto dist = cm.code_conf(code);
  dist.erase(code);
  if (!dist.empty()) return sample_from_distribution(dist, rng);
  std::vector<std::string> others;
  for (const auto& c : cb.codes) {
    if (c != code) others.push_back(c);
  }
  if (others.empty()) throw PerturbationUnavailable("no alternative code for " + code);
  return others[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(others.size())))];
}

// Confused sub-code restricted to H(new_code): renormalize the conditional
// over the intersection; if empty, uniform over H(new_code) \ {sub}; if that
// is empty too, the sub-code is forced (H(new_code) == {sub}).
inline std::string sample_confused_subcode(const std::string& sub, const std::string& new_code,
                                           const ConfusionModel& cm, const schema::Codebook& cb,
                                           Rng& rng) {
  const auto& valid = cb.valid_subcodes(new_code);
  auto dist = cm.sub_conf(sub);
  std::map<std::string, double> restricted;
  for (const auto& [label, p] : dist) {
    if (label != sub && valid.count(label)) restricted[label] = p;
  }
  if (!restricted.empty()) return sample_from_distribution(restricted, rng);
  std::vector<std::string> others;
  for (const auto& s : valid) {
    if (s != sub) others.push_back(s);
  }
  if (!others.empty()) {
    return others[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(others.size())))];
  }
  return sub;  // H(new_code) == {sub}
}

inline std::string random_substring_of_span(const std::string& span, Rng& rng) {
  const int len = static_cast<int>(span.size());
  const int sub_len = 1 + rng.uniform_int(len);
  const int start = rng.uniform_int(len - sub_len + 1);
  return span.substr(static_cast<std::size_t>(start), static_cast<std::size_t>(sub_len));
}

}  // namespace detail

// Builds a hierarchy-valid rejected label set from the gold one.
//   confusion: resample (code, sub-code) of perturbed tuples from the
//     empirical confusion distributions, spans preserved. max_perturbed caps
//     how many tuples change (0 = all; the low-separation preset uses 1).
//   deletion: drop one uniformly chosen tuple (needs >= 2 so the rejected
//     side keeps at least one weighted field token).
//   insertion: add one spurious tuple; its span is a random substring of an
//     existing gold span.
inline schema::LabelSet perturb_label_set(const schema::LabelSet& gold, Family family,
                                          const ConfusionModel& cm,
                                          const schema::Codebook& cb,
                                          const std::string& /*message*/, Rng& rng,
                                          int max_perturbed = 0) {
  const Family effective = family == Family::curated_standin ? Family::confusion : family;
  switch (effective) {
    case Family::confusion: {
      if (gold.empty()) throw PerturbationUnavailable("confusion needs a non-empty gold set");
      const int limit = max_perturbed > 0
                            ? std::min<int>(max_perturbed, static_cast<int>(gold.size()))
                            : static_cast<int>(gold.size());
      // Retry when the resampled labels collide into duplicate tuples, which
      // can happen when confusable combos share identical span phrases.
      for (int attempt = 0; attempt < 20; ++attempt) {
        schema::LabelSet out = gold;
        std::vector<int> order(gold.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);
        for (int k = 0; k < limit; ++k) {
          auto& t = out.tuples[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
          const std::string new_code = detail::sample_confused_code(t.code, cm, cb, rng);
          const std::string new_sub =
              detail::sample_confused_subcode(t.subcode, new_code, cm, cb, rng);
          t.code = new_code;
          t.subcode = new_sub;
        }
        std::set<schema::AnnotationTuple> uniq(out.tuples.begin(), out.tuples.end());
        if (uniq.size() == out.tuples.size() && !(out == gold)) return out;
      }
      throw PerturbationUnavailable("confusion produced no valid change");
    }
    case Family::deletion: {
      if (gold.size() < 2) {
        throw PerturbationUnavailable("deletion needs at least 2 tuples");
      }
      schema::LabelSet out = gold;
      const int victim = rng.uniform_int(static_cast<int>(gold.size()));
      out.tuples.erase(out.tuples.begin() + victim);
      return out;
    }
    case Family::insertion: {
      if (gold.empty()) throw PerturbationUnavailable("insertion needs a non-empty gold set");
      schema::LabelSet out = gold;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const auto& host =
            gold.tuples[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(gold.size())))];
        const std::string code = detail::sample_confused_code(host.code, cm, cb, rng);
        const std::string sub = detail::sample_confused_subcode(host.subcode, code, cm, cb, rng);
        schema::AnnotationTuple extra{code, sub, detail::random_substring_of_span(host.span, rng)};
        const bool dup =
            std::find(out.tuples.begin(), out.tuples.end(), extra) != out.tuples.end();
        if (dup) continue;
        out.tuples.push_back(std::move(extra));
        return out;
      }
      throw PerturbationUnavailable("insertion could not produce a new tuple");
    }
    default:
      throw std::logic_error("unreachable");
  }
}

// ---------------------------------------------------------------------------
// Preference dataset
// ---------------------------------------------------------------------------

struct MixtureWeights {
  double confusion = 0.6;
  double deletion = 0.2;
  double insertion = 0.2;
};

struct BuildReport {
  long skipped = 0;  // PerturbationUnavailable occurrences, never silent
  std::map<std::string, long> family_counts;
};

// Deterministic preference dataset: family quotas are allocated exactly from
// (standin_fraction, mixture) by largest remainder, then assigned to examples
// in seeded shuffled order. The curated stand-in stream runs the confusion
// family against the top-quartile confusion model.
inline std::vector<PreferenceTriple> build_preference_dataset(
    const synth::Corpus& corpus, const ConfusionModel& cm, const schema::Codebook& cb,
    const MixtureWeights& mixture, double standin_fraction, long n_triples,
    std::uint64_t seed, BuildReport* report = nullptr, int max_perturbed = 0) {
  if (n_triples < 0) throw std::invalid_argument("n_triples must be >= 0");
  if (standin_fraction < 0 || standin_fraction > 1) {
    throw std::invalid_argument("standin_fraction must be in [0,1]");
  }
  const double mix_sum = mixture.confusion + mixture.deletion + mixture.insertion;
  if (mixture.confusion < 0 || mixture.deletion < 0 || mixture.insertion < 0 || !(mix_sum > 0)) {
    throw std::invalid_argument("mixture weights must be non-negative, not all zero");
  }
  if (corpus.examples.empty() && n_triples > 0) {
    throw std::invalid_argument("cannot build triples from an empty corpus");
  }

  // Exact quotas by largest remainder.
  const double synth_frac = 1.0 - standin_fraction;
  const std::array<double, 4> target = {
      standin_fraction, synth_frac * mixture.confusion / mix_sum,
      synth_frac * mixture.deletion / mix_sum, synth_frac * mixture.insertion / mix_sum};
  std::array<long, 4> quota{};
  std::array<double, 4> frac{};
  long assigned = 0;
  for (int i = 0; i < 4; ++i) {
    const double exact = target[static_cast<std::size_t>(i)] * static_cast<double>(n_triples);
    quota[static_cast<std::size_t>(i)] = static_cast<long>(exact);
    frac[static_cast<std::size_t>(i)] = exact - static_cast<double>(quota[static_cast<std::size_t>(i)]);
    assigned += quota[static_cast<std::size_t>(i)];
  }
  while (assigned < n_triples) {
    int best = 0;
    for (int i = 1; i < 4; ++i) {
      if (frac[static_cast<std::size_t>(i)] > frac[static_cast<std::size_t>(best)]) best = i;
    }
    ++quota[static_cast<std::size_t>(best)];
    frac[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  const std::array<Family, 4> family_of = {Family::curated_standin, Family::confusion,
                                           Family::deletion, Family::insertion};
  std::vector<Family> slots;
  slots.reserve(static_cast<std::size_t>(n_triples));
  for (int i = 0; i < 4; ++i) {
    for (long k = 0; k < quota[static_cast<std::size_t>(i)]; ++k) {
      slots.push_back(family_of[static_cast<std::size_t>(i)]);
    }
  }
  Rng rng(seed);
  rng.shuffle(slots);

  const ConfusionModel standin_cm = top_quartile_model(cm);

  std::vector<PreferenceTriple> out;
  out.reserve(slots.size());
  BuildReport rep;
  std::size_t cursor = 0;
  for (Family family : slots) {
    bool made = false;
    // cycle the corpus until a compatible example is found
    for (std::size_t tries = 0; tries < corpus.examples.size() && !made; ++tries) {
      const auto& ex = corpus.examples[cursor % corpus.examples.size()];
      ++cursor;
      try {
        const ConfusionModel& model =
            family == Family::curated_standin ? standin_cm : cm;
        schema::LabelSet rejected =
            perturb_label_set(ex.gold, family, model, cb, ex.message, rng, max_perturbed);
        if (rejected == ex.gold) continue;
        PreferenceTriple triple;
        triple.example_id = ex.id;
        triple.prompt = synth::build_prompt(ex);
        triple.chosen = ex.gold;
        triple.rejected = std::move(rejected);
        triple.family = family;
        out.push_back(std::move(triple));
        made = true;
      } catch (const PerturbationUnavailable&) {
        ++rep.skipped;
      }
    }
    if (made) ++rep.family_counts[family_name(family)];
  }
  if (report) *report = rep;
  return out;
}

// ---------------------------------------------------------------------------
// Preference file IO (JSONL)
// ---------------------------------------------------------------------------

inline void save_preferences(const std::filesystem::path& path,
                             std::span<const PreferenceTriple> triples) {
  std::string out;
  for (const auto& t : triples) {
    Json j{{"id", t.example_id},
           {"prompt", t.prompt},
           {"chosen", schema::results_array_json(t.chosen)},
           {"rejected", schema::results_array_json(t.rejected)},
           {"family", family_name(t.family)}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

inline std::vector<PreferenceTriple> load_preferences(const std::filesystem::path& path,
                                                      const schema::Codebook& cb) {
  std::vector<PreferenceTriple> out;
  for (const auto& line : read_lines(path)) {
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad preference line in " + path.string() + ": " + e.what());
    }
    PreferenceTriple t;
    t.example_id = j.at("id").get<std::string>();
    t.prompt = j.at("prompt").get<std::string>();
    t.chosen = schema::parse_results_array(j.at("chosen"), cb);
    t.rejected = schema::parse_results_array(j.at("rejected"), cb);
    t.family = family_from_name(j.at("family").get<std::string>());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tabpo::prefs
