#pragma once

// Synthetic benchmark generator: hierarchical codebook, long-tailed label
// marginals, injected confusable label pairs with shared phrase stems, and
// grounded spans (every gold span is literally a message substring). Also the
// greedy iterative stratification used to build train/val/test splits.

#include "tabpo/rng.hpp"
#include "tabpo/schema.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tabpo::synth {

struct SpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SplitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ComboLabel {
  std::string code;
  std::string subcode;

  std::string key() const { return code + "/" + subcode; }
  bool operator==(const ComboLabel&) const = default;
  auto operator<=>(const ComboLabel&) const = default;
};

struct TaskSpec {
  int n_codes = 8;
  int n_subcodes = 26;
  int n_examples = 2500;
  double frequency_exponent = 0.88;
  std::uint64_t seed = 7;
  schema::Codebook codebook;
  std::vector<std::pair<ComboLabel, ComboLabel>> confusable_pairs;
  std::map<std::string, std::vector<std::string>> phrase_bank;  // combo key -> phrases

  void validate() const;
};

struct Corpus {
  std::vector<schema::Example> examples;
  std::map<std::string, long> code_counts;
  std::map<std::string, long> subcode_counts;
};

// Prompt fed to the policy for one example; the message and the direction
// flag sit at the end so they fall inside the decoding context window.
inline std::string build_prompt(const schema::Example& ex) {
  return "extract labels\n" + ex.message + "\nd=" + schema::direction_char(ex.direction);
}

// ---------------------------------------------------------------------------
// Default task
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<std::string>& word_bank() {
  static const std::vector<std::string> words = {
      "refill", "dose",   "clinic", "visit",  "copay",  "form",   "portal", "lab",
      "result", "scan",   "nurse",  "doctor", "ride",   "bus",    "rent",   "food",
      "job",    "school", "claim",  "bill",   "call",   "email",  "note",   "update",
      "plan",   "option", "choice", "agree",  "ask",    "answer", "help",   "share",
      "trust",  "greet",  "hello",  "bye",    "care",   "team",   "refer",  "city",
      "home",   "street", "air",    "water",  "friend", "family", "group",  "church",
      "kind",   "warm",   "sorry",  "glad",   "hope",   "wait",   "delay",  "slot",
      "date",   "week",   "pill",   "cream",  "shot",   "test",   "check",  "chart",
      "record", "file",   "page",   "link",   "name",   "room",   "desk",   "door",
      "card",   "list",   "goal",   "story",  "letter", "photo",  "badge",  "phone"};
  return words;
}

inline const std::vector<std::string>& filler_bank() {
  static const std::vector<std::string> fillers = {"today", "soon", "again", "now",
                                                   "twice", "later", "early", "fast"};
  return fillers;
}

}  // namespace detail

// Fixed desk-scale codebook: 8 codes, 25 named sub-codes plus "None" (26).
// C2 and C3 share S10..S13; C6..C8 are code-only.
inline schema::Codebook default_codebook() {
  schema::Codebook cb;
  for (int i = 1; i <= 8; ++i) cb.codes.push_back("C" + std::to_string(i));
  for (int i = 1; i <= 25; ++i) cb.subcodes.push_back("S" + std::to_string(i));
  cb.subcodes.push_back(schema::kNoneSubcode);
  auto range = [](int lo, int hi) {
    std::set<std::string> out;
    for (int i = lo; i <= hi; ++i) out.insert("S" + std::to_string(i));
    return out;
  };
  cb.hierarchy["C1"] = range(1, 5);
  cb.hierarchy["C2"] = range(6, 13);
  cb.hierarchy["C3"] = range(10, 17);
  cb.hierarchy["C4"] = range(18, 20);
  cb.hierarchy["C5"] = range(21, 25);
  cb.hierarchy["C6"] = {schema::kNoneSubcode};
  cb.hierarchy["C7"] = {schema::kNoneSubcode};
  cb.hierarchy["C8"] = {schema::kNoneSubcode};
  cb.validate();
  return cb;
}

inline std::vector<std::pair<ComboLabel, ComboLabel>> default_confusable_pairs() {
  return {{{"C2", "S10"}, {"C3", "S10"}},
          {{"C2", "S11"}, {"C3", "S11"}},
          {{"C1", "S2"}, {"C1", "S3"}},
          {{"C5", "S21"}, {"C5", "S22"}},
          {{"C4", "S18"}, {"C4", "S19"}}};
}

// Deterministic phrase bank: each combo gets a two-word stem plus stem+filler
// variants. Confusable pairs share the stem so only the trailing word (often
// clipped by the context window) separates them; the bare stem itself occurs
// under both labels, which makes the pair genuinely ambiguous.
inline std::map<std::string, std::vector<std::string>> default_phrase_bank(
    const schema::Codebook& cb,
    const std::vector<std::pair<ComboLabel, ComboLabel>>& confusable) {
  const auto& words = detail::word_bank();
  const auto& fillers = detail::filler_bank();
  std::map<std::string, std::vector<std::string>> bank;

  std::vector<ComboLabel> combos;
  for (const auto& code : cb.codes) {
    for (const auto& sub : cb.valid_subcodes(code)) combos.push_back({code, sub});
  }

  std::map<std::string, std::string> partner_stem;  // second pair member -> stem
  std::size_t next_word = 0;
  int filler_rot = 0;
  auto take_word = [&]() -> const std::string& {
    if (next_word >= words.size()) throw SpecError("word bank exhausted");
    return words[next_word++];
  };

  for (const auto& combo : combos) {
    std::string stem;
    auto it = partner_stem.find(combo.key());
    if (it != partner_stem.end()) {
      stem = it->second;
    } else {
      stem = take_word() + " " + take_word();
      for (const auto& [a, b] : confusable) {
        if (a == combo) partner_stem[b.key()] = stem;
      }
    }
    const std::string& f1 = fillers[static_cast<std::size_t>(filler_rot % 8)];
    const std::string& f2 = fillers[static_cast<std::size_t>((filler_rot + 3) % 8)];
    ++filler_rot;
    bool is_second_of_pair = false;
    for (const auto& [a, b] : confusable) is_second_of_pair |= (b == combo);
    if (is_second_of_pair) {
      bank[combo.key()] = {stem + " " + f1, stem + " " + f2, stem};
    } else {
      bank[combo.key()] = {stem, stem + " " + f1, stem + " " + f2};
    }
  }
  return bank;
}

inline TaskSpec default_task_spec() {
  TaskSpec spec;
  spec.codebook = default_codebook();
  spec.confusable_pairs = default_confusable_pairs();
  spec.phrase_bank = default_phrase_bank(spec.codebook, spec.confusable_pairs);
  spec.validate();
  return spec;
}

inline void TaskSpec::validate() const {
  if (n_examples <= 0) throw SpecError("n_examples must be positive");
  if (!(frequency_exponent > 0)) throw SpecError("frequency_exponent must be positive");
  codebook.validate();
  if (static_cast<int>(codebook.codes.size()) != n_codes ||
      static_cast<int>(codebook.subcodes.size()) != n_subcodes) {
    throw SpecError("codebook size does not match n_codes / n_subcodes");
  }
  if (phrase_bank.empty()) throw SpecError("empty phrase bank");
  for (const auto& code : codebook.codes) {
    for (const auto& sub : codebook.valid_subcodes(code)) {
      auto it = phrase_bank.find(code + "/" + sub);
      if (it == phrase_bank.end() || it->second.size() < 2) {
        throw SpecError("every label needs at least 2 phrases: " + code + "/" + sub);
      }
    }
  }
  auto stem_of = [](const std::string& phrase) {
    std::size_t first = phrase.find(' ');
    if (first == std::string::npos) return phrase;
    std::size_t second = phrase.find(' ', first + 1);
    return phrase.substr(0, second);
  };
  for (const auto& [a, b] : confusable_pairs) {
    bool shared = false;
    for (const auto& pa : phrase_bank.at(a.key())) {
      for (const auto& pb : phrase_bank.at(b.key())) {
        shared |= stem_of(pa) == stem_of(pb);
      }
    }
    if (!shared) throw SpecError("confusable pair shares no phrase stem: " + a.key());
  }
}

// ---------------------------------------------------------------------------
// TaskSpec serialization (codebook / pairs / phrases default when omitted)
// ---------------------------------------------------------------------------

inline Json task_spec_to_json(const TaskSpec& spec) {
  Json pairs = Json::array();
  for (const auto& [a, b] : spec.confusable_pairs) {
    pairs.push_back(Json::array({Json::array({a.code, a.subcode}),
                                 Json::array({b.code, b.subcode})}));
  }
  Json bank = Json::object();
  for (const auto& [k, v] : spec.phrase_bank) bank[k] = v;
  return Json{{"n_codes", spec.n_codes},
              {"n_subcodes", spec.n_subcodes},
              {"n_examples", spec.n_examples},
              {"frequency_exponent", spec.frequency_exponent},
              {"seed", spec.seed},
              {"codebook", spec.codebook.to_json()},
              {"confusable_pairs", pairs},
              {"phrase_bank", bank}};
}

inline TaskSpec task_spec_from_json(const Json& j) {
  TaskSpec spec = default_task_spec();
  if (j.contains("n_codes")) spec.n_codes = j.at("n_codes").get<int>();
  if (j.contains("n_subcodes")) spec.n_subcodes = j.at("n_subcodes").get<int>();
  if (j.contains("n_examples")) spec.n_examples = j.at("n_examples").get<int>();
  if (j.contains("frequency_exponent"))
    spec.frequency_exponent = j.at("frequency_exponent").get<double>();
  if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("codebook")) spec.codebook = schema::Codebook::from_json(j.at("codebook"));
  if (j.contains("confusable_pairs")) {
    spec.confusable_pairs.clear();
    for (const auto& p : j.at("confusable_pairs")) {
      spec.confusable_pairs.push_back(
          {{p.at(0).at(0).get<std::string>(), p.at(0).at(1).get<std::string>()},
           {p.at(1).at(0).get<std::string>(), p.at(1).at(1).get<std::string>()}});
    }
  }
  if (j.contains("phrase_bank")) {
    spec.phrase_bank.clear();
    for (const auto& [k, v] : j.at("phrase_bank").items()) {
      spec.phrase_bank[k] = v.get<std::vector<std::string>>();
    }
  }
  if (j.contains("codebook") || j.contains("confusable_pairs") || j.contains("phrase_bank")) {
    // custom task: re-derive nothing, just validate as given
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> power_law(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::pow(static_cast<double>(i + 1), -exponent);
  }
  return w;
}

// Codes whose phrases lean on one speaker role; sampled 4x less often in the
// mismatched direction so the direction flag carries real signal.
inline double direction_factor(const std::string& code, schema::Direction d) {
  if (code == "C2") return d == schema::Direction::patient_to_provider ? 1.0 : 0.25;
  if (code == "C3") return d == schema::Direction::provider_to_patient ? 1.0 : 0.25;
  return 1.0;
}

}  // namespace detail

inline Corpus generate_corpus(const TaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Corpus corpus;

  const auto& cb = spec.codebook;
  const auto code_base = detail::power_law(cb.codes.size(), spec.frequency_exponent);

  // Sub-code ranks follow inventory order within each code (same power law at
  // both levels).
  std::map<std::string, std::vector<std::string>> subs_of;
  std::map<std::string, std::vector<double>> sub_weights;
  for (const auto& code : cb.codes) {
    std::vector<std::string> subs(cb.valid_subcodes(code).begin(),
                                  cb.valid_subcodes(code).end());
    std::sort(subs.begin(), subs.end(), [&](const std::string& a, const std::string& b) {
      auto rank = [&](const std::string& s) {
        return std::find(cb.subcodes.begin(), cb.subcodes.end(), s) - cb.subcodes.begin();
      };
      return rank(a) < rank(b);
    });
    sub_weights[code] = detail::power_law(subs.size(), spec.frequency_exponent);
    subs_of[code] = std::move(subs);
  }

  const std::array<double, 5> tuple_count_weights = {0.35, 0.30, 0.15, 0.10, 0.10};

  int width = 1;
  for (int n = spec.n_examples - 1; n >= 10; n /= 10) ++width;

  for (int i = 0; i < spec.n_examples; ++i) {
    schema::Example ex;
    std::string idx = std::to_string(i);
    ex.id = "ex" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(idx.size()))), '0') + idx;
    ex.direction = rng.uniform01() < 0.5 ? schema::Direction::provider_to_patient
                                         : schema::Direction::patient_to_provider;

    const int n_tuples = rng.weighted_index(tuple_count_weights) + 1;
    std::vector<double> code_w(code_base);
    for (std::size_t c = 0; c < cb.codes.size(); ++c) {
      code_w[c] *= detail::direction_factor(cb.codes[c], ex.direction);
    }

    std::vector<std::string> phrases;
    for (int t = 0; t < n_tuples; ++t) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        const std::string& code = cb.codes[static_cast<std::size_t>(rng.weighted_index(code_w))];
        const auto& subs = subs_of[code];
        const std::string& sub =
            subs[static_cast<std::size_t>(rng.weighted_index(sub_weights[code]))];
        const auto& bank = spec.phrase_bank.at(code + "/" + sub);
        // The first listed phrase is the modal one.
        std::size_t pick = 0;
        if (bank.size() > 1 && rng.uniform01() >= 0.5) {
          pick = 1 + static_cast<std::size_t>(rng.uniform_int(static_cast<int>(bank.size()) - 1));
        }
        schema::AnnotationTuple tuple{code, sub, bank[pick]};
        const bool dup = std::find(ex.gold.tuples.begin(), ex.gold.tuples.end(), tuple) !=
                         ex.gold.tuples.end();
        if (dup) continue;
        ex.gold.tuples.push_back(tuple);
        phrases.push_back(tuple.span);
        break;
      }
    }
    std::string message;
    for (std::size_t k = 0; k < phrases.size(); ++k) {
      if (k) message += ' ';
      message += phrases[k];
    }
    ex.message = message;
    for (const auto& t : ex.gold.tuples) {
      ++corpus.code_counts[t.code];
      ++corpus.subcode_counts[t.subcode];
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Corpus IO (JSONL + stats sidecar)
// ---------------------------------------------------------------------------

inline void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::string out;
  for (const auto& ex : corpus.examples) {
    out += schema::example_to_json(ex).dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

inline Corpus load_corpus(const std::filesystem::path& path, const schema::Codebook& cb) {
  Corpus corpus;
  for (const auto& line : read_lines(path)) {
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("bad corpus line in " + path.string() + ": " + e.what());
    }
    corpus.examples.push_back(schema::example_from_json(j, cb));
    for (const auto& t : corpus.examples.back().gold.tuples) {
      ++corpus.code_counts[t.code];
      ++corpus.subcode_counts[t.subcode];
    }
  }
  return corpus;
}

inline void save_stats(const std::filesystem::path& path, const Corpus& corpus) {
  Json codes = Json::object();
  for (const auto& [k, v] : corpus.code_counts) codes[k] = v;
  Json subs = Json::object();
  for (const auto& [k, v] : corpus.subcode_counts) subs[k] = v;
  Json j{{"n_examples", corpus.examples.size()},
         {"code_counts", codes},
         {"subcode_counts", subs}};
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Iterative stratification (greedy, second-order)
// ---------------------------------------------------------------------------

// Greedy multi-label stratification: repeatedly take the label with the
// fewest unassigned examples and deal its examples to the split with the
// largest remaining desired count for that label (ties: largest remaining
// total capacity, then lowest split index). Desired counts are floored at 1
// on every positive-ratio split for labels with >= 3 occurrences so that
// every such label lands in every split.
namespace detail {

inline std::array<Corpus, 3> stratified_split_attempt(const Corpus& corpus,
                                                      const std::array<double, 3>& ratios,
                                                      std::uint64_t seed) {
  const std::size_t n = corpus.examples.size();

  std::vector<std::set<std::string>> labels_of(n);
  std::map<std::string, long> label_total;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& t : corpus.examples[i].gold.tuples) {
      labels_of[i].insert(t.code + "/" + t.subcode);
    }
    for (const auto& l : labels_of[i]) ++label_total[l];
  }

  std::map<std::string, std::array<double, 3>> desired;
  for (const auto& [label, total] : label_total) {
    std::array<double, 3> d{};
    for (int s = 0; s < 3; ++s) {
      d[static_cast<std::size_t>(s)] = ratios[static_cast<std::size_t>(s)] * static_cast<double>(total);
      if (total >= 3 && ratios[static_cast<std::size_t>(s)] > 0) {
        d[static_cast<std::size_t>(s)] = std::max(d[static_cast<std::size_t>(s)], 1.0);
      }
    }
    desired[label] = d;
  }
  std::array<double, 3> capacity{};
  for (int s = 0; s < 3; ++s) {
    capacity[static_cast<std::size_t>(s)] = ratios[static_cast<std::size_t>(s)] * static_cast<double>(n);
  }

  std::vector<int> assignment(n, -1);
  std::map<std::string, long> remaining = label_total;
  Rng rng(seed);
  std::size_t n_assigned = 0;

  auto place = [&](std::size_t i, int split) {
    assignment[i] = split;
    ++n_assigned;
    capacity[static_cast<std::size_t>(split)] -= 1.0;
    for (const auto& l : labels_of[i]) {
      desired[l][static_cast<std::size_t>(split)] -= 1.0;
      --remaining[l];
    }
  };
  auto pick_split = [&](const std::array<double, 3>& d) {
    int best = 0;
    for (int s = 1; s < 3; ++s) {
      const auto si = static_cast<std::size_t>(s);
      const auto bi = static_cast<std::size_t>(best);
      if (d[si] > d[bi] ||
          (d[si] == d[bi] && capacity[si] > capacity[bi])) {
        best = s;
      }
    }
    return best;
  };

  while (n_assigned < n) {
    // rarest label still carried by an unassigned example; labels with a
    // coverage requirement (total >= 3) go first so sub-threshold labels
    // cannot consume their holders
    std::string rare;
    long rare_count = 0;
    bool rare_required = false;
    for (const auto& [label, count] : remaining) {
      if (count <= 0) continue;
      const bool required = label_total[label] >= 3;
      if (rare.empty() || (required && !rare_required) ||
          (required == rare_required && count < rare_count)) {
        rare = label;
        rare_count = count;
        rare_required = required;
      }
    }
    if (rare.empty()) {
      // only label-free examples remain; deal them by remaining capacity
      for (std::size_t i = 0; i < n; ++i) {
        if (assignment[i] != -1) continue;
        place(i, pick_split(capacity));
      }
      break;
    }
    std::vector<std::size_t> holders;
    for (std::size_t i = 0; i < n; ++i) {
      if (assignment[i] == -1 && labels_of[i].count(rare)) holders.push_back(i);
    }
    rng.shuffle(holders);
    for (std::size_t i : holders) place(i, pick_split(desired[rare]));
  }

  // Repair pass: the greedy deal can strand a >= 3-count label outside some
  // split when its holders were consumed while placing rarer labels. Move a
  // donor example whose source split keeps at least one holder of every label
  // it carries; each move removes one violation and creates none, so the loop
  // terminates.
  std::map<std::string, std::array<long, 3>> holders_in;
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& l : labels_of[i]) {
      ++holders_in[l][static_cast<std::size_t>(assignment[i])];
    }
  }
  for (;;) {
    std::string viol_label;
    int viol_split = -1;
    for (const auto& [label, total] : label_total) {
      if (total < 3) continue;
      for (int s = 0; s < 3 && viol_split < 0; ++s) {
        if (ratios[static_cast<std::size_t>(s)] > 0 &&
            holders_in[label][static_cast<std::size_t>(s)] == 0) {
          viol_label = label;
          viol_split = s;
        }
      }
      if (viol_split >= 0) break;
    }
    if (viol_split < 0) break;

    std::size_t donor = n;
    long donor_headroom = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (assignment[i] == viol_split || !labels_of[i].count(viol_label)) continue;
      const auto src = static_cast<std::size_t>(assignment[i]);
      bool movable = true;
      for (const auto& l : labels_of[i]) {
        // only labels with a coverage requirement pin their holders
        if (label_total[l] >= 3 && holders_in[l][src] < 2) movable = false;
      }
      if (!movable) continue;
      const long headroom = holders_in[viol_label][src];
      if (headroom > donor_headroom) {
        donor_headroom = headroom;
        donor = i;
      }
    }
    if (donor == n) {
      throw SplitError("label " + viol_label + " missing from split " +
                       std::to_string(viol_split));
    }
    const auto src = static_cast<std::size_t>(assignment[donor]);
    for (const auto& l : labels_of[donor]) {
      --holders_in[l][src];
      ++holders_in[l][static_cast<std::size_t>(viol_split)];
    }
    assignment[donor] = viol_split;
  }

  std::array<Corpus, 3> splits;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = splits[static_cast<std::size_t>(assignment[i])];
    dst.examples.push_back(corpus.examples[i]);
    for (const auto& t : corpus.examples[i].gold.tuples) {
      ++dst.code_counts[t.code];
      ++dst.subcode_counts[t.subcode];
    }
  }
  return splits;
}

}  // namespace detail

// Greedy iterative stratification with a repair pass and deterministic
// restarts. Raises SplitError when no attempt can place every >= 3-count
// label in every positive-ratio split.
inline std::array<Corpus, 3> stratified_split(const Corpus& corpus,
                                              const std::array<double, 3>& ratios,
                                              std::uint64_t seed) {
  const double ratio_sum = ratios[0] + ratios[1] + ratios[2];
  if (!(std::abs(ratio_sum - 1.0) < 1e-9) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw SplitError("ratios must be non-negative and sum to 1");
  }
  constexpr int kAttempts = 8;
  for (int attempt = 0;; ++attempt) {
    try {
      return detail::stratified_split_attempt(corpus, ratios,
                                              splitmix64(seed + 0x9e37UL * attempt));
    } catch (const SplitError&) {
      if (attempt + 1 >= kAttempts) throw;
    }
  }
}

}  // namespace tabpo::synth
