#pragma once

// Canonical data model for (Code, Sub-code, Span) annotations: codebook with
// hierarchy validation, byte-stable serialization of label sets, and the
// strict parser enforcing the output contract.

#include "tabpo/files.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tabpo::schema {

inline constexpr const char* kNoneSubcode = "None";

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Not parseable, extra prose, or wrong shape (missing/extra fields, non-string values).
struct MalformedOutput : ParseError {
  using ParseError::ParseError;
};
// Code or sub-code name not present in the codebook.
struct InvalidLabel : ParseError {
  using ParseError::ParseError;
};
// Sub-code not valid for the code under the hierarchy map.
struct HierarchyViolation : ParseError {
  using ParseError::ParseError;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Codebook
// ---------------------------------------------------------------------------

struct Codebook {
  std::vector<std::string> codes;
  std::vector<std::string> subcodes;
  std::map<std::string, std::set<std::string>> hierarchy;

  bool has_code(const std::string& code) const {
    return hierarchy.find(code) != hierarchy.end();
  }
  bool has_subcode(const std::string& sub) const {
    return std::find(subcodes.begin(), subcodes.end(), sub) != subcodes.end();
  }
  const std::set<std::string>& valid_subcodes(const std::string& code) const {
    auto it = hierarchy.find(code);
    if (it == hierarchy.end()) throw SchemaError("unknown code: " + code);
    return it->second;
  }
  bool valid_pair(const std::string& code, const std::string& sub) const {
    auto it = hierarchy.find(code);
    return it != hierarchy.end() && it->second.count(sub) > 0;
  }

  void validate() const {
    std::set<std::string> code_set(codes.begin(), codes.end());
    if (code_set.size() != codes.size()) throw SchemaError("duplicate code names");
    std::set<std::string> sub_set(subcodes.begin(), subcodes.end());
    if (sub_set.size() != subcodes.size()) throw SchemaError("duplicate sub-code names");
    if (hierarchy.size() != codes.size()) throw SchemaError("hierarchy keys must match codes");
    for (const auto& [code, subs] : hierarchy) {
      if (!code_set.count(code)) throw SchemaError("hierarchy references unknown code: " + code);
      if (subs.empty()) throw SchemaError("code with empty sub-code set: " + code);
      for (const auto& s : subs) {
        if (!sub_set.count(s))
          throw SchemaError("hierarchy references sub-code not in inventory: " + s);
      }
    }
  }

  Json to_json() const {
    Json h = Json::object();
    for (const auto& code : codes) {
      Json subs = Json::array();
      for (const auto& s : valid_subcodes(code)) subs.push_back(s);
      h[code] = subs;
    }
    return Json{{"codes", codes}, {"subcodes", subcodes}, {"hierarchy", h}};
  }

  static Codebook from_json(const Json& j) {
    Codebook cb;
    cb.codes = j.at("codes").get<std::vector<std::string>>();
    cb.subcodes = j.at("subcodes").get<std::vector<std::string>>();
    for (const auto& [code, subs] : j.at("hierarchy").items()) {
      auto& dst = cb.hierarchy[code];
      for (const auto& s : subs) dst.insert(s.get<std::string>());
    }
    cb.validate();
    return cb;
  }
};

inline void save_codebook(const std::filesystem::path& path, const Codebook& cb) {
  write_file_atomic(path, cb.to_json().dump(2) + "\n");
}

inline Codebook load_codebook(const std::filesystem::path& path) {
  return Codebook::from_json(parse_json_file(path));
}

// ---------------------------------------------------------------------------
// Label sets
// ---------------------------------------------------------------------------

struct AnnotationTuple {
  std::string code;
  std::string subcode;
  std::string span;

  bool operator==(const AnnotationTuple&) const = default;
  auto operator<=>(const AnnotationTuple&) const = default;
};

struct LabelSet {
  std::vector<AnnotationTuple> tuples;  // order = serialization order

  bool operator==(const LabelSet&) const = default;
  bool empty() const { return tuples.empty(); }
  std::size_t size() const { return tuples.size(); }

  std::set<std::string> code_set() const {
    std::set<std::string> out;
    for (const auto& t : tuples) out.insert(t.code);
    return out;
  }
};

enum class Direction : char { provider_to_patient = 'Y', patient_to_provider = 'N' };

inline char direction_char(Direction d) { return static_cast<char>(d); }

inline Direction direction_from_char(char c) {
  if (c == 'Y') return Direction::provider_to_patient;
  if (c == 'N') return Direction::patient_to_provider;
  throw SchemaError(std::string("invalid direction: ") + c);
}

struct Example {
  std::string id;
  std::string message;
  Direction direction = Direction::patient_to_provider;
  LabelSet gold;
};

// ---------------------------------------------------------------------------
// Canonical serialization
// ---------------------------------------------------------------------------

inline std::string json_quote(const std::string& s) { return Json(s).dump(); }

enum class FieldKind : int { code = 0, subcode = 1, span = 2 };

struct FieldSpan {
  FieldKind kind;
  std::size_t begin;  // byte offset of first char strictly inside the quotes
  std::size_t end;    // one past the last interior char
};

struct SerializedLabelSet {
  std::string text;
  std::vector<FieldSpan> fields;
};

// Fixed key order (Code, Sub-code, Span), single space after ':' and ',',
// no other whitespace. Byte-stable for identical inputs.
inline SerializedLabelSet canonical_serialize_with_spans(const LabelSet& labels) {
  SerializedLabelSet out;
  std::string& s = out.text;
  s += "{\"results\": [";
  bool first = true;
  for (const auto& t : labels.tuples) {
    if (!first) s += ", ";
    first = false;
    auto emit = [&](const char* key, const std::string& value, FieldKind kind) {
      s += '"';
      s += key;
      s += "\": ";
      const std::string quoted = json_quote(value);
      const std::size_t begin = s.size() + 1;  // skip opening quote
      s += quoted;
      out.fields.push_back({kind, begin, s.size() - 1});
    };
    s += '{';
    emit("Code", t.code, FieldKind::code);
    s += ", ";
    emit("Sub-code", t.subcode, FieldKind::subcode);
    s += ", ";
    emit("Span", t.span, FieldKind::span);
    s += '}';
  }
  s += "]}";
  return out;
}

inline std::string canonical_serialize(const LabelSet& labels) {
  return canonical_serialize_with_spans(labels).text;
}

inline Json results_array_json(const LabelSet& labels) {
  Json arr = Json::array();
  for (const auto& t : labels.tuples) {
    arr.push_back(Json{{"Code", t.code}, {"Sub-code", t.subcode}, {"Span", t.span}});
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Strict parsing
// ---------------------------------------------------------------------------

namespace detail {

inline AnnotationTuple tuple_from_json(const Json& item) {
  if (!item.is_object() || item.size() != 3 || !item.contains("Code") ||
      !item.contains("Sub-code") || !item.contains("Span")) {
    throw MalformedOutput("each result must have exactly the Code, Sub-code, Span fields");
  }
  const Json& c = item.at("Code");
  const Json& sc = item.at("Sub-code");
  const Json& sp = item.at("Span");
  if (!c.is_string() || !sc.is_string() || !sp.is_string()) {
    throw MalformedOutput("result fields must be strings");
  }
  AnnotationTuple t{c.get<std::string>(), sc.get<std::string>(), sp.get<std::string>()};
  if (t.span.empty()) throw MalformedOutput("empty span");
  return t;
}

}  // namespace detail

// Parses a results array (the value of the "results" key) against the codebook.
inline LabelSet parse_results_array(const Json& arr, const Codebook& cb,
                                    bool collapse_duplicates = true,
                                    int* n_duplicates = nullptr) {
  if (!arr.is_array()) throw MalformedOutput("\"results\" must be an array");
  LabelSet out;
  int dups = 0;
  for (const auto& item : arr) {
    AnnotationTuple t = detail::tuple_from_json(item);
    if (!cb.has_code(t.code)) throw InvalidLabel("unknown code: " + t.code);
    if (!cb.has_subcode(t.subcode)) throw InvalidLabel("unknown sub-code: " + t.subcode);
    if (!cb.valid_pair(t.code, t.subcode)) {
      throw HierarchyViolation("sub-code " + t.subcode + " not valid for code " + t.code);
    }
    const bool seen =
        std::find(out.tuples.begin(), out.tuples.end(), t) != out.tuples.end();
    if (seen) {
      ++dups;
      if (collapse_duplicates) continue;
    }
    out.tuples.push_back(std::move(t));
  }
  if (n_duplicates) *n_duplicates = dups;
  return out;
}

// Accepts exactly one JSON object of the form {"results": [...]} with nothing
// but whitespace around it. Duplicate triples are collapsed to the first
// occurrence (set semantics); pass collapse_duplicates = false to keep them.
inline LabelSet parse_output(std::string_view text, const Codebook& cb,
                             bool collapse_duplicates = true,
                             int* n_duplicates = nullptr) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedOutput(std::string("not parseable: ") + e.what());
  }
  if (!doc.is_object() || doc.size() != 1 || !doc.contains("results")) {
    throw MalformedOutput("expected exactly one object with a \"results\" array");
  }
  return parse_results_array(doc.at("results"), cb, collapse_duplicates, n_duplicates);
}

// ---------------------------------------------------------------------------
// Validation report
// ---------------------------------------------------------------------------

struct TupleCheck {
  bool hierarchy_ok = false;
  bool grounded = false;  // span is a contiguous substring of the message
};

struct ValidationReport {
  std::vector<TupleCheck> checks;
  int duplicate_count = 0;
  bool pass = false;
};

// Reports per-tuple hierarchy validity and span grounding; never throws.
inline ValidationReport validate_label_set(const LabelSet& labels, const Codebook& cb,
                                           std::string_view message) {
  ValidationReport report;
  report.pass = true;
  std::set<AnnotationTuple> seen;
  for (const auto& t : labels.tuples) {
    TupleCheck check;
    check.hierarchy_ok = cb.has_code(t.code) && cb.has_subcode(t.subcode) &&
                         cb.valid_pair(t.code, t.subcode);
    check.grounded = !t.span.empty() && message.find(t.span) != std::string_view::npos;
    if (!seen.insert(t).second) ++report.duplicate_count;
    report.pass = report.pass && check.hierarchy_ok && check.grounded;
    report.checks.push_back(check);
  }
  report.pass = report.pass && report.duplicate_count == 0;
  return report;
}

// ---------------------------------------------------------------------------
// Example (corpus line) serialization
// ---------------------------------------------------------------------------

inline Json example_to_json(const Example& ex) {
  return Json{{"id", ex.id},
              {"message", ex.message},
              {"direction", std::string(1, direction_char(ex.direction))},
              {"gold", results_array_json(ex.gold)}};
}

inline Example example_from_json(const Json& j, const Codebook& cb) {
  Example ex;
  ex.id = j.at("id").get<std::string>();
  ex.message = j.at("message").get<std::string>();
  const auto dir = j.at("direction").get<std::string>();
  if (dir.size() != 1) throw SchemaError("direction must be a single character");
  ex.direction = direction_from_char(dir[0]);
  ex.gold = parse_results_array(j.at("gold"), cb);
  return ex;
}

}  // namespace tabpo::schema
