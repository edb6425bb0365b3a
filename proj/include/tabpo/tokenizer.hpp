#pragma once

// Byte-level tokenizer (one token per byte, 256 ids + BOS/EOS/PAD) and
// completion tokenization with per-field index tracking. One token per byte
// makes the Code/Sub-code/Span index sets exact: a token can never straddle
// a field boundary.

#include "tabpo/schema.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tabpo::tok {

inline constexpr int kByteVocab = 256;
inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;
inline constexpr int kVocabSize = 259;

// Raised when a token cannot be attributed to a single field. Unreachable for
// the byte tokenizer; kept in the contract for alternative tokenizers and for
// completions that are not in canonical form.
struct FieldRecoveryFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<int> encode_bytes(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

inline std::string decode_bytes(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < kByteVocab) out.push_back(static_cast<char>(id));
  }
  return out;
}

struct TokenizedCompletion {
  std::vector<int> tokens;                  // prompt || '\n' || completion || EOS
  std::vector<std::uint8_t> completion_mask;  // 1 on completion tokens (incl. EOS)
  std::size_t prompt_len = 0;               // tokens[0..prompt_len) are masked out
  std::vector<int> t_code;                  // token indices inside Code values
  std::vector<int> t_sub;
  std::vector<int> t_span;
  std::vector<double> weights;              // 0 outside the three field sets

  std::size_t completion_tokens() const { return tokens.size() - prompt_len; }
};

namespace detail {

// Scans a canonical completion, recording the byte ranges strictly inside the
// quoted Code / Sub-code / Span values. Any deviation from the canonical form
// means field boundaries cannot be attributed.
inline std::vector<schema::FieldSpan> recover_field_spans(std::string_view text) {
  std::vector<schema::FieldSpan> fields;
  std::size_t pos = 0;
  auto fail = [&](const char* why) -> void {
    throw FieldRecoveryFailure(std::string("field recovery: ") + why);
  };
  auto expect = [&](std::string_view lit) {
    if (text.substr(pos, lit.size()) != lit) fail("canonical form mismatch");
    pos += lit.size();
  };
  auto scan_value = [&](schema::FieldKind kind) {
    const std::size_t begin = pos;
    while (pos < text.size()) {
      if (text[pos] == '\\') {
        pos += 2;
        continue;
      }
      if (text[pos] == '"') break;
      ++pos;
    }
    if (pos > text.size() || pos == text.size()) fail("unterminated value");
    fields.push_back({kind, begin, pos});
    ++pos;  // closing quote
  };

  expect("{\"results\": [");
  if (pos < text.size() && text[pos] == ']') {
    expect("]}");
  } else {
    for (;;) {
      expect("{\"Code\": \"");
      scan_value(schema::FieldKind::code);
      expect(", \"Sub-code\": \"");
      scan_value(schema::FieldKind::subcode);
      expect(", \"Span\": \"");
      scan_value(schema::FieldKind::span);
      expect("}");
      if (pos < text.size() && text[pos] == ']') break;
      expect(", ");
    }
    expect("]}");
  }
  if (pos != text.size()) fail("trailing bytes after completion");
  return fields;
}

}  // namespace detail

// Tokenizes prompt || '\n' || completion || EOS. The completion must be in
// canonical serialized form so field boundaries are recoverable.
inline TokenizedCompletion tokenize_with_fields(std::string_view prompt_text,
                                                std::string_view completion_text) {
  const auto fields = detail::recover_field_spans(completion_text);

  TokenizedCompletion tc;
  tc.tokens = encode_bytes(prompt_text);
  tc.tokens.push_back('\n');
  tc.prompt_len = tc.tokens.size();
  const std::size_t base = tc.prompt_len;
  for (unsigned char c : completion_text) tc.tokens.push_back(static_cast<int>(c));
  tc.tokens.push_back(kEos);

  tc.completion_mask.assign(tc.tokens.size(), 0);
  for (std::size_t i = base; i < tc.tokens.size(); ++i) tc.completion_mask[i] = 1;

  for (const auto& f : fields) {
    auto& dst = f.kind == schema::FieldKind::code  ? tc.t_code
                : f.kind == schema::FieldKind::subcode ? tc.t_sub
                                                       : tc.t_span;
    for (std::size_t i = f.begin; i < f.end; ++i) dst.push_back(static_cast<int>(base + i));
  }
  tc.weights.assign(tc.tokens.size(), 0.0);
  return tc;
}

}  // namespace tabpo::tok
