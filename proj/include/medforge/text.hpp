#pragma once

// UTF-8 helpers shared by every stage. "Characters" throughout the toolkit
// are Unicode scalar values, never bytes.

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "medforge/errors.hpp"

namespace medforge::text {

/// Decodes one scalar starting at s[pos]; advances pos. Returns nullopt on
/// malformed input (overlong forms, surrogates, out-of-range, truncation).
inline std::optional<char32_t> next_scalar(std::string_view s, std::size_t& pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    ++pos;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2, cp = b0 & 0x1F, min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, cp = b0 & 0x0F, min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, cp = b0 & 0x07, min = 0x10000;
  } else {
    return std::nullopt;
  }
  if (pos + len > s.size()) return std::nullopt;
  for (int i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) return std::nullopt;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
  pos += len;
  return cp;
}

inline bool is_valid_utf8(std::string_view s) {
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (!next_scalar(s, pos)) return false;
  }
  return true;
}

/// Throws ValidationError on malformed UTF-8.
inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t at = pos;
    auto cp = next_scalar(s, pos);
    if (!cp) throw ValidationError("invalid UTF-8 at byte " + std::to_string(at));
    out.push_back(*cp);
  }
  return out;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t cp : s) append_utf8(out, cp);
  return out;
}

/// Number of Unicode scalar values. Assumes valid UTF-8 (continuation bytes
/// are simply not counted).
inline std::size_t scalar_length(std::string_view s) noexcept {
  std::size_t n = 0;
  for (char c : s) {
    if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
  }
  return n;
}

inline bool is_space(char32_t cp) noexcept {
  return u_isUWhiteSpace(static_cast<UChar32>(cp)) != 0;
}

inline bool is_punct(char32_t cp) noexcept {
  return u_ispunct(static_cast<UChar32>(cp)) != 0;
}

inline char32_t to_lower(char32_t cp) noexcept {
  return static_cast<char32_t>(u_tolower(static_cast<UChar32>(cp)));
}

inline std::u32string to_lower(std::u32string_view s) {
  std::u32string out(s);
  for (auto& cp : out) cp = to_lower(cp);
  return out;
}

inline std::string nfc(std::string_view s) {
  if (!is_valid_utf8(s)) throw ValidationError("invalid UTF-8");
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  const auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  icu::UnicodeString dst = norm->normalize(src, status);
  if (U_FAILURE(status)) throw ValidationError("NFC normalization failed");
  std::string out;
  dst.toUTF8String(out);
  return out;
}

/// NFC, then runs of Unicode whitespace collapse to one ASCII space, then
/// trim. Case is preserved.
inline std::string normalize(std::string_view s) {
  const std::u32string composed = decode(nfc(s));
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char32_t cp : composed) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    append_utf8(out, cp);
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto not_ws = [](char c) { return c != ' ' && c != '\t' && c != '\n' && c != '\r'; };
  std::size_t b = 0, e = s.size();
  while (b < e && !not_ws(s[b])) ++b;
  while (e > b && !not_ws(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace medforge::text
