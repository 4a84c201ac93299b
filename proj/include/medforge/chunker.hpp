#pragma once

// Splits documents into semantic units (paragraphs, sections, sentences) and
// greedily packs them into chunks bounded by a per-language scalar limit.

#include <nlohmann/json.hpp>

#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <string>
#include <vector>

#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"
#include "medforge/text.hpp"

namespace medforge::chunk {

enum class Separator { blank_line, heading, sentence };

struct ChunkPolicy {
  std::map<Language, std::size_t> limits = {
      {Language::es, 2048}, {Language::fr, 2048}, {Language::en, 2048},
      {Language::hi, 2048}, {Language::zh, 256},  {Language::ar, 128},
  };
  std::vector<Separator> separators = {Separator::blank_line, Separator::heading, Separator::sentence};

  std::size_t limit(Language lang) const {
    auto it = limits.find(lang);
    if (it == limits.end() || it->second == 0) {
      throw ValidationError("no positive chunk limit for language " + std::string(to_string(lang)));
    }
    return it->second;
  }
};

struct Chunk {
  std::string parent_id;
  std::size_t seq = 0;
  Language lang = Language::en;
  std::string source;
  std::string text;

  bool operator==(const Chunk&) const = default;
};

/// ".!?" everywhere, plus the script's own terminators.
inline bool is_terminator(char32_t cp, Language lang) noexcept {
  if (cp == U'.' || cp == U'!' || cp == U'?') return true;
  switch (lang) {
    case Language::zh: return cp == U'。' || cp == U'！' || cp == U'？';
    case Language::ar: return cp == U'؟';
    case Language::hi: return cp == U'।';
    default: return false;
  }
}

/// Splits normalized text after each terminator. ASCII terminators only split
/// when followed by whitespace or end of text ("3.5 mg" stays whole).
inline std::vector<std::string> split_sentences(const std::string& normalized, Language lang) {
  const std::u32string s = text::decode(normalized);
  std::vector<std::string> out;
  std::u32string cur;
  auto flush = [&] {
    std::string t = text::trim(text::encode(cur));
    if (!t.empty()) out.push_back(std::move(t));
    cur.clear();
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    cur.push_back(s[i]);
    if (!is_terminator(s[i], lang)) continue;
    const bool ascii = s[i] < 0x80;
    const bool at_break = i + 1 == s.size() || text::is_space(s[i + 1]);
    if (!ascii || at_break) flush();
  }
  flush();
  return out;
}

namespace detail {

/// Paragraphs separated by lines that hold only spaces, tabs or CR.
inline std::vector<std::string> raw_paragraphs(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    const std::string_view line(raw.data() + start, end - start);
    if (line.find_first_not_of(" \t\r") == std::string_view::npos && end != raw.size()) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.append(line);
      if (end != raw.size()) cur.push_back('\n');
    }
    start = end + 1;
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::vector<std::string> split_blank_lines(const std::string& raw) {
  std::vector<std::string> out;
  for (const auto& para : raw_paragraphs(raw)) {
    std::string u = text::normalize(para);
    if (!u.empty()) out.push_back(std::move(u));
  }
  return out;
}

inline bool is_heading(const std::string& line) {
  static const std::regex heading(R"(^\s*(#{1,6}\s+\S.*|(chapter|section)\s+\S+.*)$)", std::regex::icase);
  return std::regex_match(line, heading);
}

/// A heading line starts a new unit and stays with the body that follows it.
inline std::vector<std::string> split_headings(const std::string& raw) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::string u = text::normalize(cur);
    if (!u.empty()) out.push_back(std::move(u));
    cur.clear();
  };
  std::size_t start = 0;
  while (start <= raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string::npos) end = raw.size();
    const std::string line = raw.substr(start, end - start);
    if (is_heading(line)) flush();
    cur.append(line).push_back('\n');
    start = end + 1;
  }
  flush();
  return out;
}

inline std::vector<std::string> split_by(const std::string& raw, Separator sep, Language lang) {
  switch (sep) {
    case Separator::blank_line: return split_blank_lines(raw);
    case Separator::heading: return split_headings(raw);
    case Separator::sentence: return split_sentences(text::normalize(raw), lang);
  }
  return {};
}

}  // namespace detail

/// Units are normalized (NFC, whitespace collapsed). The text is cut at the
/// first separator in policy order that yields two or more non-empty units.
/// Other separators are applied inside each blank-line paragraph, so no unit
/// ever spans a blank line.
inline std::vector<std::string> split_units(const CorpusRecord& doc, const ChunkPolicy& policy) {
  const std::string raw = doc.body();
  for (Separator sep : policy.separators) {
    std::vector<std::string> units;
    if (sep == Separator::blank_line) {
      units = detail::split_blank_lines(raw);
    } else {
      for (const auto& para : detail::raw_paragraphs(raw)) {
        auto part = detail::split_by(para, sep, doc.lang);
        units.insert(units.end(), part.begin(), part.end());
      }
    }
    if (units.size() >= 2) return units;
  }
  return detail::split_blank_lines(raw);
}

/// Greedy packing. Consecutive units merge with a one-space joiner while the
/// merged length stays within `limit`. A unit longer than `limit` is first
/// split into sentences, and any sentence still too long is hard-split every
/// `limit` scalars.
inline std::vector<std::string> pack_chunks(const std::vector<std::string>& units, std::size_t limit,
                                            Language lang = Language::en) {
  if (limit == 0) throw ValidationError("chunk limit must be positive");
  std::vector<std::u32string> pieces;
  for (const auto& unit : units) {
    std::u32string u = text::decode(unit);
    if (u.empty()) continue;
    if (u.size() <= limit) {
      pieces.push_back(std::move(u));
      continue;
    }
    for (const auto& sentence : split_sentences(unit, lang)) {
      std::u32string s = text::decode(sentence);
      if (s.size() <= limit) {
        pieces.push_back(std::move(s));
        continue;
      }
      for (std::size_t off = 0; off < s.size(); off += limit) {
        std::string part = text::trim(text::encode(s.substr(off, limit)));
        if (!part.empty()) pieces.push_back(text::decode(part));
      }
    }
  }

  std::vector<std::string> out;
  std::u32string cur;
  for (auto& p : pieces) {
    if (cur.empty()) {
      cur = std::move(p);
    } else if (cur.size() + 1 + p.size() <= limit) {
      cur.push_back(U' ');
      cur.append(p);
    } else {
      out.push_back(text::encode(cur));
      cur = std::move(p);
    }
  }
  if (!cur.empty()) out.push_back(text::encode(cur));
  return out;
}

inline std::vector<Chunk> chunk_document(const CorpusRecord& doc, const ChunkPolicy& policy) {
  std::vector<Chunk> out;
  std::size_t seq = 0;
  for (auto& body : pack_chunks(split_units(doc, policy), policy.limit(doc.lang), doc.lang)) {
    out.push_back({doc.id, seq++, doc.lang, doc.source, std::move(body)});
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Chunk& c) {
  nlohmann::ordered_json j;
  j["parent_id"] = c.parent_id;
  j["seq"] = c.seq;
  j["lang"] = to_string(c.lang);
  j["source"] = c.source;
  j["text"] = c.text;
  return j;
}

inline Chunk chunk_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("chunk line is not a JSON object");
  Chunk c;
  c.parent_id = medforge::detail::required_string(j, "parent_id");
  auto seq = j.find("seq");
  if (seq == j.end() || !seq->is_number_unsigned()) throw ValidationError("field \"seq\" must be a non-negative integer");
  c.seq = seq->get<std::size_t>();
  const std::string lang = medforge::detail::required_string(j, "lang");
  auto l = parse_language(lang);
  if (!l) throw ValidationError("unknown language code \"" + lang + "\"");
  c.lang = *l;
  c.source = medforge::detail::optional_string(j, "source");
  c.text = medforge::detail::required_string(j, "text");
  if (c.text.empty()) throw ValidationError("empty chunk text");
  return c;
}

inline std::vector<Chunk> read_chunks(std::istream& in) {
  std::vector<Chunk> out;
  std::vector<std::string> diagnostics;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      out.push_back(chunk_from_json(j));
    } catch (const ValidationError& e) {
      diagnostics.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!diagnostics.empty()) {
    const std::string first = diagnostics.front();
    throw ValidationError(first, std::move(diagnostics));
  }
  return out;
}

inline std::vector<Chunk> read_chunks_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return read_chunks(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what(), e.diagnostics());
  }
}

inline void write_chunks(const std::vector<Chunk>& chunks, std::ostream& out) {
  for (const auto& c : chunks) out << to_json(c).dump() << '\n';
  out.flush();
  if (!out) throw IoError("write failure");
}

}  // namespace medforge::chunk
