#pragma once

// Canonical record schema and JSONL ingestion shared by every pipeline stage.
//
// One JSON object per line:
//   pretrain:    {"id","lang","stage":"pretrain","source","text"}
//   instruction: {"id","lang","stage":"instruction","source","question","answer"}

#include <nlohmann/json.hpp>

#include <array>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "medforge/errors.hpp"
#include "medforge/text.hpp"

namespace medforge {

enum class Language { en, zh, hi, es, fr, ar };

inline constexpr std::array<Language, 6> kAllLanguages = {Language::en, Language::zh, Language::hi,
                                                          Language::es, Language::fr, Language::ar};

inline std::string_view to_string(Language lang) noexcept {
  switch (lang) {
    case Language::en: return "en";
    case Language::zh: return "zh";
    case Language::hi: return "hi";
    case Language::es: return "es";
    case Language::fr: return "fr";
    case Language::ar: return "ar";
  }
  return "?";
}

inline std::optional<Language> parse_language(std::string_view code) noexcept {
  for (Language l : kAllLanguages) {
    if (to_string(l) == code) return l;
  }
  return std::nullopt;
}

enum class Stage { pretrain, instruction };

inline std::string_view to_string(Stage s) noexcept {
  return s == Stage::pretrain ? "pretrain" : "instruction";
}

inline std::optional<Stage> parse_stage(std::string_view s) noexcept {
  if (s == "pretrain") return Stage::pretrain;
  if (s == "instruction") return Stage::instruction;
  return std::nullopt;
}

struct CorpusRecord {
  std::string id;
  Language lang = Language::en;
  std::string source;
  Stage stage = Stage::pretrain;
  std::string text;      // pretrain
  std::string question;  // instruction
  std::string answer;    // instruction

  bool operator==(const CorpusRecord&) const = default;

  /// The text a content-based stage should look at.
  std::string body() const { return stage == Stage::pretrain ? text : question + "\n" + answer; }
};

/// Scalar-value count of the record's content; the toolkit is tokenizer-agnostic.
inline std::size_t token_estimate(const CorpusRecord& r) {
  if (r.stage == Stage::pretrain) return text::scalar_length(r.text);
  return text::scalar_length(r.question) + text::scalar_length(r.answer);
}

inline CorpusRecord make_pretrain(std::string id, Language lang, std::string source, std::string body) {
  CorpusRecord r;
  r.id = std::move(id);
  r.lang = lang;
  r.source = std::move(source);
  r.stage = Stage::pretrain;
  r.text = std::move(body);
  return r;
}

inline CorpusRecord make_instruction(std::string id, Language lang, std::string source, std::string question,
                                     std::string answer) {
  CorpusRecord r;
  r.id = std::move(id);
  r.lang = lang;
  r.source = std::move(source);
  r.stage = Stage::instruction;
  r.question = std::move(question);
  r.answer = std::move(answer);
  return r;
}

namespace detail {

inline std::string required_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw ValidationError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

inline std::string optional_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) throw ValidationError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

inline bool blank(std::string_view s) {
  for (char32_t cp : text::decode(s)) {
    if (!text::is_space(cp)) return false;
  }
  return true;
}

}  // namespace detail

/// Validates one decoded JSON object. Throws ValidationError without line info.
inline CorpusRecord record_from_json(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ValidationError("line is not a JSON object");
  CorpusRecord r;
  r.id = detail::required_string(obj, "id");
  if (r.id.empty()) throw ValidationError("empty id");

  const std::string lang = detail::required_string(obj, "lang");
  auto l = parse_language(lang);
  if (!l) throw ValidationError("unknown language code \"" + lang + "\"");
  r.lang = *l;

  const std::string stage = detail::required_string(obj, "stage");
  auto s = parse_stage(stage);
  if (!s) throw ValidationError("unknown stage \"" + stage + "\"");
  r.stage = *s;

  r.source = detail::optional_string(obj, "source");
  if (r.stage == Stage::pretrain) {
    r.text = detail::required_string(obj, "text");
    if (detail::blank(r.text)) throw ValidationError("pretrain record has empty text");
  } else {
    r.question = detail::required_string(obj, "question");
    r.answer = detail::required_string(obj, "answer");
    if (detail::blank(r.question)) throw ValidationError("instruction record has empty question");
    if (detail::blank(r.answer)) throw ValidationError("instruction record has empty answer");
  }
  return r;
}

inline nlohmann::ordered_json record_to_json(const CorpusRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["lang"] = to_string(r.lang);
  j["stage"] = to_string(r.stage);
  j["source"] = r.source;
  if (r.stage == Stage::pretrain) {
    j["text"] = r.text;
  } else {
    j["question"] = r.question;
    j["answer"] = r.answer;
  }
  return j;
}

/// Reads every line, collecting one diagnostic per invalid line; throws a
/// single ValidationError listing all of them if any line was rejected.
/// Blank lines are skipped.
inline std::vector<CorpusRecord> parse_jsonl(std::istream& in) {
  std::vector<CorpusRecord> out;
  std::vector<std::string> diagnostics;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      if (!text::is_valid_utf8(line)) throw ValidationError("invalid UTF-8");
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      CorpusRecord r = record_from_json(obj);
      if (!seen.insert(r.id).second) throw ValidationError("duplicate id \"" + r.id + "\"");
      out.push_back(std::move(r));
    } catch (const ValidationError& e) {
      diagnostics.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failure after line " + std::to_string(lineno));
  if (!diagnostics.empty()) {
    std::string msg = diagnostics.front();
    if (diagnostics.size() > 1) msg += " (+" + std::to_string(diagnostics.size() - 1) + " more)";
    throw ValidationError(msg, std::move(diagnostics));
  }
  return out;
}

inline std::vector<CorpusRecord> read_jsonl_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return parse_jsonl(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what(), e.diagnostics());
  }
}

/// Returns the number of records written.
inline std::size_t write_jsonl(const std::vector<CorpusRecord>& records, std::ostream& out) {
  for (const auto& r : records) {
    out << record_to_json(r).dump(-1, ' ', false) << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failure");
  return records.size();
}

inline std::size_t write_jsonl_file(const std::vector<CorpusRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return write_jsonl(records, out);
}

}  // namespace medforge
