#pragma once

// Importers from public benchmark release layouts into the normalized task
// JSONL consumed by the evaluation harness.

#include <nlohmann/json.hpp>

#include <cctype>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "medforge/errors.hpp"
#include "medforge/xmed_eval.hpp"

namespace medforge::eval {

enum class ImportFormat { medqa, frenchmedmcqa, mmlu_csv };

inline ImportFormat parse_import_format(const std::string& s) {
  if (s == "medqa") return ImportFormat::medqa;
  if (s == "frenchmedmcqa") return ImportFormat::frenchmedmcqa;
  if (s == "mmlu-csv") return ImportFormat::mmlu_csv;
  throw ValidationError("unknown import format \"" + s + "\" (expected medqa, frenchmedmcqa or mmlu-csv)");
}

struct ImportResult {
  std::vector<EvalItem> items;
  std::size_t skipped = 0;  // multi-answer or otherwise unusable rows
};

namespace detail {

/// RFC 4180 record splitter (quoted fields, doubled quotes, embedded newlines).
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

inline std::optional<std::size_t> letter_index(const std::string& s) {
  if (s.size() != 1) return std::nullopt;
  const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  if (c < 'A' || c > 'Z') return std::nullopt;
  return static_cast<std::size_t>(c - 'A');
}

}  // namespace detail

/// medqa:          JSONL {"question", "options": {"A": ..}, "answer_idx": "A"}
/// frenchmedmcqa:  JSONL {"question", "answer_a".."answer_e", "correct_answers": ["a", ...]};
///                 only single-answer rows are kept
/// mmlu-csv:       question,A,B,C,D,answer (no header)
inline ImportResult import_task(std::istream& in, ImportFormat format) {
  ImportResult out;
  std::size_t lineno = 0;
  auto push = [&](std::string q, std::vector<std::string> options, std::size_t gold, std::string id) {
    if (gold >= options.size()) throw ValidationError("line " + std::to_string(lineno) + ": answer out of range");
    EvalItem it{std::move(id), std::move(q), std::move(options), gold};
    if (it.id.empty()) it.id = content_id(it.question);
    out.items.push_back(std::move(it));
  };

  if (format == ImportFormat::mmlu_csv) {
    std::vector<std::string> f;
    while (detail::read_csv_record(in, f)) {
      ++lineno;
      if (f.size() == 1 && f[0].empty()) continue;
      if (f.size() < 4) throw ValidationError("line " + std::to_string(lineno) + ": too few CSV fields");
      auto gold = detail::letter_index(f.back());
      if (!gold) throw ValidationError("line " + std::to_string(lineno) + ": bad answer letter \"" + f.back() + "\"");
      std::vector<std::string> options(f.begin() + 1, f.end() - 1);
      push(f[0], std::move(options), *gold, "");
    }
    return out;
  }

  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    try {
      std::string id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "";
      if (format == ImportFormat::medqa) {
        std::vector<std::string> options;
        std::map<std::string, std::string> opts = j.at("options").get<std::map<std::string, std::string>>();
        for (const auto& [k, v] : opts) options.push_back(v);
        auto gold = detail::letter_index(j.at("answer_idx").get<std::string>());
        if (!gold) throw ValidationError("bad answer_idx");
        push(j.at("question").get<std::string>(), std::move(options), *gold, std::move(id));
      } else {
        const auto answers = j.at("correct_answers").get<std::vector<std::string>>();
        if (answers.size() != 1) {
          ++out.skipped;
          continue;
        }
        std::vector<std::string> options;
        for (char c = 'a'; c <= 'e'; ++c) {
          const std::string key = std::string("answer_") + c;
          if (j.contains(key)) options.push_back(j[key].get<std::string>());
        }
        auto gold = detail::letter_index(answers.front());
        if (!gold) throw ValidationError("bad correct_answers entry");
        push(j.at("question").get<std::string>(), std::move(options), *gold, std::move(id));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace medforge::eval
