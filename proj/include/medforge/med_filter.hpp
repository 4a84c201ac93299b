#pragma once

// Dictionary-based domain-relevance filter: keep a document when the share of
// dictionary hits among its words is strictly above a threshold (0.04 by
// default).

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"
#include "medforge/parallel.hpp"
#include "medforge/text.hpp"

namespace medforge::filter {

inline constexpr double kDefaultThreshold = 0.04;

enum class MatchMode { word_boundary, substring };

inline std::string_view to_string(MatchMode m) noexcept {
  return m == MatchMode::word_boundary ? "word_boundary" : "substring";
}

/// Lowercased word sequence. Words are maximal runs of scalars that are
/// neither whitespace nor punctuation.
inline std::vector<std::u32string> split_words(std::string_view s) {
  std::vector<std::u32string> words;
  std::u32string cur;
  for (char32_t cp : text::decode(s)) {
    if (text::is_space(cp) || text::is_punct(cp)) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(text::to_lower(cp));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

class TermSet {
 public:
  /// Throws ValidationError when no non-blank term remains.
  static TermSet from_terms(const std::vector<std::string>& raw, MatchMode mode) {
    TermSet t;
    t.mode_ = mode;
    for (const auto& entry : raw) {
      std::string norm = text::normalize(entry);
      if (norm.empty()) continue;
      t.terms_.insert(text::encode(text::to_lower(text::decode(norm))));
    }
    if (t.terms_.empty()) throw ValidationError("empty dictionary");
    t.index();
    return t;
  }

  const std::set<std::string>& terms() const noexcept { return terms_; }
  std::size_t size() const noexcept { return terms_.size(); }
  MatchMode mode() const noexcept { return mode_; }

  /// Word-boundary scan: longest multi-word term wins at each position and
  /// counts as one hit. Returns (hits, words).
  std::pair<std::size_t, std::size_t> count_words(std::string_view body) const {
    const auto words = split_words(body);
    std::size_t hits = 0;
    std::size_t i = 0;
    while (i < words.size()) {
      std::size_t matched = 0;
      const std::size_t longest = std::min(max_term_words_, words.size() - i);
      for (std::size_t len = longest; len >= 1 && matched == 0; --len) {
        std::u32string key = words[i];
        for (std::size_t k = 1; k < len; ++k) key.append(U" ").append(words[i + k]);
        if (word_terms_.count(key)) matched = len;
      }
      if (matched) {
        ++hits;
        i += matched;
      } else {
        ++i;
      }
    }
    return {hits, words.size()};
  }

  /// Substring scan over lowercased, whitespace-normalized text: leftmost
  /// longest non-overlapping term occurrences. Denominator is the count of
  /// non-whitespace scalars. Returns (hits, scalars).
  std::pair<std::size_t, std::size_t> count_substrings(std::string_view body) const {
    const std::u32string s = text::to_lower(text::decode(text::normalize(body)));
    std::size_t denom = 0;
    for (char32_t cp : s) denom += text::is_space(cp) ? 0 : 1;
    std::size_t hits = 0;
    std::size_t i = 0;
    while (i < s.size()) {
      std::size_t node = 0, best = 0;
      for (std::size_t j = i; j < s.size(); ++j) {
        auto it = trie_[node].next.find(s[j]);
        if (it == trie_[node].next.end()) break;
        node = it->second;
        if (trie_[node].terminal) best = j - i + 1;
      }
      if (best) {
        ++hits;
        i += best;
      } else {
        ++i;
      }
    }
    return {hits, denom};
  }

 private:
  struct TrieNode {
    std::map<char32_t, std::size_t> next;
    bool terminal = false;
  };

  void index() {
    trie_.assign(1, TrieNode{});
    for (const auto& term : terms_) {
      const auto words = split_words(term);
      if (!words.empty()) {
        std::u32string key = words[0];
        for (std::size_t k = 1; k < words.size(); ++k) key.append(U" ").append(words[k]);
        word_terms_.insert(key);
        max_term_words_ = std::max(max_term_words_, words.size());
      }
      std::size_t node = 0;
      for (char32_t cp : text::decode(term)) {
        auto it = trie_[node].next.find(cp);
        if (it == trie_[node].next.end()) {
          trie_.push_back(TrieNode{});
          it = trie_[node].next.emplace(cp, trie_.size() - 1).first;
        }
        node = it->second;
      }
      trie_[node].terminal = true;
    }
  }

  std::set<std::string> terms_;
  MatchMode mode_ = MatchMode::word_boundary;
  std::unordered_set<std::u32string> word_terms_;
  std::size_t max_term_words_ = 0;
  std::vector<TrieNode> trie_;
};

/// One term per line; terms are lowercased and deduplicated.
inline TermSet load_dictionary(const std::string& path, MatchMode mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dictionary " + path);
  std::vector<std::string> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (!text::is_valid_utf8(line)) throw ValidationError(path + ": invalid UTF-8 at line " + std::to_string(raw.size() + 1));
    raw.push_back(line);
  }
  if (in.bad()) throw IoError("read failure on " + path);
  try {
    return TermSet::from_terms(raw, mode);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

struct Score {
  std::size_t hits = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

/// Chinese has no word delimiters, so zh documents are always scored in
/// substring mode.
inline Score score(const CorpusRecord& doc, const TermSet& terms) {
  const std::string body = doc.body();
  const bool substring = terms.mode() == MatchMode::substring || doc.lang == Language::zh;
  auto [hits, total] = substring ? terms.count_substrings(body) : terms.count_words(body);
  Score s{hits, total, 0.0};
  if (total > 0) s.fraction = std::min(1.0, static_cast<double>(hits) / static_cast<double>(total));
  return s;
}

inline double medical_fraction(const CorpusRecord& doc, const TermSet& terms) { return score(doc, terms).fraction; }

struct DocScore {
  std::string id;
  double fraction = 0.0;
  bool kept = false;
};

struct FilterReport {
  std::size_t total = 0;
  std::size_t kept = 0;
  double threshold = kDefaultThreshold;
  std::vector<DocScore> docs;
};

struct FilterResult {
  std::vector<CorpusRecord> kept;
  FilterReport report;
};

/// Keeps exactly the documents whose fraction is strictly greater than
/// `threshold`, preserving order.
inline FilterResult filter_corpus(const std::vector<CorpusRecord>& docs, const TermSet& terms,
                                  double threshold = kDefaultThreshold, unsigned jobs = 1) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must be in [0,1]");
  std::vector<double> fractions(docs.size());
  parallel_for(docs.size(), jobs, [&](std::size_t i) { fractions[i] = medical_fraction(docs[i], terms); });

  FilterResult out;
  out.report.total = docs.size();
  out.report.threshold = threshold;
  out.report.docs.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const bool keep = fractions[i] > threshold;
    out.report.docs.push_back({docs[i].id, fractions[i], keep});
    if (keep) out.kept.push_back(docs[i]);
  }
  out.report.kept = out.kept.size();
  return out;
}

inline nlohmann::ordered_json to_json(const FilterReport& r) {
  nlohmann::ordered_json j;
  j["total"] = r.total;
  j["kept"] = r.kept;
  j["threshold"] = r.threshold;
  auto& docs = j["docs"] = nlohmann::ordered_json::array();
  for (const auto& d : r.docs) docs.push_back({{"id", d.id}, {"fraction", d.fraction}, {"kept", d.kept}});
  return j;
}

}  // namespace medforge::filter
