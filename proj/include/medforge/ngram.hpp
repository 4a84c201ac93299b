#pragma once

// Character-level n-gram language model with additive smoothing. Serves as a
// desk-scale TokenDistributionProvider.
//
//   P(c | h) = (count(h, c) + delta) / (count(h) + delta * |V|)
//
// h is the previous order-1 symbols, left-padded with a begin marker. The
// vocabulary is the end marker followed by characters in code-point order.

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <cstddef>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "medforge/errors.hpp"
#include "medforge/proxy_decoder.hpp"
#include "medforge/text.hpp"

namespace medforge::ngram {

using proxy::TokenId;

inline constexpr const char* kEndToken = "</s>";
inline constexpr const char* kBeginToken = "<s>";
inline constexpr TokenId kBegin = -1;
inline constexpr TokenId kEnd = 0;

class CharVocabulary {
 public:
  CharVocabulary() : tokens_{kEndToken} { index_.emplace(kEndToken, kEnd); }

  /// Union of every character in `corpora`.
  static CharVocabulary from_corpora(std::initializer_list<const std::vector<std::string>*> corpora) {
    std::set<char32_t> chars;
    for (const auto* corpus : corpora) {
      for (const auto& s : *corpus) {
        for (char32_t cp : text::decode(s)) chars.insert(cp);
      }
    }
    std::vector<std::string> toks{kEndToken};
    for (char32_t cp : chars) toks.push_back(text::encode(std::u32string(1, cp)));
    return from_tokens(toks);
  }

  /// Tokens must start with the end marker and be unique single characters.
  static CharVocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.empty() || tokens.front() != kEndToken) throw ValidationError("vocabulary must start with </s>");
    CharVocabulary v;
    v.tokens_ = tokens;
    v.index_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i > 0 && text::decode(tokens[i]).size() != 1) {
        throw ValidationError("vocabulary entry \"" + tokens[i] + "\" is not a single character");
      }
      if (!v.index_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
        throw ValidationError("duplicate vocabulary entry \"" + tokens[i] + "\"");
      }
    }
    return v;
  }

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  /// Unknown characters throw unless `skip_unknown`, in which case they are dropped.
  std::vector<TokenId> encode(std::string_view s, bool skip_unknown = false) const {
    std::vector<TokenId> ids;
    for (char32_t cp : text::decode(s)) {
      auto it = index_.find(text::encode(std::u32string(1, cp)));
      if (it != index_.end()) {
        ids.push_back(it->second);
      } else if (!skip_unknown) {
        char hex[16];
        std::snprintf(hex, sizeof hex, "U+%04X", static_cast<unsigned>(cp));
        throw ValidationError(std::string("character ") + hex + " not in vocabulary");
      }
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id > kEnd && static_cast<std::size_t>(id) < tokens_.size()) out += tokens_[id];
    }
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

class NgramLM final : public proxy::TokenDistributionProvider {
 public:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
  };

  NgramLM(CharVocabulary vocab, int order, double delta) : vocab_(std::move(vocab)), order_(order), delta_(delta) {
    if (order < 1) throw ValidationError("n-gram order must be >= 1");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw ValidationError("smoothing constant must be > 0");
  }

  const std::vector<std::string>& vocabulary() const override { return vocab_.tokens(); }
  const CharVocabulary& vocab() const noexcept { return vocab_; }
  int order() const noexcept { return order_; }
  double delta() const noexcept { return delta_; }
  const std::map<std::vector<TokenId>, ContextCounts>& counts() const noexcept { return counts_; }

  /// Adds one sequence: begin padding, characters, end marker.
  void observe(std::span<const TokenId> seq) {
    std::vector<TokenId> full(static_cast<std::size_t>(order_ - 1), kBegin);
    full.insert(full.end(), seq.begin(), seq.end());
    full.push_back(kEnd);
    for (std::size_t i = static_cast<std::size_t>(order_ - 1); i < full.size(); ++i) {
      std::vector<TokenId> h(full.begin() + static_cast<std::ptrdiff_t>(i - (order_ - 1)),
                             full.begin() + static_cast<std::ptrdiff_t>(i));
      add_count(std::move(h), full[i], 1);
    }
  }

  void add_count(std::vector<TokenId> context, TokenId next, std::uint64_t n) {
    if (next < 0 || static_cast<std::size_t>(next) >= vocab_.size()) throw ValidationError("token id out of range");
    auto& c = counts_[std::move(context)];
    c.total += n;
    c.next[next] += n;
  }

  /// The last order-1 tokens of `context`, left-padded with the begin marker.
  std::vector<TokenId> history(std::span<const TokenId> context) const {
    const std::size_t h = static_cast<std::size_t>(order_ - 1);
    std::vector<TokenId> out(h, kBegin);
    const std::size_t take = std::min(h, context.size());
    std::copy(context.end() - static_cast<std::ptrdiff_t>(take), context.end(), out.end() - static_cast<std::ptrdiff_t>(take));
    return out;
  }

  std::vector<double> probabilities(std::span<const TokenId> context) const {
    const double v = static_cast<double>(vocab_.size());
    auto it = counts_.find(history(context));
    std::vector<double> p(vocab_.size());
    if (it == counts_.end()) {
      std::fill(p.begin(), p.end(), 1.0 / v);
      return p;
    }
    const double denom = static_cast<double>(it->second.total) + delta_ * v;
    std::fill(p.begin(), p.end(), delta_ / denom);
    for (const auto& [tok, n] : it->second.next) p[static_cast<std::size_t>(tok)] = (static_cast<double>(n) + delta_) / denom;
    return p;
  }

  /// Log of the smoothed conditional probabilities.
  std::vector<double> logits(std::span<const TokenId> context) const override {
    auto p = probabilities(context);
    for (auto& x : p) x = std::log(x);
    return p;
  }

 private:
  CharVocabulary vocab_;
  int order_;
  double delta_;
  std::map<std::vector<TokenId>, ContextCounts> counts_;
};

/// With no vocabulary the model uses exactly the corpus characters. Models
/// meant for one proxy ensemble must share a vocabulary.
inline NgramLM train_ngram(const std::vector<std::string>& corpus, int order, double delta,
                           const CharVocabulary* vocab = nullptr) {
  if (corpus.empty()) throw ValidationError("empty training corpus");
  NgramLM lm(vocab ? *vocab : CharVocabulary::from_corpora({&corpus}), order, delta);
  for (const auto& s : corpus) lm.observe(lm.vocab().encode(s));
  return lm;
}

inline nlohmann::ordered_json to_json(const NgramLM& lm) {
  nlohmann::ordered_json j;
  j["format"] = "medforge-ngram";
  j["version"] = 1;
  j["order"] = lm.order();
  j["delta"] = lm.delta();
  j["vocabulary"] = lm.vocabulary();
  auto& counts = j["counts"] = nlohmann::ordered_json::array();
  const auto& toks = lm.vocabulary();
  for (const auto& [ctx, c] : lm.counts()) {
    nlohmann::ordered_json e;
    auto& hist = e["context"] = nlohmann::ordered_json::array();
    for (TokenId t : ctx) hist.push_back(t == kBegin ? std::string(kBeginToken) : toks[static_cast<std::size_t>(t)]);
    auto& next = e["next"] = nlohmann::ordered_json::object();
    for (const auto& [t, n] : c.next) next[toks[static_cast<std::size_t>(t)]] = n;
    counts.push_back(std::move(e));
  }
  return j;
}

inline NgramLM ngram_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "medforge-ngram") throw ValidationError("not an n-gram model file");
    NgramLM lm(CharVocabulary::from_tokens(j.at("vocabulary").get<std::vector<std::string>>()), j.at("order").get<int>(),
               j.at("delta").get<double>());
    std::unordered_map<std::string, TokenId> index;
    for (std::size_t i = 0; i < lm.vocabulary().size(); ++i) index.emplace(lm.vocabulary()[i], static_cast<TokenId>(i));
    auto lookup = [&](const std::string& tok) {
      if (tok == kBeginToken) return kBegin;
      auto it = index.find(tok);
      if (it == index.end()) throw ValidationError("unknown token \"" + tok + "\" in counts");
      return it->second;
    };
    for (const auto& e : j.at("counts")) {
      std::vector<TokenId> ctx;
      for (const auto& t : e.at("context")) ctx.push_back(lookup(t.get<std::string>()));
      if (ctx.size() != static_cast<std::size_t>(lm.order() - 1)) throw ValidationError("context length does not match order");
      for (const auto& [tok, n] : e.at("next").items()) lm.add_count(ctx, lookup(tok), n.get<std::uint64_t>());
    }
    return lm;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed n-gram model: ") + e.what());
  }
}

inline NgramLM load_ngram(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return ngram_from_json(j);
}

inline void save_ngram(const NgramLM& lm, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << to_json(lm).dump() << '\n';
  if (!out) throw IoError("write failure on " + path);
}

}  // namespace medforge::ngram
