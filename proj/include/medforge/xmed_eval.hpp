#pragma once

// Few-shot multiple-choice evaluation: prompt construction, answer-letter
// extraction, per-dataset scoring and per-language / macro aggregation.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"
#include "medforge/hash.hpp"
#include "medforge/ngram.hpp"
#include "medforge/parallel.hpp"
#include "medforge/proxy_decoder.hpp"
#include "medforge/text.hpp"

namespace medforge::eval {

struct EvalItem {
  std::string id;
  std::string question;
  std::vector<std::string> options;
  std::size_t gold = 0;
};

struct EvalTask {
  std::string dataset;
  Language lang = Language::en;
  std::vector<EvalItem> items;
  bool variable_options = false;
};

struct GenerationConfig {
  std::size_t shots = 3;
  std::size_t max_new_tokens = 128;
  std::size_t min_new_tokens = 2;
  bool sampling = false;
  std::string special_token;  // model-specific end-of-turn marker, empty by default

  void validate() const {
    if (min_new_tokens > max_new_tokens) throw ValidationError("min_new_tokens exceeds max_new_tokens");
    if (sampling) throw ValidationError("sampling is not supported; decoding is greedy");
  }
};

inline char option_letter(std::size_t i) { return static_cast<char>('A' + i); }

/// Items without an explicit id get a content id, so the same question in a
/// dev split and an eval split collides.
inline std::string content_id(std::string_view question) { return "q-" + to_hex(fnv1a64(text::normalize(question))); }

inline EvalItem item_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("task line is not a JSON object");
  EvalItem it;
  it.question = medforge::detail::required_string(j, "q");
  if (text::normalize(it.question).empty()) throw ValidationError("empty question");
  auto opts = j.find("options");
  if (opts == j.end() || !opts->is_array()) throw ValidationError("field \"options\" must be an array");
  for (const auto& o : *opts) {
    if (!o.is_string()) throw ValidationError("options must be strings");
    it.options.push_back(o.get<std::string>());
  }
  if (it.options.size() < 2) throw ValidationError("need at least two options");
  if (it.options.size() > 26) throw ValidationError("more than 26 options");
  auto gold = j.find("gold");
  if (gold == j.end() || !gold->is_number_integer()) throw ValidationError("field \"gold\" must be an integer");
  const auto g = gold->get<long long>();
  if (g < 0 || static_cast<std::size_t>(g) >= it.options.size()) throw ValidationError("gold index out of range");
  it.gold = static_cast<std::size_t>(g);
  auto id = j.find("id");
  if (id != j.end() && id->is_string() && !id->get<std::string>().empty()) {
    it.id = id->get<std::string>();
  } else {
    it.id = content_id(it.question);
  }
  return it;
}

inline nlohmann::ordered_json to_json(const EvalItem& it) {
  return {{"id", it.id}, {"q", it.question}, {"options", it.options}, {"gold", it.gold}};
}

/// Task JSONL: {"q": str, "options": [str...], "gold": int, "id"?: str}.
/// Throws unless every item has the same option count or `variable_options`.
inline EvalTask read_task(std::istream& in, std::string dataset, Language lang, bool variable_options = false) {
  EvalTask task{std::move(dataset), lang, {}, variable_options};
  std::vector<std::string> diagnostics;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      if (!text::is_valid_utf8(line)) throw ValidationError("invalid UTF-8");
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON: ") + e.what());
      }
      EvalItem it = item_from_json(j);
      if (!variable_options && !task.items.empty() && it.options.size() != task.items.front().options.size()) {
        throw ValidationError("option count " + std::to_string(it.options.size()) + " differs from " +
                              std::to_string(task.items.front().options.size()));
      }
      task.items.push_back(std::move(it));
    } catch (const ValidationError& e) {
      diagnostics.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!diagnostics.empty()) {
    const std::string first = diagnostics.front();
    throw ValidationError(first, std::move(diagnostics));
  }
  return task;
}

inline EvalTask read_task_file(const std::string& path, std::string dataset, Language lang, bool variable_options = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return read_task(in, std::move(dataset), lang, variable_options);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what(), e.diagnostics());
  }
}

inline constexpr std::string_view kAnswerLead = "The correct answer is";

/// One user/assistant turn. With `answer` the turn is complete; without it the
/// assistant turn stops right after "The correct answer is".
inline std::string render_block(const EvalItem& item, std::optional<std::size_t> answer, const std::string& special_token) {
  std::string s = "User:You are a medical doctor answering real-world medical exam questions. Select one correct answer from A to ";
  s += option_letter(item.options.size() - 1);
  s += ". Question: ";
  s += item.question;
  s += "\nOptions:";
  for (std::size_t i = 0; i < item.options.size(); ++i) {
    s += " (";
    s += option_letter(i);
    s += ") ";
    s += item.options[i];
  }
  s += "\nAssistant:";
  s += kAnswerLead;
  if (answer) {
    s += ' ';
    s += option_letter(*answer);
    s += '.';
    if (!special_token.empty()) s += ' ' + special_token;
  }
  return s;
}

/// Exemplar blocks then the open query block, joined by newlines.
inline std::string build_prompt(const EvalItem& query, const std::vector<EvalItem>& exemplars, const GenerationConfig& cfg) {
  if (exemplars.size() != cfg.shots) {
    throw ValidationError("expected " + std::to_string(cfg.shots) + " exemplars, got " + std::to_string(exemplars.size()));
  }
  std::string out;
  for (const auto& ex : exemplars) {
    if (ex.id == query.id) throw ValidationError("exemplar \"" + ex.id + "\" is also an evaluation item");
    out += render_block(ex, ex.gold, cfg.special_token);
    out += '\n';
  }
  out += render_block(query, std::nullopt, cfg.special_token);
  return out;
}

/// The first `shots` items of the dev split.
inline std::vector<EvalItem> select_exemplars(const EvalTask& dev, std::size_t shots) {
  if (dev.items.size() < shots) {
    throw ValidationError("dev split has " + std::to_string(dev.items.size()) + " items, need " + std::to_string(shots));
  }
  return {dev.items.begin(), dev.items.begin() + static_cast<std::ptrdiff_t>(shots)};
}

namespace detail {

inline bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

inline std::optional<std::size_t> in_range(char letter, std::size_t n_options) {
  const auto idx = static_cast<std::size_t>(letter - 'A');
  if (idx < n_options) return idx;
  return std::nullopt;
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

/// Pattern-based answer extraction. Rules in precedence order, first in-range
/// match wins:
///   1. "correct answer is" (any case), optional "(", then a capital letter
///      not followed by another letter
///   2. a parenthesized capital letter "(X)"
///   3. a leading capital letter followed by one of . ) : , ;
/// Letters past the option count never match.
inline std::optional<std::size_t> extract_choice(std::string_view completion, std::size_t n_options) {
  using namespace detail;
  const std::string lower = ascii_lower(completion);
  static constexpr std::string_view phrase = "correct answer is";
  for (std::size_t at = lower.find(phrase); at != std::string::npos; at = lower.find(phrase, at + 1)) {
    std::size_t i = at + phrase.size();
    while (i < completion.size() && is_blank(completion[i])) ++i;
    if (i < completion.size() && completion[i] == '(') ++i;
    while (i < completion.size() && is_blank(completion[i])) ++i;
    if (i < completion.size() && is_upper(completion[i]) && (i + 1 == completion.size() || !is_alpha(completion[i + 1]))) {
      if (auto idx = in_range(completion[i], n_options)) return idx;
    }
  }
  for (std::size_t i = 0; i + 2 < completion.size(); ++i) {
    if (completion[i] == '(' && is_upper(completion[i + 1]) && completion[i + 2] == ')') {
      if (auto idx = in_range(completion[i + 1], n_options)) return idx;
    }
  }
  std::size_t i = 0;
  while (i < completion.size() && is_blank(completion[i])) ++i;
  if (i + 1 < completion.size() && is_upper(completion[i]) &&
      std::string_view(".):,;").find(completion[i + 1]) != std::string_view::npos) {
    return in_range(completion[i], n_options);
  }
  return std::nullopt;
}

/// Text-completion backend. complete() throws on failure; implementations used
/// with jobs > 1 must be thread-safe.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const std::string& prompt, const GenerationConfig& cfg) = 0;
};

/// Greedy decoding over a character-vocabulary provider or proxy ensemble.
/// Prompt characters outside the vocabulary are dropped; generation stops at
/// the end marker.
class DecoderBackend final : public CompletionBackend {
 public:
  DecoderBackend(const ngram::CharVocabulary& vocab, proxy::StepFn step) : vocab_(vocab), step_(std::move(step)) {}

  std::string complete(const std::string& prompt, const GenerationConfig& cfg) override {
    const auto ids = vocab_.encode(prompt, /*skip_unknown=*/true);
    const auto r = proxy::greedy_decode(step_, vocab_.size(), ids, cfg.max_new_tokens, cfg.min_new_tokens, {ngram::kEnd});
    return vocab_.decode(r.tokens);
  }

 private:
  const ngram::CharVocabulary& vocab_;
  proxy::StepFn step_;
};

struct Transcript {
  std::string item_id;
  std::string prompt;
  std::string completion;
  std::optional<std::size_t> extracted;
  std::size_t gold = 0;
  bool correct = false;
  bool errored = false;
  std::string error;
};

struct DatasetResult {
  std::string dataset;
  Language lang = Language::en;
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;    // includes unparseable
  std::size_t unparseable = 0;
  std::size_t errored = 0;
  bool strict = true;
  double accuracy = 0.0;
  std::vector<Transcript> transcripts;
};

struct ScoreOptions {
  /// Strict: backend errors count as incorrect. Otherwise they leave the
  /// accuracy denominator.
  bool strict = true;
  unsigned jobs = 1;
};

inline DatasetResult score_dataset(CompletionBackend& backend, const EvalTask& task, const std::vector<EvalItem>& exemplars,
                                   const GenerationConfig& cfg, const ScoreOptions& opt = {}) {
  cfg.validate();
  std::unordered_set<std::string> eval_ids;
  for (const auto& it : task.items) eval_ids.insert(it.id);
  for (const auto& ex : exemplars) {
    if (eval_ids.count(ex.id)) throw ValidationError("exemplar \"" + ex.id + "\" is also an evaluation item");
  }

  DatasetResult r;
  r.dataset = task.dataset;
  r.lang = task.lang;
  r.total = task.items.size();
  r.strict = opt.strict;
  r.transcripts.resize(task.items.size());
  parallel_for(task.items.size(), opt.jobs, [&](std::size_t i) {
    const EvalItem& item = task.items[i];
    Transcript& t = r.transcripts[i];
    t.item_id = item.id;
    t.gold = item.gold;
    t.prompt = build_prompt(item, exemplars, cfg);
    try {
      t.completion = backend.complete(t.prompt, cfg);
    } catch (const std::exception& e) {
      t.errored = true;
      t.error = e.what();
      return;
    }
    t.extracted = extract_choice(t.completion, item.options.size());
    t.correct = t.extracted && *t.extracted == item.gold;
  });

  for (const auto& t : r.transcripts) {
    if (t.errored) {
      ++r.errored;
    } else if (t.correct) {
      ++r.correct;
    } else {
      ++r.incorrect;
      if (!t.extracted) ++r.unparseable;
    }
  }
  const std::size_t denom = opt.strict ? r.total : r.total - r.errored;
  r.accuracy = denom == 0 ? 0.0 : static_cast<double>(r.correct) / static_cast<double>(denom);
  return r;
}

struct DatasetScore {
  std::string dataset;
  Language lang = Language::en;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<DatasetScore> datasets;
  std::map<Language, double> per_language;  // unweighted mean of that language's datasets
  double macro_average = 0.0;               // unweighted mean over all datasets
};

inline EvalReport aggregate(const std::vector<DatasetScore>& scores) {
  if (scores.empty()) throw ValidationError("nothing to aggregate");
  EvalReport rep;
  rep.datasets = scores;
  std::map<Language, std::pair<double, std::size_t>> by_lang;
  double sum = 0.0;
  for (const auto& s : scores) {
    sum += s.accuracy;
    auto& [acc, n] = by_lang[s.lang];
    acc += s.accuracy;
    ++n;
  }
  for (const auto& [lang, v] : by_lang) rep.per_language[lang] = v.first / static_cast<double>(v.second);
  rep.macro_average = sum / static_cast<double>(scores.size());
  return rep;
}

inline EvalReport aggregate(const std::vector<DatasetResult>& fragments) {
  std::vector<DatasetScore> scores;
  for (const auto& f : fragments) scores.push_back({f.dataset, f.lang, f.accuracy});
  return aggregate(scores);
}

inline nlohmann::ordered_json to_json(const EvalReport& rep, const std::vector<DatasetResult>& fragments = {}) {
  nlohmann::ordered_json j;
  auto& ds = j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& s : rep.datasets) {
    nlohmann::ordered_json d{{"dataset", s.dataset}, {"lang", to_string(s.lang)}, {"accuracy", s.accuracy}};
    for (const auto& f : fragments) {
      if (f.dataset != s.dataset || f.lang != s.lang) continue;
      d["total"] = f.total;
      d["correct"] = f.correct;
      d["incorrect"] = f.incorrect;
      d["unparseable"] = f.unparseable;
      d["errored"] = f.errored;
      d["strict"] = f.strict;
      auto& tr = d["transcripts"] = nlohmann::ordered_json::array();
      for (const auto& t : f.transcripts) {
        nlohmann::ordered_json e{{"item_id", t.item_id}, {"prompt", t.prompt}, {"completion", t.completion}};
        e["extracted"] = t.extracted ? nlohmann::ordered_json(std::string(1, option_letter(*t.extracted))) : nlohmann::ordered_json(nullptr);
        e["gold"] = std::string(1, option_letter(t.gold));
        e["correct"] = t.correct;
        e["errored"] = t.errored;
        if (t.errored) e["error"] = t.error;
        tr.push_back(std::move(e));
      }
    }
    ds.push_back(std::move(d));
  }
  auto& pl = j["per_language"] = nlohmann::ordered_json::object();
  for (const auto& [lang, v] : rep.per_language) pl[std::string(to_string(lang))] = v;
  j["macro_average"] = rep.macro_average;
  return j;
}

}  // namespace medforge::eval
