#pragma once

// Turns chunks into instruction data through an external chat-completion
// service: renders rewrite prompts, runs jobs with bounded concurrency and
// retries, journals every attempt to an append-only manifest, and assembles
// instruction records from the responses.

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "medforge/chunker.hpp"
#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"

namespace medforge::rewrite {

enum class PromptKind { gen_question, gen_answer, gen_dialogue };

inline std::string_view to_string(PromptKind k) noexcept {
  switch (k) {
    case PromptKind::gen_question: return "gen_question";
    case PromptKind::gen_answer: return "gen_answer";
    case PromptKind::gen_dialogue: return "gen_dialogue";
  }
  return "?";
}

inline std::optional<PromptKind> parse_prompt_kind(std::string_view s) noexcept {
  for (auto k : {PromptKind::gen_question, PromptKind::gen_answer, PromptKind::gen_dialogue}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

struct PromptTemplate {
  PromptKind kind = PromptKind::gen_question;
  Language lang = Language::en;
  std::string body;
};

// English bodies of the question, answer and dialogue rewrite prompts.
inline constexpr std::string_view kQuestionPromptEn =
    "Please create a <question> that closely aligns with the provided <text>. Ensure that the <question> is "
    "formulated in English and does not explicitly reference the text. You may incorporate specific scenarios or "
    "contexts in the <question>, allowing the <text> to serve as a comprehensive and precise answer.\n"
    "<text>: {text}\n"
    "<question>:";

inline constexpr std::string_view kAnswerPromptEn =
    "You are Apollo, equipped with in-depth knowledge in medicine. Your task is to directly answer the user's "
    "<question> in English. In formulating your response, you must thoughtfully reference the <reference text>, "
    "ensuring that your reply does not disclose your reliance on <reference text>. Aim to provide a comprehensive and "
    "informative response, incorporating relevant insights from <reference text> to best assist the user. Please be "
    "cautious to avoid including any content that might raise ethical concerns.\n"
    "<question>: {question}\n"
    "<reference text>: {reference}\n"
    "<reply>:";

inline constexpr std::string_view kDialoguePromptEn =
    "<text> {text}</text>\n"
    "Please create some dialogues between patients and doctors in English based on the above text. The format is:\n"
    "<Patient>Patient’s question</Patient>\n"
    "<Doctor>Doctor’s answer</Doctor>\n"
    "Both patient questions and doctor responses are as complex and detailed as possible.";

/// Placeholders are `{name}` with name in [a-z_]. Substitution is single-pass:
/// bound values are never rescanned. Throws "unbound placeholder: name".
inline std::string render_prompt(const PromptTemplate& tpl, const std::map<std::string, std::string>& bindings) {
  const std::string& b = tpl.body;
  std::string out;
  out.reserve(b.size() + 256);
  std::size_t i = 0;
  while (i < b.size()) {
    if (b[i] == '{') {
      std::size_t j = i + 1;
      while (j < b.size() && ((b[j] >= 'a' && b[j] <= 'z') || b[j] == '_')) ++j;
      if (j < b.size() && b[j] == '}' && j > i + 1) {
        const std::string name = b.substr(i + 1, j - i - 1);
        auto it = bindings.find(name);
        if (it == bindings.end()) throw ValidationError("unbound placeholder: " + name);
        out += it->second;
        i = j + 1;
        continue;
      }
    }
    out.push_back(b[i++]);
  }
  return out;
}

/// Templates per (kind, language). Only English ships built in; other
/// languages come from a template directory. With english_fallback set, a
/// missing translation falls back to the English body.
class TemplateSet {
 public:
  static TemplateSet defaults() {
    TemplateSet t;
    t.put({PromptKind::gen_question, Language::en, std::string(kQuestionPromptEn)});
    t.put({PromptKind::gen_answer, Language::en, std::string(kAnswerPromptEn)});
    t.put({PromptKind::gen_dialogue, Language::en, std::string(kDialoguePromptEn)});
    return t;
  }

  /// Reads every `<kind>.<lang>.txt` in `dir` (e.g. gen_question.zh.txt).
  void load_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) throw IoError("template directory not found: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      const auto dot1 = name.find('.');
      const auto dot2 = name.rfind('.');
      if (dot1 == std::string::npos || dot2 == dot1 || name.substr(dot2) != ".txt") continue;
      auto kind = parse_prompt_kind(name.substr(0, dot1));
      auto lang = parse_language(name.substr(dot1 + 1, dot2 - dot1 - 1));
      if (!kind || !lang) continue;
      std::ifstream in(entry.path(), std::ios::binary);
      if (!in) throw IoError("cannot open " + entry.path().string());
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
      put({*kind, *lang, std::move(body)});
    }
  }

  void put(PromptTemplate t) { templates_[{t.kind, t.lang}] = std::move(t); }
  void set_english_fallback(bool on) noexcept { english_fallback_ = on; }

  const PromptTemplate& get(PromptKind kind, Language lang) const {
    auto it = templates_.find({kind, lang});
    if (it != templates_.end()) return it->second;
    if (english_fallback_) {
      it = templates_.find({kind, Language::en});
      if (it != templates_.end()) return it->second;
    }
    throw ValidationError("no " + std::string(to_string(kind)) + " template for language " + std::string(to_string(lang)));
  }

 private:
  std::map<std::pair<PromptKind, Language>, PromptTemplate> templates_;
  bool english_fallback_ = false;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
};

/// Chat-completion request body: {"model", "messages": [{"role", "content"}]}.
inline nlohmann::ordered_json request_body(const ChatRequest& req) {
  nlohmann::ordered_json j;
  j["model"] = req.model;
  auto& msgs = j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return j;
}

struct ChatResponse {
  enum class Outcome { ok, transport_error, http_error };
  Outcome outcome = Outcome::ok;
  int status = 0;
  std::string content;
  std::string raw_body;
  std::optional<double> retry_after_s;
  std::string error;
};

/// External chat-completion service. send() must be safe to call from
/// several threads at once.
class ChatService {
 public:
  virtual ~ChatService() = default;
  virtual ChatResponse send(const ChatRequest& req) = 0;
};

struct ChatClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-3.5-turbo-16k";
  int max_retries = 3;
  std::chrono::milliseconds backoff_base{500};
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{60000};

  void validate() const {
    if (max_retries < 0) throw ValidationError("max_retries must be >= 0");
    if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");
    if (timeout.count() <= 0) throw ValidationError("timeout must be positive");
    if (backoff_base.count() < 0) throw ValidationError("backoff must be non-negative");
  }
};

enum class JobStatus { pending, done, failed };

inline std::string_view to_string(JobStatus s) noexcept {
  switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "?";
}

struct RewriteJob {
  std::string parent_id;
  std::size_t seq = 0;
  PromptKind kind = PromptKind::gen_question;
  Language lang = Language::en;
  std::string source;
  std::string rendered_prompt;
  JobStatus status = JobStatus::pending;
  std::optional<std::string> response;
  int attempts = 0;
  std::string error;
  std::string raw_response;

  std::string key() const { return parent_id + "#" + std::to_string(seq) + "#" + std::string(to_string(kind)); }
};

inline nlohmann::ordered_json job_to_json(const RewriteJob& job, const std::string& model) {
  nlohmann::ordered_json j;
  j["key"] = job.key();
  j["parent_id"] = job.parent_id;
  j["seq"] = job.seq;
  j["kind"] = to_string(job.kind);
  j["lang"] = to_string(job.lang);
  j["source"] = job.source;
  j["status"] = to_string(job.status);
  j["attempts"] = job.attempts;
  j["request"] = request_body({model, {{"user", job.rendered_prompt}}});
  j["response"] = job.response ? nlohmann::ordered_json(*job.response) : nlohmann::ordered_json(nullptr);
  j["raw_response"] = job.raw_response;
  if (!job.error.empty()) j["error"] = job.error;
  return j;
}

inline RewriteJob job_from_json(const nlohmann::json& j) {
  RewriteJob job;
  job.parent_id = j.at("parent_id").get<std::string>();
  job.seq = j.at("seq").get<std::size_t>();
  auto kind = parse_prompt_kind(j.at("kind").get<std::string>());
  if (!kind) throw ValidationError("unknown job kind");
  job.kind = *kind;
  auto lang = parse_language(j.at("lang").get<std::string>());
  if (!lang) throw ValidationError("unknown language code");
  job.lang = *lang;
  job.source = j.value("source", "");
  const std::string status = j.at("status").get<std::string>();
  job.status = status == "done" ? JobStatus::done : status == "failed" ? JobStatus::failed : JobStatus::pending;
  job.attempts = j.at("attempts").get<int>();
  job.rendered_prompt = j.at("request").at("messages").at(0).at("content").get<std::string>();
  if (j.contains("response") && j["response"].is_string()) job.response = j["response"].get<std::string>();
  job.raw_response = j.value("raw_response", "");
  job.error = j.value("error", "");
  return job;
}

/// Append-only JSONL journal of finished jobs. The latest line per key wins
/// on load. Appends are serialized by a mutex (single writer).
class Manifest {
 public:
  Manifest() = default;

  /// Loads existing entries (if the file exists) and opens it for appending.
  explicit Manifest(std::string path, std::string model = {}) : path_(std::move(path)), model_(std::move(model)) {
    std::ifstream in(path_, std::ios::binary);
    if (in) {
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          RewriteJob job = job_from_json(nlohmann::json::parse(line));
          latest_[job.key()] = std::move(job);
        } catch (const std::exception& e) {
          throw ValidationError(path_ + ": line " + std::to_string(lineno) + ": " + e.what());
        }
      }
    }
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot open manifest " + path_);
  }

  /// A previously completed job with this key and prompt, if any.
  std::optional<RewriteJob> completed(const std::string& key, const std::string& prompt) const {
    std::lock_guard lock(mu_);
    auto it = latest_.find(key);
    if (it == latest_.end() || it->second.status != JobStatus::done || it->second.rendered_prompt != prompt) {
      return std::nullopt;
    }
    return it->second;
  }

  void append(const RewriteJob& job) {
    std::lock_guard lock(mu_);
    latest_[job.key()] = job;
    if (!out_.is_open()) return;
    out_ << job_to_json(job, model_).dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("write failure on manifest " + path_);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return latest_.size();
  }

 private:
  std::string path_;
  std::string model_;
  mutable std::mutex mu_;
  std::map<std::string, RewriteJob> latest_;
  std::ofstream out_;
};

/// Sends one prompt with the retry policy: transport failures are retried
/// with exponential backoff (backoff_base * 2^(attempt-1)); HTTP errors are
/// retried only when the service sent Retry-After; a 2xx with empty content
/// fails immediately. Fills status, response, attempts and error.
inline void execute_job(RewriteJob& job, ChatService& service, const ChatClientConfig& cfg) {
  const ChatRequest req{cfg.model, {{"user", job.rendered_prompt}}};
  for (int attempt = 1; attempt <= cfg.max_retries + 1; ++attempt) {
    job.attempts = attempt;
    ChatResponse r = service.send(req);
    job.raw_response = r.raw_body;
    const bool last = attempt == cfg.max_retries + 1;
    if (r.outcome == ChatResponse::Outcome::ok) {
      if (r.content.empty()) {
        job.status = JobStatus::failed;
        job.error = "empty completion";
        return;
      }
      job.status = JobStatus::done;
      job.response = std::move(r.content);
      job.error.clear();
      return;
    }
    job.error = r.outcome == ChatResponse::Outcome::transport_error ? "transport: " + r.error
                                                                      : "http " + std::to_string(r.status) + ": " + r.error;
    const bool retryable = r.outcome == ChatResponse::Outcome::transport_error || r.retry_after_s.has_value();
    if (!retryable || last) {
      job.status = JobStatus::failed;
      return;
    }
    auto wait = cfg.backoff_base * (1LL << std::min(attempt - 1, 20));
    if (r.retry_after_s) {
      const auto ra = std::chrono::milliseconds(static_cast<long long>(std::ceil(*r.retry_after_s * 1000.0)));
      if (ra > wait) wait = std::chrono::duration_cast<decltype(wait)>(ra);
    }
    std::this_thread::sleep_for(wait);
  }
}

struct RewriteKinds {
  bool qa = true;
  bool dialogue = false;
};

inline RewriteKinds parse_kinds(const std::string& csv) {
  RewriteKinds k{false, false};
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t end = csv.find(',', start);
    if (end == std::string::npos) end = csv.size();
    const std::string tok = csv.substr(start, end - start);
    if (tok == "qa") {
      k.qa = true;
    } else if (tok == "dialogue") {
      k.dialogue = true;
    } else if (!tok.empty()) {
      throw ValidationError("unknown rewrite kind \"" + tok + "\" (expected qa, dialogue)");
    }
    start = end + 1;
  }
  if (!k.qa && !k.dialogue) throw ValidationError("no rewrite kinds selected");
  return k;
}

/// Runs every chunk's pipeline on up to cfg.max_in_flight workers. A qa
/// pipeline asks for a question, then for an answer bound to that question
/// and the chunk text. Jobs already done in the manifest are replayed
/// without a request. Output is in chunk order, then question, answer,
/// dialogue.
inline std::vector<RewriteJob> run_jobs(const std::vector<chunk::Chunk>& chunks, RewriteKinds kinds, ChatService& service,
                                        const ChatClientConfig& cfg, const TemplateSet& templates, Manifest& manifest) {
  cfg.validate();
  std::vector<std::vector<RewriteJob>> per_chunk(chunks.size());

  auto run_one = [&](RewriteJob job) {
    if (auto prev = manifest.completed(job.key(), job.rendered_prompt)) return *prev;
    execute_job(job, service, cfg);
    manifest.append(job);
    return job;
  };
  auto make = [&](const chunk::Chunk& c, PromptKind kind, std::map<std::string, std::string> bindings) {
    RewriteJob job;
    job.parent_id = c.parent_id;
    job.seq = c.seq;
    job.kind = kind;
    job.lang = c.lang;
    job.source = c.source;
    job.rendered_prompt = render_prompt(templates.get(kind, c.lang), bindings);
    return job;
  };

  // Render every first-stage prompt up front so template errors surface before any request.
  for (const auto& c : chunks) {
    if (kinds.qa) (void)templates.get(PromptKind::gen_question, c.lang), (void)templates.get(PromptKind::gen_answer, c.lang);
    if (kinds.dialogue) (void)templates.get(PromptKind::gen_dialogue, c.lang);
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < chunks.size(); i = next.fetch_add(1)) {
      try {
        const auto& c = chunks[i];
        auto& out = per_chunk[i];
        if (kinds.qa) {
          RewriteJob q = run_one(make(c, PromptKind::gen_question, {{"text", c.text}}));
          if (q.status == JobStatus::done) {
            out.push_back(q);
            out.push_back(run_one(make(c, PromptKind::gen_answer, {{"question", *q.response}, {"reference", c.text}})));
          } else {
            out.push_back(q);
            RewriteJob a;
            a.parent_id = c.parent_id;
            a.seq = c.seq;
            a.kind = PromptKind::gen_answer;
            a.lang = c.lang;
            a.source = c.source;
            a.status = JobStatus::failed;
            a.error = "question generation failed";
            out.push_back(std::move(a));
          }
        }
        if (kinds.dialogue) out.push_back(run_one(make(c, PromptKind::gen_dialogue, {{"text", c.text}})));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next.store(chunks.size());
        return;
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.max_in_flight), std::max<std::size_t>(1, chunks.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  std::vector<RewriteJob> jobs;
  for (auto& v : per_chunk) {
    for (auto& j : v) jobs.push_back(std::move(j));
  }
  return jobs;
}

struct DialogueTurn {
  std::string role;  // "Patient" or "Doctor"
  std::string text;
};

/// Extracts <Patient>..</Patient> / <Doctor>..</Doctor> turns in order.
/// Returns an empty vector when no complete tagged turn exists.
inline std::vector<DialogueTurn> parse_dialogue(std::string_view response) {
  std::vector<DialogueTurn> turns;
  std::size_t pos = 0;
  for (;;) {
    const auto p = response.find("<Patient>", pos);
    const auto d = response.find("<Doctor>", pos);
    if (p == std::string_view::npos && d == std::string_view::npos) break;
    const bool patient = d == std::string_view::npos || (p != std::string_view::npos && p < d);
    const std::string role = patient ? "Patient" : "Doctor";
    const std::size_t open = patient ? p : d;
    const std::size_t body = open + role.size() + 2;
    const auto close = response.find("</" + role + ">", body);
    if (close == std::string_view::npos) break;
    std::string t = text::normalize(response.substr(body, close - body));
    if (!t.empty()) turns.push_back({role, std::move(t)});
    pos = close + role.size() + 3;
  }
  return turns;
}

struct SkipReport {
  std::string parent_id;
  std::size_t seq = 0;
  std::string reason;
};

struct AssembleResult {
  std::vector<CorpusRecord> records;
  std::vector<SkipReport> skipped;
};

/// QA pairs become instruction records ("<parent>#<seq>#qa"); dialogues
/// become pretrain records ("<parent>#<seq>#dialogue") with one
/// "Patient: ..." / "Doctor: ..." line per turn, or the raw response when it
/// carries no tagged turns. Chunks with a failed half are skipped.
inline AssembleResult assemble_instruction_records(const std::vector<RewriteJob>& jobs) {
  struct Group {
    const RewriteJob* question = nullptr;
    const RewriteJob* answer = nullptr;
    const RewriteJob* dialogue = nullptr;
  };
  std::vector<std::pair<std::string, std::size_t>> order;
  std::map<std::pair<std::string, std::size_t>, Group> groups;
  for (const auto& j : jobs) {
    auto key = std::make_pair(j.parent_id, j.seq);
    if (!groups.count(key)) order.push_back(key);
    auto& g = groups[key];
    (j.kind == PromptKind::gen_question ? g.question : j.kind == PromptKind::gen_answer ? g.answer : g.dialogue) = &j;
  }

  AssembleResult out;
  for (const auto& key : order) {
    const Group& g = groups[key];
    const std::string base = key.first + "#" + std::to_string(key.second);
    auto skip = [&](std::string reason) { out.skipped.push_back({key.first, key.second, std::move(reason)}); };
    if (g.answer && !g.question) {
      skip("orphan answer without question");
    } else if (g.question) {
      if (g.question->status != JobStatus::done) {
        skip("question failed: " + g.question->error);
      } else if (!g.answer) {
        skip("question without answer");
      } else if (g.answer->status != JobStatus::done) {
        skip("answer failed: " + g.answer->error);
      } else {
        out.records.push_back(make_instruction(base + "#qa", g.question->lang, g.question->source,
                                               text::trim(*g.question->response), text::trim(*g.answer->response)));
        if (detail::blank(out.records.back().question) || detail::blank(out.records.back().answer)) {
          out.records.pop_back();
          skip("blank question or answer");
        }
      }
    }
    if (g.dialogue) {
      if (g.dialogue->status != JobStatus::done) {
        skip("dialogue failed: " + g.dialogue->error);
        continue;
      }
      const auto turns = parse_dialogue(*g.dialogue->response);
      std::string body;
      if (turns.empty()) {
        body = text::trim(*g.dialogue->response);
      } else {
        for (const auto& t : turns) body += (body.empty() ? "" : "\n") + t.role + ": " + t.text;
      }
      if (detail::blank(body)) {
        skip("blank dialogue");
        continue;
      }
      out.records.push_back(make_pretrain(base + "#dialogue", g.dialogue->lang, g.dialogue->source, std::move(body)));
    }
  }
  return out;
}

}  // namespace medforge::rewrite
