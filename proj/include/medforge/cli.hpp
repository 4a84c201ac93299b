#pragma once

// `medforge` command-line front end. dispatch() is the whole program so tests
// can drive it in-process.
//
// Exit codes: 0 success, 1 validation/usage error, 2 I/O error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "medforge/checkpoint_avg.hpp"
#include "medforge/chunker.hpp"
#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"
#include "medforge/hash.hpp"
#include "medforge/http_clients.hpp"
#include "medforge/leakage_guard.hpp"
#include "medforge/med_filter.hpp"
#include "medforge/mix_scheduler.hpp"
#include "medforge/ngram.hpp"
#include "medforge/parallel.hpp"
#include "medforge/proxy_decoder.hpp"
#include "medforge/qa_rewriter.hpp"
#include "medforge/task_import.hpp"
#include "medforge/xmed_eval.hpp"

#ifndef MEDFORGE_VERSION
#define MEDFORGE_VERSION "0.0.0"
#endif

namespace medforge::cli {

inline constexpr std::string_view kVersion = MEDFORGE_VERSION;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"filter", "screen",       "chunk", "rewrite",     "schedule", "avg",
                                                 "proxy-decode", "train-ngram", "eval",  "aggregate", "import-task"};
  return names;
}

enum class LogLevel { debug, info, warn, error };

/// key=value lines on the error stream.
class Logger {
 public:
  Logger(std::ostream& sink, LogLevel level) : sink_(sink), level_(level) {}
  void set_command(std::string cmd) { cmd_ = std::move(cmd); }
  void log(LogLevel lvl, const std::string& msg) {
    static constexpr const char* names[] = {"debug", "info", "warn", "error"};
    if (lvl < level_) return;
    sink_ << "level=" << names[static_cast<int>(lvl)] << " cmd=" << (cmd_.empty() ? "-" : cmd_) << " msg="
          << nlohmann::json(msg).dump() << '\n';
  }
  void info(const std::string& m) { log(LogLevel::info, m); }
  void warn(const std::string& m) { log(LogLevel::warn, m); }
  void set_level(LogLevel l) { level_ = l; }

 private:
  std::ostream& sink_;
  LogLevel level_;
  std::string cmd_;
};

/// Reproducibility header embedded in every report. The hash covers the
/// run's parameters, not its file paths, so reruns into a different
/// directory hash identically.
inline nlohmann::ordered_json run_header(const std::string& cmd, const nlohmann::ordered_json& params,
                                         std::optional<std::uint64_t> seed) {
  nlohmann::ordered_json h;
  h["tool"] = "medforge";
  h["version"] = kVersion;
  h["subcommand"] = cmd;
  h["config_hash"] = to_hex(fnv1a64(cmd + "\n" + params.dump()));
  h["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
  h["params"] = params;
  return h;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << body;
  out.flush();
  if (!out) throw IoError("write failure on " + path);
}

inline void write_report(const std::string& path, const nlohmann::ordered_json& header, nlohmann::ordered_json body) {
  if (path.empty()) return;
  nlohmann::ordered_json j;
  j["run"] = header;
  for (auto& [k, v] : body.items()) j[k] = std::move(v);
  write_text_file(path, j.dump(2) + "\n");
}

/// Benchmark lines may be task items ({"q","options","gold"}) or corpus
/// records (instruction question, or pretrain text).
inline std::vector<leakage::BenchmarkItem> load_benchmark(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<leakage::BenchmarkItem> out;
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
      if (j.is_object() && j.contains("q")) {
        const eval::EvalItem it = eval::item_from_json(j);
        out.push_back({it.id, it.question, it.options});
      } else {
        out.push_back(leakage::benchmark_item(record_from_json(j)));
      }
    } catch (const ValidationError& e) {
      diagnostics.push_back("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!diagnostics.empty()) {
    const std::string first = path + ": " + diagnostics.front();
    throw ValidationError(first, std::move(diagnostics));
  }
  return out;
}

inline std::vector<std::string> load_texts(const std::string& path, const std::string& format) {
  std::vector<std::string> out;
  if (format == "jsonl") {
    for (const auto& r : read_jsonl_file(path)) out.push_back(r.body());
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string closest_subcommand(const std::string& name) {
  std::string best;
  std::size_t best_d = SIZE_MAX;
  for (const auto& s : subcommands()) {
    const auto d = edit_distance(name, s);
    if (d < best_d) best_d = d, best = s;
  }
  return best;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  const std::string prog = argc > 0 ? argv[0] : "medforge";
  CLI::App app{"medforge: medical corpus curation, mix scheduling, proxy decoding and evaluation toolkit", "medforge"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML-style key=value file; explicit flags take precedence");

  std::string log_level = "info";
  unsigned jobs = default_jobs();
  app.add_option("--log-level", log_level, "debug|info|warn|error")->check(CLI::IsMember({"debug", "info", "warn", "error"}));
  app.add_option("--jobs", jobs, "Upper bound on worker threads")->check(CLI::PositiveNumber);

  Logger log(err, LogLevel::info);
  std::function<void()> action;

  // filter
  struct {
    std::string dict, in, out, report, mode = "word";
    double threshold = filter::kDefaultThreshold;
  } fo;
  auto* cmd_filter = app.add_subcommand("filter", "Keep documents whose dictionary-term share exceeds a threshold");
  cmd_filter->add_option("--dict", fo.dict, "Dictionary, one term per line")->required();
  cmd_filter->add_option("--threshold", fo.threshold, "Strict lower bound on the term share")->capture_default_str();
  cmd_filter->add_option("--mode", fo.mode, "word|substring")->check(CLI::IsMember({"word", "substring"}))->capture_default_str();
  cmd_filter->add_option("--in", fo.in)->required();
  cmd_filter->add_option("--out", fo.out)->required();
  cmd_filter->add_option("--report", fo.report);
  cmd_filter->callback([&] {
    action = [&] {
      const auto mode = fo.mode == "word" ? filter::MatchMode::word_boundary : filter::MatchMode::substring;
      const auto terms = filter::load_dictionary(fo.dict, mode);
      const auto docs = read_jsonl_file(fo.in);
      auto res = filter::filter_corpus(docs, terms, fo.threshold, jobs);
      write_jsonl_file(res.kept, fo.out);
      const nlohmann::ordered_json params{{"threshold", fo.threshold}, {"mode", fo.mode}, {"dictionary_terms", terms.size()}};
      write_report(fo.report, run_header("filter", params, std::nullopt), filter::to_json(res.report));
      log.info("kept " + std::to_string(res.report.kept) + " of " + std::to_string(res.report.total));
    };
  });

  // screen
  struct {
    std::string bench, in, out, report;
    std::size_t window = leakage::kDefaultWindow;
  } so;
  auto* cmd_screen = app.add_subcommand("screen", "Remove items overlapping benchmark questions");
  cmd_screen->add_option("--bench", so.bench, "Benchmark JSONL (task items or corpus records)")->required();
  cmd_screen->add_option("--in", so.in)->required();
  cmd_screen->add_option("--out", so.out)->required();
  cmd_screen->add_option("--report", so.report);
  cmd_screen->add_option("--window", so.window, "Shared-run length in characters")->capture_default_str();
  cmd_screen->callback([&] {
    action = [&] {
      const auto index = leakage::OverlapIndex::build(load_benchmark(so.bench), so.window);
      const auto items = read_jsonl_file(so.in);
      auto res = leakage::screen(items, index, jobs);
      write_jsonl_file(res.kept, so.out);
      const nlohmann::ordered_json params{{"window", so.window}};
      write_report(so.report, run_header("screen", params, std::nullopt), leakage::to_json(res.report));
      log.info("removed " + std::to_string(res.report.removed) + " of " + std::to_string(res.report.total));
    };
  });

  // chunk
  chunk::ChunkPolicy policy;
  struct {
    std::string in, out, report;
    std::map<Language, std::size_t> limits;
  } co;
  co.limits = policy.limits;
  auto* cmd_chunk = app.add_subcommand("chunk", "Split pretraining documents into bounded chunks");
  cmd_chunk->add_option("--in", co.in)->required();
  cmd_chunk->add_option("--out", co.out)->required();
  cmd_chunk->add_option("--report", co.report);
  for (Language l : kAllLanguages) {
    cmd_chunk->add_option("--limit-" + std::string(to_string(l)), co.limits[l], "Max characters per chunk")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }
  cmd_chunk->callback([&] {
    action = [&] {
      policy.limits = co.limits;
      const auto docs = read_jsonl_file(co.in);
      std::vector<std::vector<chunk::Chunk>> per_doc(docs.size());
      std::size_t skipped = 0;
      for (const auto& d : docs) skipped += d.stage != Stage::pretrain;
      parallel_for(docs.size(), jobs, [&](std::size_t i) {
        if (docs[i].stage == Stage::pretrain) per_doc[i] = chunk::chunk_document(docs[i], policy);
      });
      std::vector<chunk::Chunk> all;
      for (auto& v : per_doc) all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
      std::ofstream f(co.out, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open " + co.out + " for writing");
      chunk::write_chunks(all, f);
      if (skipped) log.warn("skipped " + std::to_string(skipped) + " non-pretrain records");
      nlohmann::ordered_json limits;
      for (const auto& [l, n] : policy.limits) limits[std::string(to_string(l))] = n;
      write_report(co.report, run_header("chunk", {{"limits", limits}}, std::nullopt),
                   {{"documents", docs.size()}, {"skipped_non_pretrain", skipped}, {"chunks", all.size()}});
      log.info("wrote " + std::to_string(all.size()) + " chunks");
    };
  });

  // rewrite
  struct {
    std::string in, out, manifest, report, kinds = "qa", templates;
    bool english_fallback = false;
    long long backoff_ms = 500, timeout_ms = 60000;
  } ro;
  rewrite::ChatClientConfig chat_cfg;
  auto* cmd_rewrite = app.add_subcommand("rewrite", "Generate QA pairs / dialogues from chunks via a chat-completion service");
  cmd_rewrite->add_option("--in", ro.in, "Chunk JSONL")->required();
  cmd_rewrite->add_option("--out", ro.out, "Corpus JSONL of assembled records")->required();
  cmd_rewrite->add_option("--manifest", ro.manifest, "Append-only job journal (enables resume)")->required();
  cmd_rewrite->add_option("--kinds", ro.kinds, "qa,dialogue")->capture_default_str();
  cmd_rewrite->add_option("--report", ro.report);
  cmd_rewrite->add_option("--endpoint", chat_cfg.endpoint)->capture_default_str();
  cmd_rewrite->add_option("--model", chat_cfg.model)->capture_default_str();
  cmd_rewrite->add_option("--max-retries", chat_cfg.max_retries)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd_rewrite->add_option("--backoff-ms", ro.backoff_ms)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd_rewrite->add_option("--max-in-flight", chat_cfg.max_in_flight)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_rewrite->add_option("--timeout-ms", ro.timeout_ms)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_rewrite->add_option("--templates", ro.templates, "Directory of <kind>.<lang>.txt prompt templates");
  cmd_rewrite->add_flag("--english-fallback", ro.english_fallback, "Use English prompts for languages without templates");
  cmd_rewrite->callback([&] {
    action = [&] {
      chat_cfg.backoff_base = std::chrono::milliseconds(ro.backoff_ms);
      chat_cfg.timeout = std::chrono::milliseconds(ro.timeout_ms);
      chat_cfg.max_in_flight = static_cast<int>(std::min<unsigned>(static_cast<unsigned>(chat_cfg.max_in_flight), jobs));
      const auto kinds = rewrite::parse_kinds(ro.kinds);
      auto templates = rewrite::TemplateSet::defaults();
      if (!ro.templates.empty()) templates.load_dir(ro.templates);
      templates.set_english_fallback(ro.english_fallback);
      const auto chunks = chunk::read_chunks_file(ro.in);
      net::HttpChatService service(chat_cfg.endpoint, chat_cfg.timeout);
      rewrite::Manifest manifest(ro.manifest, chat_cfg.model);
      const auto job_list = rewrite::run_jobs(chunks, kinds, service, chat_cfg, templates, manifest);
      auto assembled = rewrite::assemble_instruction_records(job_list);
      write_jsonl_file(assembled.records, ro.out);
      std::size_t done = 0, failed = 0;
      for (const auto& j : job_list) (j.status == rewrite::JobStatus::done ? done : failed)++;
      nlohmann::ordered_json skips = nlohmann::ordered_json::array();
      for (const auto& s : assembled.skipped) skips.push_back({{"parent_id", s.parent_id}, {"seq", s.seq}, {"reason", s.reason}});
      const nlohmann::ordered_json params{{"kinds", ro.kinds}, {"model", chat_cfg.model}, {"max_retries", chat_cfg.max_retries}};
      write_report(ro.report, run_header("rewrite", params, std::nullopt),
                   {{"chunks", chunks.size()}, {"jobs_done", done}, {"jobs_failed", failed},
                    {"records", assembled.records.size()}, {"skipped", skips}});
      log.info("jobs done=" + std::to_string(done) + " failed=" + std::to_string(failed));
    };
  });

  // schedule
  struct {
    std::string pt, sft, out, report;
    std::vector<std::string> corpora;
  } sco;
  schedule::ScheduleConfig sched_cfg;
  auto* cmd_schedule = app.add_subcommand("schedule", "Emit a priority-sampled mix-training order");
  cmd_schedule->add_option("--pt", sco.pt, "Pretraining corpus JSONL");
  cmd_schedule->add_option("--sft", sco.sft, "Instruction corpus JSONL");
  cmd_schedule->add_option("--corpus", sco.corpora, "Mixed corpus JSONL, split by each record's stage");
  cmd_schedule->add_option("--seed", sched_cfg.seed)->capture_default_str();
  cmd_schedule->add_option("--batch", sched_cfg.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_schedule->add_option("--pt-priority", sched_cfg.pt_priority)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_schedule->add_option("--sft-priority", sched_cfg.sft_priority)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_schedule->add_option("--pt-epochs", sched_cfg.pt_epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_schedule->add_option("--sft-epochs", sched_cfg.sft_epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_schedule->add_option("--out", sco.out)->required();
  cmd_schedule->add_option("--report", sco.report);
  cmd_schedule->callback([&] {
    action = [&] {
      if (sco.pt.empty() && sco.sft.empty() && sco.corpora.empty()) {
        throw ValidationError("at least one of --pt, --sft or --corpus is required");
      }
      std::vector<CorpusRecord> pt, sft;
      if (!sco.pt.empty()) pt = read_jsonl_file(sco.pt);
      if (!sco.sft.empty()) sft = read_jsonl_file(sco.sft);
      for (const auto& path : sco.corpora) {
        for (auto& r : read_jsonl_file(path)) (r.stage == Stage::pretrain ? pt : sft).push_back(std::move(r));
      }
      auto pool = schedule::SamplingPool::build(pt, sft, sched_cfg);
      const auto sched = schedule::emit_schedule(pool, sched_cfg);
      const auto params = schedule::config_to_json(sched_cfg);
      const auto header = run_header("schedule", params, sched_cfg.seed);
      std::ofstream f(sco.out, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open " + sco.out + " for writing");
      schedule::write_schedule(sched, sched_cfg, f, header);
      const auto dens = schedule::decile_pt_density(sched.stages);
      write_report(sco.report, header,
                   {{"instances", sched.instances}, {"batches", sched.batches.size()},
                    {"pt_items", sched.pt_items}, {"sft_items", sched.sft_items},
                    {"decile_pt_density", std::vector<double>(dens.begin(), dens.end())}});
      log.info("scheduled " + std::to_string(sched.instances) + " instances in " + std::to_string(sched.batches.size()) + " batches");
    };
  });

  // avg
  struct {
    std::vector<std::string> in;
    std::string out, report;
  } ao;
  auto* cmd_avg = app.add_subcommand("avg", "Element-wise mean of MFTA checkpoints");
  cmd_avg->add_option("--in", ao.in, "Two or more .mfta archives")->required()->expected(2, -1);
  cmd_avg->add_option("--out", ao.out)->required();
  cmd_avg->add_option("--report", ao.report);
  cmd_avg->callback([&] {
    action = [&] {
      std::vector<ckpt::TensorArchive> archives;
      for (const auto& p : ao.in) archives.push_back(ckpt::read_archive(p));
      const auto mean = ckpt::average(archives);
      const auto bytes = ckpt::write_archive(mean, ao.out);
      write_report(ao.report, run_header("avg", {{"inputs", ao.in.size()}}, std::nullopt),
                   {{"tensors", mean.size()}, {"bytes", bytes}});
      log.info("averaged " + std::to_string(archives.size()) + " archives, " + std::to_string(mean.size()) + " tensors");
    };
  });

  // proxy-decode
  struct {
    std::string base, tuned, raw, prompt, report;
    std::size_t max_tokens = 128, min_tokens = 2;
    double alpha = 1.0;
  } po;
  auto* cmd_proxy = app.add_subcommand("proxy-decode", "Greedy decoding with a proxy-tuned logit offset");
  cmd_proxy->add_option("--base", po.base, "n-gram model JSON")->required();
  cmd_proxy->add_option("--tuned", po.tuned)->required();
  cmd_proxy->add_option("--raw", po.raw)->required();
  cmd_proxy->add_option("--prompt", po.prompt)->required();
  cmd_proxy->add_option("--max-tokens", po.max_tokens)->capture_default_str();
  cmd_proxy->add_option("--min-tokens", po.min_tokens)->capture_default_str();
  cmd_proxy->add_option("--alpha", po.alpha, "Offset scale")->capture_default_str();
  cmd_proxy->add_option("--report", po.report);
  cmd_proxy->callback([&] {
    action = [&] {
      const auto base = ngram::load_ngram(po.base);
      const auto tuned = ngram::load_ngram(po.tuned);
      const auto raw = ngram::load_ngram(po.raw);
      const proxy::ProxyEnsemble ens(base, tuned, raw, po.alpha);
      const auto ids = base.vocab().encode(po.prompt, /*skip_unknown=*/true);
      const auto r = proxy::greedy_decode(ens, ids, po.max_tokens, po.min_tokens, {ngram::kEnd});
      const std::string text_out = base.vocab().decode(r.tokens);
      out << text_out << '\n';
      const nlohmann::ordered_json params{{"max_tokens", po.max_tokens}, {"min_tokens", po.min_tokens}, {"alpha", po.alpha}};
      write_report(po.report, run_header("proxy-decode", params, std::nullopt),
                   {{"prompt", po.prompt}, {"completion", text_out}, {"tokens", r.tokens.size()}, {"stopped", r.stopped}});
    };
  });

  // train-ngram
  struct {
    std::string in, out, format = "jsonl";
    std::vector<std::string> vocab_from;
    int order = 3;
    double delta = 1.0;
  } to;
  auto* cmd_train = app.add_subcommand("train-ngram", "Train a character n-gram model");
  cmd_train->add_option("--in", to.in)->required();
  cmd_train->add_option("--out", to.out)->required();
  cmd_train->add_option("--format", to.format, "jsonl|text")->check(CLI::IsMember({"jsonl", "text"}))->capture_default_str();
  cmd_train->add_option("--order", to.order)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_train->add_option("--delta", to.delta, "Additive smoothing constant")->capture_default_str();
  cmd_train->add_option("--vocab-from", to.vocab_from, "Extra corpora (same --format) whose characters join the vocabulary");
  cmd_train->callback([&] {
    action = [&] {
      const auto corpus = load_texts(to.in, to.format);
      std::vector<std::vector<std::string>> extra;
      for (const auto& p : to.vocab_from) extra.push_back(load_texts(p, to.format));
      std::vector<std::string> all = corpus;
      for (const auto& e : extra) all.insert(all.end(), e.begin(), e.end());
      const auto vocab = ngram::CharVocabulary::from_corpora({&all});
      const auto lm = ngram::train_ngram(corpus, to.order, to.delta, &vocab);
      ngram::save_ngram(lm, to.out);
      log.info("vocabulary " + std::to_string(vocab.size()) + ", contexts " + std::to_string(lm.counts().size()));
    };
  });

  // eval
  struct {
    std::string task, dev, name, lang = "en", backend = "ngram", model, base, tuned, raw, url, report;
    double alpha = 1.0;
    bool strict = true, variable = false;
    long long timeout_ms = 120000;
  } eo;
  eval::GenerationConfig gen;
  auto* cmd_eval = app.add_subcommand("eval", "Few-shot multiple-choice evaluation of one task");
  cmd_eval->add_option("--task", eo.task, "Task JSONL {q, options, gold}")->required();
  cmd_eval->add_option("--dev", eo.dev, "Dev split supplying the exemplars (first --shots items)");
  cmd_eval->add_option("--name", eo.name, "Dataset name (default: task file stem)");
  cmd_eval->add_option("--lang", eo.lang)->check(CLI::IsMember({"en", "zh", "hi", "es", "fr", "ar"}))->capture_default_str();
  cmd_eval->add_option("--backend", eo.backend)->check(CLI::IsMember({"ngram", "proxy", "http"}))->capture_default_str();
  cmd_eval->add_option("--model", eo.model, "n-gram model (ngram backend)");
  cmd_eval->add_option("--base", eo.base, "proxy backend");
  cmd_eval->add_option("--tuned", eo.tuned, "proxy backend");
  cmd_eval->add_option("--raw", eo.raw, "proxy backend");
  cmd_eval->add_option("--alpha", eo.alpha)->capture_default_str();
  cmd_eval->add_option("--url", eo.url, "http backend completion endpoint");
  cmd_eval->add_option("--timeout-ms", eo.timeout_ms)->check(CLI::PositiveNumber)->capture_default_str();
  cmd_eval->add_option("--shots", gen.shots)->capture_default_str();
  cmd_eval->add_option("--max-new-tokens", gen.max_new_tokens)->capture_default_str();
  cmd_eval->add_option("--min-new-tokens", gen.min_new_tokens)->capture_default_str();
  cmd_eval->add_option("--special-token", gen.special_token);
  cmd_eval->add_flag("--strict,!--no-strict", eo.strict, "Backend errors count as incorrect (default on)");
  cmd_eval->add_flag("--variable-options", eo.variable, "Allow items with differing option counts");
  cmd_eval->add_option("--report", eo.report)->required();
  cmd_eval->callback([&] {
    action = [&] {
      const Language lang = *parse_language(eo.lang);
      std::string name = eo.name;
      if (name.empty()) name = std::filesystem::path(eo.task).stem().string();
      const auto task = eval::read_task_file(eo.task, name, lang, eo.variable);
      std::vector<eval::EvalItem> exemplars;
      if (gen.shots > 0) {
        if (eo.dev.empty()) throw ValidationError("--dev is required when --shots > 0");
        exemplars = eval::select_exemplars(eval::read_task_file(eo.dev, name + "-dev", lang, true), gen.shots);
      }

      std::vector<ngram::NgramLM> models;
      std::unique_ptr<proxy::ProxyEnsemble> ensemble;
      std::unique_ptr<eval::CompletionBackend> backend;
      if (eo.backend == "ngram") {
        if (eo.model.empty()) throw ValidationError("--model is required for the ngram backend");
        models.push_back(ngram::load_ngram(eo.model));
        const auto& lm = models.front();
        backend = std::make_unique<eval::DecoderBackend>(lm.vocab(), [&lm](std::span<const proxy::TokenId> c) {
          return proxy::provider_step(lm, c);
        });
      } else if (eo.backend == "proxy") {
        if (eo.base.empty() || eo.tuned.empty() || eo.raw.empty()) {
          throw ValidationError("--base, --tuned and --raw are required for the proxy backend");
        }
        models.push_back(ngram::load_ngram(eo.base));
        models.push_back(ngram::load_ngram(eo.tuned));
        models.push_back(ngram::load_ngram(eo.raw));
        ensemble = std::make_unique<proxy::ProxyEnsemble>(models[0], models[1], models[2], eo.alpha);
        const auto* ens = ensemble.get();
        backend = std::make_unique<eval::DecoderBackend>(models[0].vocab(), [ens](std::span<const proxy::TokenId> c) {
          return proxy::combine_step(*ens, c);
        });
      } else {
        if (eo.url.empty()) throw ValidationError("--url is required for the http backend");
        backend = std::make_unique<net::HttpCompletionBackend>(eo.url, std::chrono::milliseconds(eo.timeout_ms));
      }

      const auto frag = eval::score_dataset(*backend, task, exemplars, gen, {eo.strict, jobs});
      const auto rep = eval::aggregate(std::vector<eval::DatasetResult>{frag});
      const nlohmann::ordered_json params{{"dataset", name},          {"lang", eo.lang},
                                          {"backend", eo.backend},    {"shots", gen.shots},
                                          {"max_new_tokens", gen.max_new_tokens}, {"min_new_tokens", gen.min_new_tokens},
                                          {"special_token", gen.special_token},   {"strict", eo.strict},
                                          {"alpha", eo.alpha}};
      write_report(eo.report, run_header("eval", params, std::nullopt), eval::to_json(rep, {frag}));
      log.info(name + " accuracy " + std::to_string(frag.accuracy) + " (" + std::to_string(frag.correct) + "/" +
               std::to_string(frag.total) + ")");
    };
  });

  // aggregate
  struct {
    std::vector<std::string> reports;
    std::string out;
  } gro;
  auto* cmd_agg = app.add_subcommand("aggregate", "Per-language and macro averages over eval reports");
  cmd_agg->add_option("--reports", gro.reports, "Eval report JSON files")->required()->expected(1, -1);
  cmd_agg->add_option("--out", gro.out)->required();
  cmd_agg->callback([&] {
    action = [&] {
      std::vector<eval::DatasetScore> scores;
      for (const auto& p : gro.reports) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot open " + p);
        try {
          const auto j = nlohmann::json::parse(in);
          for (const auto& d : j.at("datasets")) {
            auto l = parse_language(d.at("lang").get<std::string>());
            if (!l) throw ValidationError(p + ": unknown language");
            scores.push_back({d.at("dataset").get<std::string>(), *l, d.at("accuracy").get<double>()});
          }
        } catch (const nlohmann::json::exception& e) {
          throw ValidationError(p + ": " + e.what());
        }
      }
      const auto rep = eval::aggregate(scores);
      write_report(gro.out, run_header("aggregate", {{"reports", gro.reports.size()}}, std::nullopt), eval::to_json(rep));
      log.info("macro average " + std::to_string(rep.macro_average));
    };
  });

  // import-task
  struct {
    std::string in, out, format;
  } io;
  auto* cmd_import = app.add_subcommand("import-task", "Convert a public benchmark layout into task JSONL");
  cmd_import->add_option("--format", io.format, "medqa|frenchmedmcqa|mmlu-csv")->required();
  cmd_import->add_option("--in", io.in)->required();
  cmd_import->add_option("--out", io.out)->required();
  cmd_import->callback([&] {
    action = [&] {
      const auto fmt = eval::parse_import_format(io.format);
      std::ifstream in(io.in, std::ios::binary);
      if (!in) throw IoError("cannot open " + io.in);
      const auto res = eval::import_task(in, fmt);
      std::string body;
      for (const auto& it : res.items) body += eval::to_json(it).dump() + "\n";
      write_text_file(io.out, body);
      log.info("imported " + std::to_string(res.items.size()) + " items, skipped " + std::to_string(res.skipped));
    };
  });

  if (argc <= 1) {
    err << app.help();
    return 1;
  }
  const std::string first = argv[1];
  if (!first.empty() && first[0] != '-' && std::find(subcommands().begin(), subcommands().end(), first) == subcommands().end()) {
    err << "error: unknown subcommand '" << first << "'; did you mean '" << closest_subcommand(first) << "'?\n";
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  const std::map<std::string, LogLevel> levels = {
      {"debug", LogLevel::debug}, {"info", LogLevel::info}, {"warn", LogLevel::warn}, {"error", LogLevel::error}};
  log.set_level(levels.at(log_level));
  for (const auto* sub : app.get_subcommands()) log.set_command(sub->get_name());

  try {
    if (action) action();
    return 0;
  } catch (const IoError& e) {
    log.log(LogLevel::error, e.what());
    return 2;
  } catch (const ValidationError& e) {
    log.log(LogLevel::error, e.what());
    for (std::size_t i = 1; i < e.diagnostics().size() && i < 20; ++i) log.log(LogLevel::error, e.diagnostics()[i]);
    return 1;
  } catch (const std::exception& e) {
    log.log(LogLevel::error, e.what());
    return 1;
  }
  (void)prog;
}

}  // namespace medforge::cli
