#pragma once

// cpp-httplib implementations of the two network surfaces:
//   - HttpChatService: chat-completion endpoint used by the rewriter
//   - HttpCompletionBackend: text-completion endpoint used by the evaluator
//
// Completion wire shape (POST, JSON):
//   request  {"prompt": str, "max_new_tokens": int, "min_new_tokens": int, "do_sample": false}
//   response {"completion": str}

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>

#include "medforge/errors.hpp"
#include "medforge/qa_rewriter.hpp"
#include "medforge/xmed_eval.hpp"

namespace medforge::net {

inline constexpr const char* kApiKeyEnv = "MEDFORGE_API_KEY";

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Url parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("URL needs a scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ValidationError("unsupported URL scheme: " + scheme);
  const auto path_start = url.find('/', scheme_end + 3);
  Url u;
  u.origin = url.substr(0, path_start);
  u.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (u.origin.size() <= scheme_end + 3) throw ValidationError("URL has no host: " + url);
  return u;
}

inline void apply_timeout(httplib::Client& cli, std::chrono::milliseconds timeout) {
  const auto s = static_cast<time_t>(timeout.count() / 1000);
  const auto us = static_cast<time_t>((timeout.count() % 1000) * 1000);
  cli.set_connection_timeout(s, us);
  cli.set_read_timeout(s, us);
  cli.set_write_timeout(s, us);
}

inline std::optional<double> retry_after(const httplib::Response& res) {
  if (!res.has_header("Retry-After")) return std::nullopt;
  const std::string v = res.get_header_value("Retry-After");
  char* end = nullptr;
  const double secs = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || secs < 0) return std::nullopt;
  return secs;
}

/// One client per request, so concurrent send() calls share no state.
class HttpChatService final : public rewrite::ChatService {
 public:
  HttpChatService(const std::string& endpoint, std::chrono::milliseconds timeout, std::string api_key = {})
      : url_(parse_url(endpoint)), timeout_(timeout), api_key_(std::move(api_key)) {
    if (api_key_.empty()) {
      if (const char* k = std::getenv(kApiKeyEnv)) api_key_ = k;
    }
  }

  rewrite::ChatResponse send(const rewrite::ChatRequest& req) override {
    using Outcome = rewrite::ChatResponse::Outcome;
    httplib::Client cli(url_.origin);
    apply_timeout(cli, timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(url_.path, headers, rewrite::request_body(req).dump(), "application/json");
    rewrite::ChatResponse out;
    if (!res) {
      out.outcome = Outcome::transport_error;
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.raw_body = res->body;
    if (res->status < 200 || res->status >= 300) {
      out.outcome = Outcome::http_error;
      out.retry_after_s = retry_after(*res);
      out.error = res->body.substr(0, 200);
      return out;
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      out.content = j.at("choices").at(0).at("message").at("content").get<std::string>();
      out.outcome = Outcome::ok;
    } catch (const nlohmann::json::exception& e) {
      out.outcome = Outcome::http_error;
      out.error = std::string("unparseable response: ") + e.what();
    }
    return out;
  }

 private:
  Url url_;
  std::chrono::milliseconds timeout_;
  std::string api_key_;
};

inline nlohmann::ordered_json completion_request(const std::string& prompt, const eval::GenerationConfig& cfg) {
  return {{"prompt", prompt},
          {"max_new_tokens", cfg.max_new_tokens},
          {"min_new_tokens", cfg.min_new_tokens},
          {"do_sample", false}};
}

class HttpCompletionBackend final : public eval::CompletionBackend {
 public:
  HttpCompletionBackend(const std::string& url, std::chrono::milliseconds timeout)
      : url_(parse_url(url)), timeout_(timeout) {}

  std::string complete(const std::string& prompt, const eval::GenerationConfig& cfg) override {
    httplib::Client cli(url_.origin);
    apply_timeout(cli, timeout_);
    auto res = cli.Post(url_.path, completion_request(prompt, cfg).dump(), "application/json");
    if (!res) throw IoError("completion request failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) {
      throw IoError("completion endpoint returned HTTP " + std::to_string(res->status));
    }
    try {
      return nlohmann::json::parse(res->body).at("completion").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("malformed completion response: ") + e.what());
    }
  }

 private:
  Url url_;
  std::chrono::milliseconds timeout_;
};

}  // namespace medforge::net
