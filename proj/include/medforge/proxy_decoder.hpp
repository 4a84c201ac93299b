#pragma once

// Proxy-tuning: steer a base model at decode time with the logit offset
// between a small tuned model and its untuned counterpart,
//
//   p'(x_t | x_<t) = softmax(l_base + alpha * (l_tuned - l_raw))
//
// which for alpha = 1 is proportional to p_base * p_tuned / p_raw.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "medforge/errors.hpp"

namespace medforge::proxy {

using TokenId = std::int32_t;

/// Next-token logit source over a fixed, ordered vocabulary. Implementations
/// must tolerate concurrent const calls.
class TokenDistributionProvider {
 public:
  virtual ~TokenDistributionProvider() = default;
  virtual const std::vector<std::string>& vocabulary() const = 0;
  /// One finite logit per vocabulary entry.
  virtual std::vector<double> logits(std::span<const TokenId> context) const = 0;
};

/// Max-shifted softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) z += (v = std::exp(v - m));
  for (auto& v : p) v /= z;
  return p;
}

namespace detail {

inline std::vector<double> checked_logits(const TokenDistributionProvider& m, std::span<const TokenId> ctx,
                                          const char* role) {
  auto l = m.logits(ctx);
  if (l.size() != m.vocabulary().size()) {
    throw ValidationError(std::string(role) + " provider returned " + std::to_string(l.size()) +
                          " logits for a vocabulary of " + std::to_string(m.vocabulary().size()));
  }
  for (double v : l) {
    if (!std::isfinite(v)) throw ValidationError(std::string("non-finite logit from ") + role + " provider");
  }
  return l;
}

}  // namespace detail

class ProxyEnsemble {
 public:
  /// Throws ValidationError unless all three vocabularies are identical
  /// (same tokens, same order). Providers must outlive the ensemble.
  ProxyEnsemble(const TokenDistributionProvider& base, const TokenDistributionProvider& tuned,
                const TokenDistributionProvider& raw, double alpha = 1.0)
      : base_(&base), tuned_(&tuned), raw_(&raw), alpha_(alpha) {
    if (!std::isfinite(alpha)) throw ValidationError("offset scale must be finite");
    if (tuned.vocabulary() != base.vocabulary()) throw ValidationError("vocabulary mismatch: tuned vs base");
    if (raw.vocabulary() != base.vocabulary()) throw ValidationError("vocabulary mismatch: raw vs base");
  }

  const std::vector<std::string>& vocabulary() const { return base_->vocabulary(); }
  double alpha() const noexcept { return alpha_; }

  /// l_base + alpha * (l_tuned - l_raw).
  std::vector<double> combined_logits(std::span<const TokenId> context) const {
    auto lb = detail::checked_logits(*base_, context, "base");
    const auto lt = detail::checked_logits(*tuned_, context, "tuned");
    const auto lr = detail::checked_logits(*raw_, context, "raw");
    for (std::size_t i = 0; i < lb.size(); ++i) lb[i] += alpha_ * (lt[i] - lr[i]);
    return lb;
  }

 private:
  const TokenDistributionProvider* base_;
  const TokenDistributionProvider* tuned_;
  const TokenDistributionProvider* raw_;
  double alpha_;
};

inline std::vector<double> combine_step(const ProxyEnsemble& ensemble, std::span<const TokenId> context) {
  return softmax(ensemble.combined_logits(context));
}

/// softmax(l) for a single provider; the "base alone" reference.
inline std::vector<double> provider_step(const TokenDistributionProvider& m, std::span<const TokenId> context) {
  return softmax(detail::checked_logits(m, context, "base"));
}

using StepFn = std::function<std::vector<double>(std::span<const TokenId>)>;

struct DecodeResult {
  std::vector<TokenId> tokens;  // generated tokens, stop token excluded
  bool stopped = false;         // true when a stop token ended generation
};

/// Greedy decoding. Ties go to the lowest vocabulary index. Until
/// `min_tokens` tokens have been generated, stop tokens are masked out of the
/// argmax; afterwards the first stop token ends generation.
inline DecodeResult greedy_decode(const StepFn& step, std::size_t vocab_size, std::span<const TokenId> prompt,
                                  std::size_t max_tokens, std::size_t min_tokens, const std::set<TokenId>& stop) {
  if (vocab_size == 0) throw ValidationError("empty vocabulary");
  if (min_tokens > max_tokens) throw ValidationError("min_tokens exceeds max_tokens");
  std::vector<TokenId> ctx(prompt.begin(), prompt.end());
  DecodeResult out;
  while (out.tokens.size() < max_tokens) {
    const auto p = step(ctx);
    const bool allow_stop = out.tokens.size() >= min_tokens;
    TokenId best = -1;
    double best_p = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      if (!allow_stop && stop.count(id)) continue;
      if (p[i] > best_p) best_p = p[i], best = id;
    }
    if (best < 0) break;  // every token is a stop token and stopping is not yet allowed
    if (stop.count(best)) {
      out.stopped = true;
      break;
    }
    out.tokens.push_back(best);
    ctx.push_back(best);
  }
  return out;
}

inline DecodeResult greedy_decode(const ProxyEnsemble& ensemble, std::span<const TokenId> prompt,
                                  std::size_t max_tokens, std::size_t min_tokens, const std::set<TokenId>& stop) {
  return greedy_decode([&](std::span<const TokenId> c) { return combine_step(ensemble, c); },
                       ensemble.vocabulary().size(), prompt, max_tokens, min_tokens, stop);
}

inline DecodeResult greedy_decode(const TokenDistributionProvider& model, std::span<const TokenId> prompt,
                                  std::size_t max_tokens, std::size_t min_tokens, const std::set<TokenId>& stop) {
  return greedy_decode([&](std::span<const TokenId> c) { return provider_step(model, c); },
                       model.vocabulary().size(), prompt, max_tokens, min_tokens, stop);
}

/// Teacher-forced sum of natural-log probabilities of `tokens` (each
/// conditioned on `prefix` plus the tokens before it).
inline double sequence_log_prob(const StepFn& step, std::span<const TokenId> prefix, std::span<const TokenId> tokens) {
  std::vector<TokenId> ctx(prefix.begin(), prefix.end());
  double total = 0.0;
  for (TokenId t : tokens) {
    const auto p = step(ctx);
    total += std::log(p.at(static_cast<std::size_t>(t)));
    ctx.push_back(t);
  }
  return total;
}

}  // namespace medforge::proxy
