#pragma once

// Benchmark-contamination screening. A training item is leaked when its
// normalized text contains a whole benchmark question, or shares at least
// `window` consecutive scalars with benchmark text (question plus options).
//
// Windows are found with a polynomial rolling hash mod 2^61-1 and every hash
// hit is confirmed by exact comparison, so hash collisions never flag.

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"
#include "medforge/parallel.hpp"
#include "medforge/text.hpp"

namespace medforge::leakage {

inline constexpr std::size_t kDefaultWindow = 64;
inline constexpr std::size_t kMinWindow = 8;

using text::normalize;

/// A protected benchmark question. The index text is the question followed
/// by its options; the whole-question rule uses the question alone.
struct BenchmarkItem {
  std::string id;
  std::string question;
  std::vector<std::string> options;
};

inline BenchmarkItem benchmark_item(const CorpusRecord& r) {
  return {r.id, r.stage == Stage::instruction ? r.question : r.text, {}};
}

namespace detail {

inline constexpr std::uint64_t kMod = (1ULL << 61) - 1;
inline constexpr std::uint64_t kBase = 0x1ae9f3c5d7b2e61ULL % kMod;

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b) noexcept {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  std::uint64_t r = static_cast<std::uint64_t>(p & kMod) + static_cast<std::uint64_t>(p >> 61);
  if (r >= kMod) r -= kMod;
  return r;
}

/// Prefix hashes: hash(s[i, i+len)) in O(1).
class RollingHash {
 public:
  explicit RollingHash(const std::u32string& s) : prefix_(s.size() + 1, 0), pow_(s.size() + 1, 1) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      prefix_[i + 1] = (mulmod(prefix_[i], kBase) + static_cast<std::uint64_t>(s[i]) + 1) % kMod;
      pow_[i + 1] = mulmod(pow_[i], kBase);
    }
  }
  std::uint64_t operator()(std::size_t pos, std::size_t len) const noexcept {
    const std::uint64_t sub = mulmod(prefix_[pos], pow_[len]);
    return (prefix_[pos + len] + kMod - sub) % kMod;
  }

 private:
  std::vector<std::uint64_t> prefix_;
  std::vector<std::uint64_t> pow_;
};

}  // namespace detail

enum class Rule { full_question, window };

inline std::string_view to_string(Rule r) noexcept { return r == Rule::full_question ? "full_question" : "window"; }

struct Evidence {
  Rule rule = Rule::window;
  std::string bench_id;
  std::string field;          // "text", "question" or "answer"
  std::string matched;        // exact shared substring, maximally extended
  std::size_t item_offset = 0;   // scalars into the normalized field
  std::size_t bench_offset = 0;  // scalars into the normalized benchmark text
  std::size_t length = 0;        // scalars
};

class OverlapIndex {
 public:
  /// Throws ValidationError on an empty benchmark or window below 8.
  static OverlapIndex build(const std::vector<BenchmarkItem>& bench, std::size_t window = kDefaultWindow) {
    if (window < kMinWindow) throw ValidationError("window length must be >= " + std::to_string(kMinWindow));
    if (bench.empty()) throw ValidationError("empty benchmark");
    OverlapIndex idx;
    idx.window_ = window;
    idx.entries_.reserve(bench.size());
    for (const auto& b : bench) {
      Entry e;
      e.id = b.id;
      e.question = text::decode(normalize(b.question));
      std::string joined = b.question;
      for (const auto& o : b.options) joined.append(" ").append(o);
      e.text = text::decode(normalize(joined));
      idx.entries_.push_back(std::move(e));
    }
    for (std::size_t k = 0; k < idx.entries_.size(); ++k) {
      const Entry& e = idx.entries_[k];
      if (!e.question.empty()) {
        idx.question_count_++;
        // Questions of at least `window` scalars are already covered by the window rule.
        if (e.question.size() < window) {
          detail::RollingHash qh(e.question);
          idx.short_questions_[e.question.size()][qh(0, e.question.size())].push_back(k);
        }
      }
      if (e.text.size() < window) continue;
      detail::RollingHash h(e.text);
      for (std::size_t off = 0; off + window <= e.text.size(); ++off) {
        idx.windows_[h(off, window)].push_back({k, off});
        idx.window_count_++;
      }
    }
    return idx;
  }

  static OverlapIndex build(const std::vector<CorpusRecord>& bench, std::size_t window = kDefaultWindow) {
    std::vector<BenchmarkItem> items;
    items.reserve(bench.size());
    for (const auto& r : bench) items.push_back(benchmark_item(r));
    return build(items, window);
  }

  std::size_t window_length() const noexcept { return window_; }
  /// Window instances indexed, i.e. the sum over benchmark texts of max(0, len - window + 1).
  std::size_t window_count() const noexcept { return window_count_; }
  std::size_t distinct_hashes() const noexcept { return windows_.size(); }
  std::size_t question_count() const noexcept { return question_count_; }

  /// Checks one already-normalized text.
  std::optional<Evidence> find(const std::u32string& s) const {
    if (s.empty()) return std::nullopt;
    detail::RollingHash h(s);
    for (const auto& [len, table] : short_questions_) {
      if (len > s.size()) break;
      for (std::size_t off = 0; off + len <= s.size(); ++off) {
        auto it = table.find(h(off, len));
        if (it == table.end()) continue;
        for (std::size_t k : it->second) {
          const Entry& e = entries_[k];
          if (s.compare(off, len, e.question) == 0) {
            return Evidence{Rule::full_question, e.id, {}, text::encode(e.question), off, 0, len};
          }
        }
      }
    }
    if (s.size() < window_) return std::nullopt;
    for (std::size_t off = 0; off + window_ <= s.size(); ++off) {
      auto it = windows_.find(h(off, window_));
      if (it == windows_.end()) continue;
      for (const auto& ref : it->second) {
        const Entry& e = entries_[ref.entry];
        if (s.compare(off, window_, e.text, ref.offset, window_) != 0) continue;
        std::size_t a = off, b = ref.offset, len = window_;
        while (a > 0 && b > 0 && s[a - 1] == e.text[b - 1]) --a, --b, ++len;
        while (a + len < s.size() && b + len < e.text.size() && s[a + len] == e.text[b + len]) ++len;
        return Evidence{Rule::window, e.id, {}, text::encode(s.substr(a, len)), a, b, len};
      }
    }
    return std::nullopt;
  }

 private:
  struct Entry {
    std::string id;
    std::u32string question;
    std::u32string text;
  };
  struct WindowRef {
    std::size_t entry;
    std::size_t offset;
  };

  std::size_t window_ = kDefaultWindow;
  std::vector<Entry> entries_;
  std::unordered_map<std::uint64_t, std::vector<WindowRef>> windows_;
  std::map<std::size_t, std::unordered_map<std::uint64_t, std::vector<std::size_t>>> short_questions_;
  std::size_t window_count_ = 0;
  std::size_t question_count_ = 0;
};

struct LeakCheck {
  bool leaked = false;
  std::optional<Evidence> evidence;
};

/// Instruction items are checked field by field so a match never straddles
/// the question/answer boundary.
inline LeakCheck is_leaked(const CorpusRecord& item, const OverlapIndex& index) {
  auto check = [&](const std::string& field, const std::string& body) -> LeakCheck {
    auto ev = index.find(text::decode(normalize(body)));
    if (!ev) return {};
    ev->field = field;
    return {true, std::move(ev)};
  };
  if (item.stage == Stage::pretrain) return check("text", item.text);
  if (auto r = check("question", item.question); r.leaked) return r;
  return check("answer", item.answer);
}

struct Removal {
  std::string item_id;
  Evidence evidence;
};

struct ScreenReport {
  std::size_t total = 0;
  std::size_t removed = 0;
  double screening_rate = 0.0;
  std::size_t window_length = kDefaultWindow;
  std::vector<Removal> removals;
};

struct ScreenResult {
  std::vector<CorpusRecord> kept;
  ScreenReport report;
};

inline ScreenResult screen(const std::vector<CorpusRecord>& items, const OverlapIndex& index, unsigned jobs = 1) {
  std::vector<LeakCheck> checks(items.size());
  parallel_for(items.size(), jobs, [&](std::size_t i) { checks[i] = is_leaked(items[i], index); });
  ScreenResult out;
  out.report.total = items.size();
  out.report.window_length = index.window_length();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (checks[i].leaked) {
      out.report.removals.push_back({items[i].id, std::move(*checks[i].evidence)});
    } else {
      out.kept.push_back(items[i]);
    }
  }
  out.report.removed = out.report.removals.size();
  out.report.screening_rate =
      items.empty() ? 0.0 : static_cast<double>(out.report.removed) / static_cast<double>(items.size());
  return out;
}

inline nlohmann::ordered_json to_json(const ScreenReport& r) {
  nlohmann::ordered_json j;
  j["total"] = r.total;
  j["removed"] = r.removed;
  j["screening_rate"] = r.screening_rate;
  j["window_length"] = r.window_length;
  auto& ev = j["evidence"] = nlohmann::ordered_json::array();
  for (const auto& rm : r.removals) {
    ev.push_back({{"item_id", rm.item_id},
                  {"rule", to_string(rm.evidence.rule)},
                  {"bench_id", rm.evidence.bench_id},
                  {"field", rm.evidence.field},
                  {"item_offset", rm.evidence.item_offset},
                  {"bench_offset", rm.evidence.bench_offset},
                  {"length", rm.evidence.length},
                  {"matched", rm.evidence.matched}});
  }
  return j;
}

}  // namespace medforge::leakage
