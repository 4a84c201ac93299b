#pragma once

// Mix-training schedule: priority sampling without replacement over one pool
// holding both pretraining and instruction items.
//
//   P_t(x) = pi(x) / sum_{y in D - S_t} pi(y)
//
// Instruction items enter the pool once per epoch (multiplicity sft_epochs),
// pretraining items once per pt_epoch. With pi_pt > pi_sft the stream starts
// pretraining-heavy and drifts smoothly to instruction data.

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "medforge/corpus.hpp"
#include "medforge/errors.hpp"

namespace medforge::schedule {

/// std::mt19937_64 (fully specified by the standard; the 10000th output of a
/// default-constructed engine is 9981545732273789042) plus a portable
/// 53-bit uniform double. std::uniform_real_distribution is avoided because
/// its output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next_u64() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

struct ScheduleConfig {
  double pt_priority = 16.0;
  double sft_priority = 2.0;
  int pt_epochs = 1;
  int sft_epochs = 2;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  // Exported for downstream trainers only.
  double learning_rate = 1e-5;
  std::string lr_scheduler = "cosine";
  double warmup_ratio = 0.03;

  void validate() const {
    if (!(pt_priority > 0.0) || !(sft_priority > 0.0) || !std::isfinite(pt_priority) || !std::isfinite(sft_priority)) {
      throw ValidationError("priorities must be positive and finite");
    }
    if (pt_epochs < 1 || sft_epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  }
};

struct PoolEntry {
  std::string id;
  Stage stage = Stage::pretrain;
  double priority = 1.0;
  std::size_t multiplicity = 1;
};

/// One drawn instance: which entry, and which of its copies.
struct Draw {
  std::size_t entry = 0;
  std::size_t copy = 0;
};

class SamplingPool {
 public:
  SamplingPool() = default;

  /// Entries are laid out as all PT items, then all SFT items, in input order.
  static SamplingPool build(const std::vector<std::string>& pt_ids, const std::vector<std::string>& sft_ids,
                            const ScheduleConfig& cfg) {
    cfg.validate();
    if (pt_ids.empty() && sft_ids.empty()) throw ValidationError("both pretraining and instruction sets are empty");
    std::vector<PoolEntry> entries;
    entries.reserve(pt_ids.size() + sft_ids.size());
    std::unordered_set<std::string> seen;
    auto add = [&](const std::string& id, Stage stage, double pi, int mult) {
      if (!seen.insert(id).second) throw ValidationError("duplicate item id in pool: \"" + id + "\"");
      entries.push_back({id, stage, pi, static_cast<std::size_t>(mult)});
    };
    for (const auto& id : pt_ids) add(id, Stage::pretrain, cfg.pt_priority, cfg.pt_epochs);
    for (const auto& id : sft_ids) add(id, Stage::instruction, cfg.sft_priority, cfg.sft_epochs);
    return SamplingPool(std::move(entries));
  }

  static SamplingPool build(const std::vector<CorpusRecord>& pt, const std::vector<CorpusRecord>& sft,
                            const ScheduleConfig& cfg) {
    std::vector<std::string> a, b;
    a.reserve(pt.size());
    b.reserve(sft.size());
    for (const auto& r : pt) a.push_back(r.id);
    for (const auto& r : sft) b.push_back(r.id);
    return build(a, b, cfg);
  }

  explicit SamplingPool(std::vector<PoolEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t e = 0; e < entries_.size(); ++e) {
      if (!(entries_[e].priority > 0.0)) throw ValidationError("priority must be positive");
      for (std::size_t c = 0; c < entries_[e].multiplicity; ++c) instances_.push_back({e, c});
    }
    leaves_ = 1;
    while (leaves_ < instances_.size()) leaves_ <<= 1;
    tree_.assign(2 * leaves_, 0.0);
    for (std::size_t i = 0; i < instances_.size(); ++i) tree_[leaves_ + i] = entries_[instances_[i].entry].priority;
    for (std::size_t n = leaves_ - 1; n >= 1; --n) tree_[n] = tree_[2 * n] + tree_[2 * n + 1];
    drawn_.assign(instances_.size(), false);
    remaining_ = instances_.size();
    total_weight_ = 0.0;
    for (const auto& inst : instances_) total_weight_ += entries_[inst.entry].priority;
  }

  const std::vector<PoolEntry>& entries() const noexcept { return entries_; }
  std::size_t instance_count() const noexcept { return instances_.size(); }
  std::size_t remaining() const noexcept { return remaining_; }
  bool exhausted() const noexcept { return remaining_ == 0; }
  /// Incrementally maintained sum of priorities over undrawn instances.
  double total_weight() const noexcept { return total_weight_; }

  /// Sum of priorities over undrawn instances, recomputed from scratch.
  double recomputed_weight() const {
    double s = 0.0;
    for (std::size_t i = 0; i < instances_.size(); ++i) {
      if (!drawn_[i]) s += entries_[instances_[i].entry].priority;
    }
    return s;
  }

  /// Draws an undrawn instance with probability pi(x) / sum of remaining pi
  /// and moves it to the drawn set. O(log n).
  Draw sample_next(Rng& rng) {
    if (exhausted()) throw ValidationError("sampling pool exhausted");
    double u = rng.uniform() * tree_[1];
    std::size_t node = 1;
    while (node < leaves_) {
      const std::size_t l = 2 * node;
      const bool go_left = tree_[l] > 0.0 && (u < tree_[l] || tree_[l + 1] <= 0.0);
      if (go_left) {
        node = l;
      } else {
        u -= tree_[l];
        node = l + 1;
      }
    }
    const std::size_t idx = node - leaves_;
    drawn_[idx] = true;
    --remaining_;
    const double pi = entries_[instances_[idx].entry].priority;
    total_weight_ -= pi;
    if (remaining_ == 0) total_weight_ = 0.0;
    tree_[node] = 0.0;
    for (node >>= 1; node >= 1; node >>= 1) tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
#ifndef NDEBUG
    check_weight();
#endif
    return instances_[idx];
  }

  /// Throws std::logic_error if the incremental total drifted from the
  /// recomputed one beyond floating-point noise.
  void check_weight() const {
    const double exact = recomputed_weight();
    if (std::abs(exact - total_weight_) > 1e-9 * std::max(1.0, exact)) {
      throw std::logic_error("sampling pool weight bookkeeping diverged");
    }
  }

 private:
  std::vector<PoolEntry> entries_;
  std::vector<Draw> instances_;
  std::vector<double> tree_;  // sum segment tree over instance priorities, recomputed from children
  std::vector<bool> drawn_;
  std::size_t leaves_ = 1;
  std::size_t remaining_ = 0;
  double total_weight_ = 0.0;
};

struct Schedule {
  std::vector<std::vector<std::string>> batches;
  std::vector<Stage> stages;  // stage of every drawn instance, in draw order
  std::size_t pt_items = 0;
  std::size_t sft_items = 0;
  std::size_t instances = 0;
};

/// Draws the pool to exhaustion (the pool is consumed) and groups the draws
/// into batches of cfg.batch_size; the last batch may be short.
inline Schedule emit_schedule(SamplingPool& pool, const ScheduleConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Schedule s;
  s.instances = pool.remaining();
  for (const auto& e : pool.entries()) (e.stage == Stage::pretrain ? s.pt_items : s.sft_items)++;
  s.stages.reserve(pool.remaining());
  std::vector<std::string> batch;
  while (!pool.exhausted()) {
    const Draw d = pool.sample_next(rng);
    const auto& e = pool.entries()[d.entry];
    s.stages.push_back(e.stage);
    batch.push_back(e.id);
    if (batch.size() == cfg.batch_size) s.batches.push_back(std::move(batch)), batch.clear();
  }
  if (!batch.empty()) s.batches.push_back(std::move(batch));
  return s;
}

/// Closed form for P(first draw is a pretraining instance).
inline double first_draw_pt_probability(const ScheduleConfig& cfg, std::size_t n_pt, std::size_t n_sft) {
  const double pt = cfg.pt_priority * static_cast<double>(n_pt) * cfg.pt_epochs;
  const double sft = cfg.sft_priority * static_cast<double>(n_sft) * cfg.sft_epochs;
  return pt / (pt + sft);
}

inline constexpr std::size_t kDeciles = 10;

/// PT share of each tenth of a schedule. Decile d covers draw positions
/// [d*N/10, (d+1)*N/10).
inline std::array<double, kDeciles> decile_pt_density(const std::vector<Stage>& stages) {
  std::array<double, kDeciles> out{};
  const std::size_t n = stages.size();
  for (std::size_t d = 0; d < kDeciles; ++d) {
    const std::size_t lo = d * n / kDeciles, hi = (d + 1) * n / kDeciles;
    if (hi == lo) continue;
    std::size_t pt = 0;
    for (std::size_t i = lo; i < hi; ++i) pt += stages[i] == Stage::pretrain;
    out[d] = static_cast<double>(pt) / static_cast<double>(hi - lo);
  }
  return out;
}

/// Monte-Carlo mean PT density per decile over `n_schedules` schedules of a
/// synthetic pool with the given counts. Schedule i uses seed cfg.seed + i.
inline std::array<double, kDeciles> expected_stage_curve(const ScheduleConfig& cfg, std::size_t n_pt,
                                                         std::size_t n_sft, std::size_t n_schedules = 1000) {
  cfg.validate();
  if (n_schedules == 0) throw ValidationError("need at least one schedule");
  std::vector<std::string> pt, sft;
  for (std::size_t i = 0; i < n_pt; ++i) pt.push_back("pt" + std::to_string(i));
  for (std::size_t i = 0; i < n_sft; ++i) sft.push_back("sft" + std::to_string(i));
  const SamplingPool base = SamplingPool::build(pt, sft, cfg);
  std::array<double, kDeciles> acc{};
  for (std::size_t k = 0; k < n_schedules; ++k) {
    SamplingPool pool = base;
    ScheduleConfig c = cfg;
    c.seed = cfg.seed + k;
    const auto dens = decile_pt_density(emit_schedule(pool, c).stages);
    for (std::size_t d = 0; d < kDeciles; ++d) acc[d] += dens[d];
  }
  for (auto& v : acc) v /= static_cast<double>(n_schedules);
  return acc;
}

inline nlohmann::ordered_json config_to_json(const ScheduleConfig& cfg) {
  nlohmann::ordered_json j;
  j["pt_priority"] = cfg.pt_priority;
  j["sft_priority"] = cfg.sft_priority;
  j["pt_epochs"] = cfg.pt_epochs;
  j["sft_epochs"] = cfg.sft_epochs;
  j["batch_size"] = cfg.batch_size;
  return j;
}

/// Header line (config, seed, counts, trainer metadata) then one JSON line
/// per batch: {"batch": k, "ids": [...]}.
inline void write_schedule(const Schedule& s, const ScheduleConfig& cfg, std::ostream& out,
                           const nlohmann::ordered_json& extra_header = nullptr) {
  nlohmann::ordered_json header;
  header["format"] = "medforge-schedule";
  header["version"] = 1;
  header["seed"] = cfg.seed;
  header["config"] = config_to_json(cfg);
  header["counts"] = {{"pt_items", s.pt_items},
                      {"sft_items", s.sft_items},
                      {"instances", s.instances},
                      {"batches", s.batches.size()}};
  header["trainer"] = {{"learning_rate", cfg.learning_rate},
                       {"lr_scheduler", cfg.lr_scheduler},
                       {"warmup_ratio", cfg.warmup_ratio}};
  if (!extra_header.is_null()) header["run"] = extra_header;
  out << header.dump() << '\n';
  for (std::size_t b = 0; b < s.batches.size(); ++b) {
    nlohmann::ordered_json line;
    line["batch"] = b;
    line["ids"] = s.batches[b];
    out << line.dump() << '\n';
  }
  out.flush();
  if (!out) throw IoError("write failure");
}

}  // namespace medforge::schedule
