#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rltp/config.hpp"
#include "rltp/env.hpp"
#include "rltp/errors.hpp"
#include "rltp/serialize.hpp"

namespace rltp {

// ---------------------------------------------------------------------------
// Bucketing
// ---------------------------------------------------------------------------

// Closed-left uniform grid over [lo, hi): boundary values fall rightward,
// everything outside clamps to the edge buckets.
inline int ratio_bucket(double x, double lo, double hi, int buckets) {
  const double t = (x - lo) / (hi - lo) * buckets;
  int idx = static_cast<int>(std::floor(t));
  return std::clamp(idx, 0, buckets - 1);
}

// Power-of-two grid for counts: 0 -> 0, then bucket k holds [2^(k-1), 2^k).
inline int count_bucket(long c, int buckets) {
  if (c <= 0) return 0;
  int k = 1;
  long edge = 1;
  while (c >= 2 * edge && k < buckets - 1) {
    edge *= 2;
    ++k;
  }
  return k;
}

// ---------------------------------------------------------------------------
// Feature layout
// ---------------------------------------------------------------------------

// The fixed feature order and vocabulary sizes the policy network was built
// around. Artifacts persist the layout so incompatible inputs are refused
// instead of silently misread.
struct FeatureLayout {
  struct Feature {
    std::string name;
    int vocab = 0;
    bool has_empty = false;  // last row reserved for "no history yet"

    friend bool operator==(const Feature&, const Feature&) = default;
  };

  std::vector<Feature> features;
  int embedding_dim = 4;
  int segment_dim = 8;
  int tail_windows = 12;
  int ratio_buckets = 20;
  int count_buckets = 24;

  int dense_dim() const {
    return static_cast<int>(features.size()) * embedding_dim + 2 * segment_dim;
  }
  int empty_index(const Feature& f) const { return f.vocab - 1; }

  static FeatureLayout make(const ExperimentConfig& cfg) {
    FeatureLayout l;
    l.embedding_dim = cfg.state.embedding_dim;
    l.segment_dim = cfg.env.segment_dim;
    l.tail_windows = cfg.state.tail_windows;
    l.ratio_buckets = cfg.state.ratio_buckets;
    l.count_buckets = cfg.state.count_buckets;
    const int rb = l.ratio_buckets, cb = l.count_buckets;
    l.features = {
        {"obs_seq", cb + 1, true},         // mean observed count over the tail
        {"n_cum", cb, false},              // cumulative observed impressions
        {"completion", rb, false},         // delivered share of the target
        {"completion_seq", rb + 1, true},  // mean completion over the tail
        {"delta", rb + 1, true},           // latest completion increment
        {"ctr_avg", rb + 1, true},         // running CTR
        {"ctr_seq", rb + 1, true},         // mean per-window CTR over the tail
        {"action_avg", rb + 1, true},      // mean selection probability so far
        {"week_day", 7, false},
        {"hour", 24, false},
        {"minute_bucket", 12, false},      // five-minute slot within the hour
    };
    return l;
  }

  void save(BinWriter& w) const {
    w.put_u32(static_cast<std::uint32_t>(features.size()));
    for (const Feature& f : features) {
      w.put_string(f.name);
      w.put_u32(static_cast<std::uint32_t>(f.vocab));
      w.put_u32(f.has_empty ? 1 : 0);
    }
    w.put_u32(static_cast<std::uint32_t>(embedding_dim));
    w.put_u32(static_cast<std::uint32_t>(segment_dim));
    w.put_u32(static_cast<std::uint32_t>(tail_windows));
    w.put_u32(static_cast<std::uint32_t>(ratio_buckets));
    w.put_u32(static_cast<std::uint32_t>(count_buckets));
  }

  static FeatureLayout load(BinReader& r) {
    FeatureLayout l;
    std::uint32_t n = r.get_u32();
    l.features.resize(n);
    for (Feature& f : l.features) {
      f.name = r.get_string();
      f.vocab = static_cast<int>(r.get_u32());
      f.has_empty = r.get_u32() != 0;
    }
    l.embedding_dim = static_cast<int>(r.get_u32());
    l.segment_dim = static_cast<int>(r.get_u32());
    l.tail_windows = static_cast<int>(r.get_u32());
    l.ratio_buckets = static_cast<int>(r.get_u32());
    l.count_buckets = static_cast<int>(r.get_u32());
    return l;
  }

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;
};

// ---------------------------------------------------------------------------
// Delivery status
// ---------------------------------------------------------------------------

// Running per-period tally, updated with each window outcome. The state for
// window i is built from this *before* stepping window i, so it only ever
// reflects windows 0..i-1.
class DeliveryStatus {
 public:
  void reset() {
    observed_seq_.clear();
    clicks_seq_.clear();
    action_seq_.clear();
    n_cum_ = 0;
    clicks_cum_ = 0;
  }

  void observe(const WindowOutcome& o) {
    observed_seq_.push_back(o.observed);
    clicks_seq_.push_back(o.clicks);
    action_seq_.push_back(o.action);
    n_cum_ += o.observed;
    clicks_cum_ += o.clicks;
  }

  int windows_seen() const { return static_cast<int>(observed_seq_.size()); }
  std::int64_t n_cum() const { return n_cum_; }
  std::int64_t clicks_cum() const { return clicks_cum_; }
  const std::vector<long>& observed_seq() const { return observed_seq_; }
  const std::vector<long>& clicks_seq() const { return clicks_seq_; }
  const std::vector<double>& action_seq() const { return action_seq_; }

 private:
  std::vector<long> observed_seq_;
  std::vector<long> clicks_seq_;
  std::vector<double> action_seq_;
  std::int64_t n_cum_ = 0;
  std::int64_t clicks_cum_ = 0;
};

// ---------------------------------------------------------------------------
// State vector
// ---------------------------------------------------------------------------

// Categorical part (one bucket index per feature, layout order) plus the two
// raw segment vectors. The dense embedding happens wherever the tables live,
// since those are learned parameters.
struct StateVector {
  std::vector<int> indices;
  std::vector<double> user_vec;
  std::vector<double> ad_vec;

  friend bool operator==(const StateVector&, const StateVector&) = default;
};

inline StateVector build_state(const FeatureLayout& layout,
                               const ExperimentConfig& cfg,
                               const DeliveryStatus& status, WindowId at) {
  const int i = at.index;
  if (i < 0 || i >= cfg.num_windows)
    throw ValidationError("state window index out of range");
  if (status.windows_seen() != i)
    throw ValidationError("delivery status covers " +
                          std::to_string(status.windows_seen()) +
                          " windows, expected " + std::to_string(i));

  const int rb = layout.ratio_buckets;
  const int tail = std::min(layout.tail_windows, status.windows_seen());
  const int first = status.windows_seen() - tail;

  double obs_tail = 0.0, ctr_tail = 0.0, completion_tail = 0.0;
  std::int64_t running = 0;
  for (int w = 0; w < first; ++w) running += status.observed_seq()[w];
  for (int w = first; w < status.windows_seen(); ++w) {
    const long obs = status.observed_seq()[w];
    running += obs;
    obs_tail += static_cast<double>(obs);
    ctr_tail += obs > 0 ? static_cast<double>(status.clicks_seq()[w]) / obs : 0.0;
    completion_tail +=
        static_cast<double>(running) / static_cast<double>(cfg.n_target);
  }
  if (tail > 0) {
    obs_tail /= tail;
    ctr_tail /= tail;
    completion_tail /= tail;
  }

  const double completion =
      static_cast<double>(status.n_cum()) / static_cast<double>(cfg.n_target);
  const double delta =
      status.windows_seen() > 0
          ? static_cast<double>(status.observed_seq().back()) /
                static_cast<double>(cfg.n_target)
          : 0.0;
  const double ctr_avg =
      status.n_cum() > 0 ? static_cast<double>(status.clicks_cum()) /
                               static_cast<double>(status.n_cum())
                         : 0.0;
  double action_avg = 0.0;
  for (double a : status.action_seq()) action_avg += a;
  if (!status.action_seq().empty())
    action_avg /= static_cast<double>(status.action_seq().size());

  const long minutes = static_cast<long>(i) * cfg.window_minutes;
  const int week_day =
      static_cast<int>((cfg.period_start_weekday + at.period + minutes / 1440) % 7);
  const int hour = static_cast<int>((minutes % 1440) / 60);
  const int minute_bucket = static_cast<int>((minutes % 60) / 5);

  StateVector sv;
  sv.indices.reserve(layout.features.size());
  for (const FeatureLayout::Feature& f : layout.features) {
    int idx;
    if (f.name == "obs_seq")
      idx = tail == 0 ? layout.empty_index(f)
                      : count_bucket(std::lround(obs_tail), layout.count_buckets);
    else if (f.name == "n_cum")
      idx = count_bucket(static_cast<long>(status.n_cum()), layout.count_buckets);
    else if (f.name == "completion")
      idx = ratio_bucket(completion, 0.0, 2.0, rb);
    else if (f.name == "completion_seq")
      idx = tail == 0 ? layout.empty_index(f)
                      : ratio_bucket(completion_tail, 0.0, 2.0, rb);
    else if (f.name == "delta")
      idx = status.windows_seen() == 0 ? layout.empty_index(f)
                                       : ratio_bucket(delta, 0.0, 0.05, rb);
    else if (f.name == "ctr_avg")
      idx = status.n_cum() == 0 ? layout.empty_index(f)
                                : ratio_bucket(ctr_avg, 0.0, 0.25, rb);
    else if (f.name == "ctr_seq")
      idx = tail == 0 ? layout.empty_index(f)
                      : ratio_bucket(ctr_tail, 0.0, 0.25, rb);
    else if (f.name == "action_avg")
      idx = status.windows_seen() == 0 ? layout.empty_index(f)
                                       : ratio_bucket(action_avg, 0.0, 1.0, rb);
    else if (f.name == "week_day")
      idx = week_day;
    else if (f.name == "hour")
      idx = hour;
    else if (f.name == "minute_bucket")
      idx = minute_bucket;
    else
      throw ValidationError("unknown feature in layout: " + f.name);
    sv.indices.push_back(idx);
  }

  sv.user_vec.resize(layout.segment_dim);
  for (int d = 0; d < layout.segment_dim; ++d)
    sv.user_vec[d] = cfg.env.user_vec_at(i, d);
  sv.ad_vec = cfg.env.ad_vector;
  return sv;
}

}  // namespace rltp
