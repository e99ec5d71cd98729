#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rltp/config.hpp"
#include "rltp/errors.hpp"
#include "rltp/rng.hpp"

namespace rltp {

// ---------------------------------------------------------------------------
// Delay profiles
// ---------------------------------------------------------------------------

// How one window's fills spread over future display windows. Factors cover
// landing windows fill .. min(fill + max_delay, L-1); mass that cannot land
// inside the period (or is dropped outright) is never displayed.
struct DelayProfile {
  int fill_window = 0;
  std::vector<double> factors;
  double never_mass = 0.0;

  double total() const {
    double s = never_mass;
    for (double f : factors) s += f;
    return s;
  }
};

// jitter_rng is only consulted when params.delay_jitter > 0; pass the same
// stream state to reproduce a profile.
inline DelayProfile sample_delay_profile(const PublisherParams& p, int L, int fill,
                                         Rng* jitter_rng = nullptr) {
  if (fill < 0 || fill >= L)
    throw ValidationError("fill window out of range for delay profile");
  DelayProfile prof;
  prof.fill_window = fill;

  const double decay = p.delay_decay_at(fill);
  std::vector<double> w(static_cast<std::size_t>(p.max_delay_windows) + 1);
  double cur = 1.0;
  for (double& x : w) {
    x = cur;
    cur *= decay;
  }
  if (p.delay_jitter > 0.0) {
    if (!jitter_rng)
      throw ValidationError("delay_jitter > 0 requires a jitter stream");
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& x : w) x *= std::exp(p.delay_jitter * nd(*jitter_rng));
  }
  double total = 0.0;
  for (double x : w) total += x;

  const double displayed = 1.0 - p.drop_prob;
  const int keep = std::min(p.max_delay_windows, L - 1 - fill) + 1;
  prof.factors.resize(keep);
  double kept = 0.0;
  for (int k = 0; k < keep; ++k) {
    prof.factors[k] = displayed * w[k] / total;
    kept += prof.factors[k];
  }
  prof.never_mass = 1.0 - kept;  // drop mass plus any truncated tail
  return prof;
}

// ---------------------------------------------------------------------------
// Behavior logs
// ---------------------------------------------------------------------------

// `eventual` counts how many of this window's fills display before the period
// ends, regardless of landing window; it is known only once the period closes.
struct LogRow {
  std::int64_t period = 0;
  int window = 0;
  long requests = 0;
  long fills = 0;
  long observed = 0;
  long clicks = 0;
  double action = 0.0;
  long eventual = 0;

  friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct EpisodeLog {
  std::int64_t period = 0;
  std::vector<LogRow> rows;

  friend bool operator==(const EpisodeLog&, const EpisodeLog&) = default;
};

// Column order is part of the external contract; `eventual` extends it so the
// delay-mapping statistics can be rebuilt from the same file.
inline constexpr const char* kBehaviorLogHeader =
    "period\twindow\trequests\taction\tselected\tobserved\tclicks\teventual";

inline void write_behavior_log(const std::string& path,
                               const std::vector<EpisodeLog>& logs) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out << kBehaviorLogHeader << '\n';
  out.precision(17);
  for (const EpisodeLog& ep : logs)
    for (const LogRow& r : ep.rows)
      out << r.period << '\t' << r.window << '\t' << r.requests << '\t'
          << r.action << '\t' << r.fills << '\t' << r.observed << '\t'
          << r.clicks << '\t' << r.eventual << '\n';
  if (!out) throw FormatError("short write: " + path);
}

inline std::vector<EpisodeLog> read_behavior_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw FormatError("empty behavior log: " + path);
  if (line != kBehaviorLogHeader)
    throw FormatError("unexpected header in " + path + ": " + line);

  std::vector<EpisodeLog> logs;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    LogRow r;
    if (!(ss >> r.period >> r.window >> r.requests >> r.action >> r.fills >>
          r.observed >> r.clicks >> r.eventual))
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": cannot parse row '" + line + "'");
    if (r.requests < 0 || r.fills < 0 || r.observed < 0 || r.clicks < 0 ||
        r.eventual < 0)
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": negative count");
    if (r.fills > r.requests)
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": fills exceed requests");
    if (r.clicks > r.observed)
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": clicks exceed observed");
    if (r.action < 0.0 || r.action > 1.0)
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": action outside [0, 1]");
    if (logs.empty() || logs.back().period != r.period) {
      if (!logs.empty() && r.period < logs.back().period)
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": periods out of order");
      logs.push_back(EpisodeLog{r.period, {}});
    }
    if (r.window != static_cast<int>(logs.back().rows.size()))
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": window indices not consecutive");
    logs.back().rows.push_back(r);
  }
  if (logs.empty()) throw FormatError("behavior log has no rows: " + path);
  return logs;
}

// ---------------------------------------------------------------------------
// Publisher environment
// ---------------------------------------------------------------------------

struct WindowOutcome {
  int window = 0;
  long requests = 0;
  long fills = 0;     // preloads committed this window
  long observed = 0;  // impressions landing this window
  long clicks = 0;
  double action = 0.0;
  std::int64_t n_cum = 0;       // observed impressions so far
  std::int64_t clicks_cum = 0;  // clicks so far
};

// Synthetic ad server for one delivery period of L windows. Each purpose
// (traffic, selection, scatter, clicks, profiles) draws from its own stream
// derived from the episode seed, so consumption in one purpose never shifts
// another: replaying a seed with a pointwise-higher action sequence can only
// add fills, never rearrange them.
class PublisherEnv {
 public:
  explicit PublisherEnv(const ExperimentConfig& cfg) : cfg_(cfg) {}

  void reset(std::uint64_t episode_seed, std::int64_t period = 0) {
    const int L = cfg_.num_windows;
    traffic_ = derive_stream(episode_seed, 1);
    selection_ = derive_stream(episode_seed, 2);
    scatter_ = derive_stream(episode_seed, 3);
    clicks_ = derive_stream(episode_seed, 4);
    Rng profile_rng = derive_stream(episode_seed, 5);

    profiles_.clear();
    profiles_.reserve(L);
    for (int i = 0; i < L; ++i)
      profiles_.push_back(sample_delay_profile(
          cfg_.env, L, i, cfg_.env.delay_jitter > 0.0 ? &profile_rng : nullptr));

    future_landings_.assign(L, 0);
    log_.period = period;
    log_.rows.clear();
    window_ = 0;
    fills_cum_ = 0;
    observed_cum_ = 0;
    clicks_cum_ = 0;
    pending_ = 0;
    never_cum_ = 0;
  }

  bool done() const { return window_ >= cfg_.num_windows; }
  int window() const { return window_; }

  WindowOutcome step(const Action& a) {
    if (done())
      throw EpisodeCompleteError("period already has all " +
                                 std::to_string(cfg_.num_windows) + " windows");
    const int i = window_;
    const PublisherParams& env = cfg_.env;

    std::poisson_distribution<long> traffic(
        static_cast<double>(env.base_requests_per_window) * env.traffic_shape[i]);
    const long requests = traffic(traffic_);

    long fills = 0;
    for (long r = 0; r < requests; ++r)
      if (uniform01(selection_) < a.probability) ++fills;

    // Scatter each fill over its landing window, or drop it for good. Every
    // fill resolves here, so this window's eventual display count is already
    // final even though the landings themselves arrive later.
    const DelayProfile& prof = profiles_[i];
    long eventual = 0;
    for (long f = 0; f < fills; ++f) {
      const double u = uniform01(scatter_) * prof.total();
      double acc = 0.0;
      int landed = -1;
      for (std::size_t k = 0; k < prof.factors.size(); ++k) {
        acc += prof.factors[k];
        if (u < acc) {
          landed = i + static_cast<int>(k);
          break;
        }
      }
      if (landed >= 0) {
        ++future_landings_[landed];
        ++pending_;
        ++eventual;
      } else {
        ++never_cum_;
      }
    }

    const long observed = future_landings_[i];
    pending_ -= observed;
    std::binomial_distribution<long> click_draw(observed, env.ctr_curve[i]);
    const long clicks = observed > 0 ? click_draw(clicks_) : 0;

    fills_cum_ += fills;
    observed_cum_ += observed;
    clicks_cum_ += clicks;

    LogRow row;
    row.period = log_.period;
    row.window = i;
    row.requests = requests;
    row.fills = fills;
    row.observed = observed;
    row.clicks = clicks;
    row.action = a.probability;
    row.eventual = eventual;
    log_.rows.push_back(row);

    ++window_;
    WindowOutcome out;
    out.window = i;
    out.requests = requests;
    out.fills = fills;
    out.observed = observed;
    out.clicks = clicks;
    out.action = a.probability;
    out.n_cum = observed_cum_;
    out.clicks_cum = clicks_cum_;
    return out;
  }

  // Accounting invariant inputs: fills == observed + pending + never, exactly.
  std::int64_t fills_cum() const { return fills_cum_; }
  std::int64_t observed_cum() const { return observed_cum_; }
  std::int64_t clicks_cum() const { return clicks_cum_; }
  std::int64_t pending() const { return pending_; }
  std::int64_t never_displayed() const { return never_cum_; }

  const EpisodeLog& log() const { return log_; }
  const DelayProfile& profile(int window) const { return profiles_.at(window); }

 private:
  ExperimentConfig cfg_;
  Rng traffic_, selection_, scatter_, clicks_;
  std::vector<DelayProfile> profiles_;
  std::vector<long> future_landings_;
  EpisodeLog log_;
  int window_ = 0;
  std::int64_t fills_cum_ = 0;
  std::int64_t observed_cum_ = 0;
  std::int64_t clicks_cum_ = 0;
  std::int64_t pending_ = 0;
  std::int64_t never_cum_ = 0;
};

}  // namespace rltp
