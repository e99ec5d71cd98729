#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "rltp/config.hpp"
#include "rltp/env.hpp"
#include "rltp/errors.hpp"
#include "rltp/nn.hpp"

namespace rltp {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

// Adjacent-window regression samples: inputs are one window's counts, the
// audience vectors of the window being predicted, and the selection
// probability chosen at the earlier window; outputs are the later window's
// counts. Counts are normalized by n_target. Rows are ordered by period with
// the chronological holdout tail last.
struct SimDataset {
  Matrix x;
  Matrix y;
  int train_rows = 0;
  double norm_base = 1.0;     // n_target used for normalization
  double req_cap_norm = 0.0;  // per-window request ceiling, normalized
  int segment_dim = 0;

  int holdout_rows() const { return y.rows() - train_rows; }
};

inline int sim_input_dim(int segment_dim) { return 2 + 2 * segment_dim + 1; }

inline SimDataset build_sim_dataset(const ExperimentConfig& cfg,
                                    const std::vector<EpisodeLog>& logs) {
  if (logs.empty()) throw ValidationError("simulator dataset: no behavior logs");
  std::vector<const EpisodeLog*> usable;
  for (const EpisodeLog& ep : logs) {
    if (ep.rows.size() < 2) {
      std::cerr << "warning: skipping period " << ep.period
                << " with fewer than 2 windows\n";
      continue;
    }
    usable.push_back(&ep);
  }
  if (usable.empty())
    throw ValidationError("simulator dataset: no period has at least 2 windows");

  const int holdout_periods = std::max(
      1, static_cast<int>(std::floor(cfg.sim.holdout_fraction *
                                     static_cast<double>(usable.size()))));
  if (holdout_periods >= static_cast<int>(usable.size()))
    throw ValidationError("simulator dataset: holdout would consume every period");
  const std::size_t train_periods = usable.size() - holdout_periods;

  SimDataset ds;
  ds.norm_base = static_cast<double>(cfg.n_target);
  ds.segment_dim = cfg.env.segment_dim;
  const int in_dim = sim_input_dim(ds.segment_dim);

  std::size_t total = 0;
  for (const EpisodeLog* ep : usable) total += ep->rows.size() - 1;
  ds.x = Matrix(static_cast<int>(total), in_dim);
  ds.y = Matrix(static_cast<int>(total), 2);

  long max_requests = 0;
  int row = 0;
  for (std::size_t p = 0; p < usable.size(); ++p) {
    const std::vector<LogRow>& rows = usable[p]->rows;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
      const LogRow& cur = rows[i];
      const LogRow& nxt = rows[i + 1];
      max_requests = std::max(max_requests, cur.requests);
      double* xr = ds.x.row(row);
      int k = 0;
      xr[k++] = static_cast<double>(cur.observed) / ds.norm_base;
      xr[k++] = static_cast<double>(cur.clicks) / ds.norm_base;
      for (int d = 0; d < ds.segment_dim; ++d)
        xr[k++] = cfg.env.user_vec_at(nxt.window, d);
      for (int d = 0; d < ds.segment_dim; ++d) xr[k++] = cfg.env.ad_vector[d];
      xr[k++] = cur.action;
      ds.y(row, 0) = static_cast<double>(nxt.observed) / ds.norm_base;
      ds.y(row, 1) = static_cast<double>(nxt.clicks) / ds.norm_base;
      ++row;
      if (p < train_periods) ds.train_rows = row;
    }
    max_requests = std::max(max_requests, rows.back().requests);
  }
  ds.req_cap_norm =
      cfg.sim.clamp_scale * static_cast<double>(max_requests) / ds.norm_base;
  return ds;
}

// Shuffles the training-split outputs among themselves while holdout labels
// stay truthful — the no-skill control for the accuracy gate.
inline void permute_outputs(SimDataset& ds, Rng& rng) {
  std::vector<int> order(ds.train_rows);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix shuffled(ds.y.rows(), ds.y.cols());
  for (int i = 0; i < ds.y.rows(); ++i) {
    const int src = i < ds.train_rows ? order[i] : i;
    for (int j = 0; j < ds.y.cols(); ++j) shuffled(i, j) = ds.y(src, j);
  }
  ds.y = std::move(shuffled);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct SimFitReport {
  double train_mse = 0.0;
  double rel_err_obs = 0.0;     // holdout sum|err| / sum|true| per head
  double rel_err_clicks = 0.0;
  int train_samples = 0;
  int holdout_samples = 0;
};

// Shared trunk with one output unit per head (impressions, clicks).
struct SimulatorModel {
  Mlp net;
  double norm_base = 1.0;
  double req_cap_norm = 0.0;
  int segment_dim = 0;
  std::uint64_t cfg_digest = 0;
  SimFitReport report;
};

struct SimPrediction {
  double obs = 0.0;
  double clicks = 0.0;
};

// Deterministic one-step prediction in count units, clamped to the physical
// range: non-negative, below the request ceiling, clicks within impressions.
inline SimPrediction simulate_step(const SimulatorModel& m, double prev_obs,
                                   double prev_clicks,
                                   const std::vector<double>& user_vec,
                                   const std::vector<double>& ad_vec,
                                   double action) {
  if (static_cast<int>(user_vec.size()) != m.segment_dim ||
      static_cast<int>(ad_vec.size()) != m.segment_dim)
    throw DimensionError("segment vector size does not match the simulator");
  Matrix x(1, sim_input_dim(m.segment_dim));
  int k = 0;
  x(0, k++) = prev_obs / m.norm_base;
  x(0, k++) = prev_clicks / m.norm_base;
  for (int d = 0; d < m.segment_dim; ++d) x(0, k++) = user_vec[d];
  for (int d = 0; d < m.segment_dim; ++d) x(0, k++) = ad_vec[d];
  x(0, k++) = action;
  Matrix y = m.net.forward(x);
  SimPrediction p;
  p.obs = std::clamp(y(0, 0), 0.0, m.req_cap_norm) * m.norm_base;
  p.clicks = std::clamp(y(0, 1), 0.0, m.req_cap_norm) * m.norm_base;
  p.clicks = std::min(p.clicks, p.obs);
  return p;
}

namespace detail {

inline void sim_holdout_errors(const SimulatorModel& m, const SimDataset& ds,
                               SimFitReport& report) {
  double abs_err[2] = {0.0, 0.0};
  double abs_true[2] = {0.0, 0.0};
  for (int i = ds.train_rows; i < ds.x.rows(); ++i) {
    Matrix x(1, ds.x.cols());
    for (int j = 0; j < ds.x.cols(); ++j) x(0, j) = ds.x(i, j);
    Matrix y = m.net.forward(x);
    for (int h = 0; h < 2; ++h) {
      const double pred = std::clamp(y(0, h), 0.0, m.req_cap_norm);
      abs_err[h] += std::fabs(pred - ds.y(i, h));
      abs_true[h] += std::fabs(ds.y(i, h));
    }
  }
  auto ratio = [](double e, double t) {
    if (t > 0.0) return e / t;
    return e > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  };
  report.rel_err_obs = ratio(abs_err[0], abs_true[0]);
  report.rel_err_clicks = ratio(abs_err[1], abs_true[1]);
  report.holdout_samples = ds.holdout_rows();
}

inline double sim_train_epochs(SimulatorModel& m, const SimDataset& ds, Adam& opt,
                               int epochs, int batch_size, Rng& rng) {
  std::vector<Matrix*> params, grads;
  m.net.collect(params, grads);
  std::vector<int> order(ds.train_rows);
  std::iota(order.begin(), order.end(), 0);
  double last_mse = 0.0;
  const double lr0 = opt.learning_rate();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Step decay settles the minibatch jitter near convergence.
    if (epoch == epochs / 2) opt.set_learning_rate(lr0 * 0.3);
    if (epoch == (epochs * 8) / 10) opt.set_learning_rate(lr0 * 0.1);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sq = 0.0;
    long seen = 0;
    for (int start = 0; start < ds.train_rows; start += batch_size) {
      const int bs = std::min(batch_size, ds.train_rows - start);
      Matrix x(bs, ds.x.cols()), t(bs, 2);
      for (int b = 0; b < bs; ++b) {
        const int src = order[start + b];
        for (int j = 0; j < ds.x.cols(); ++j) x(b, j) = ds.x(src, j);
        t(b, 0) = ds.y(src, 0);
        t(b, 1) = ds.y(src, 1);
      }
      m.net.zero_grad();
      Mlp::Cache cache;
      Matrix y = m.net.forward(x, &cache);
      Matrix dy(bs, 2);
      double sq = 0.0;
      for (int b = 0; b < bs; ++b)
        for (int h = 0; h < 2; ++h) {
          const double d = y(b, h) - t(b, h);
          sq += d * d;
          dy(b, h) = 2.0 * d / static_cast<double>(bs);
        }
      if (!std::isfinite(sq))
        throw NumericError("simulator training diverged (non-finite loss)");
      m.net.backward(cache, dy);
      opt.step(params, grads);
      epoch_sq += sq;
      seen += bs;
    }
    last_mse = epoch_sq / static_cast<double>(2 * seen);
  }
  // Report the train error of the frozen final weights, not the moving
  // average of the last epoch.
  if (ds.train_rows > 0) {
    Matrix x(ds.train_rows, ds.x.cols());
    for (int i = 0; i < ds.train_rows; ++i)
      for (int j = 0; j < ds.x.cols(); ++j) x(i, j) = ds.x(i, j);
    Matrix y = m.net.forward(x);
    double sq = 0.0;
    for (int i = 0; i < ds.train_rows; ++i)
      for (int h = 0; h < 2; ++h) {
        const double d = y(i, h) - ds.y(i, h);
        sq += d * d;
      }
    last_mse = sq / static_cast<double>(2 * ds.train_rows);
  }
  return last_mse;
}

}  // namespace detail

inline SimulatorModel fit_simulator(const ExperimentConfig& cfg,
                                    const SimDataset& ds, std::uint64_t seed) {
  if (ds.train_rows == 0)
    throw ValidationError("simulator fit: empty training split");
  SimulatorModel m;
  Rng init = derive_stream(seed, 0x51A1);
  std::vector<int> layers = cfg.sim.hidden;
  layers.push_back(2);
  m.net = Mlp(sim_input_dim(ds.segment_dim), layers, init);
  m.norm_base = ds.norm_base;
  m.req_cap_norm = ds.req_cap_norm;
  m.segment_dim = ds.segment_dim;
  m.cfg_digest = config_digest(cfg);

  Adam opt(cfg.sim.learning_rate);
  Rng shuffle_rng = derive_stream(seed, 0x51A2);
  m.report.train_mse = detail::sim_train_epochs(m, ds, opt, cfg.sim.epochs,
                                                cfg.sim.batch_size, shuffle_rng);
  m.report.train_samples = ds.train_rows;
  detail::sim_holdout_errors(m, ds, m.report);
  return m;
}

// Continued fitting on fresh logs with the reduced refresh learning rate; the
// request ceiling can only widen.
inline void refresh_simulator(SimulatorModel& m, const ExperimentConfig& cfg,
                              const SimDataset& ds, std::uint64_t seed) {
  if (ds.train_rows == 0)
    throw ValidationError("simulator refresh: empty training split");
  if (ds.segment_dim != m.segment_dim)
    throw CompatibilityError("refresh dataset segment width differs from model");
  m.req_cap_norm = std::max(m.req_cap_norm, ds.req_cap_norm);
  Adam opt(cfg.sim.refresh_learning_rate);
  Rng shuffle_rng = derive_stream(seed, 0x51A3);
  m.report.train_mse = detail::sim_train_epochs(
      m, ds, opt, cfg.sim.refresh_epochs, cfg.sim.batch_size, shuffle_rng);
  m.report.train_samples = ds.train_rows;
  detail::sim_holdout_errors(m, ds, m.report);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr char kSimMagic[8] = {'R', 'L', 'T', 'P', 'S', 'I', 'M', '1'};

inline void save_simulator(const SimulatorModel& m, const std::string& path) {
  BinWriter w(path, kSimMagic, 1);
  w.put_u64(m.cfg_digest);
  w.put_f64(m.norm_base);
  w.put_f64(m.req_cap_norm);
  w.put_u32(static_cast<std::uint32_t>(m.segment_dim));
  save_mlp(w, m.net);
  w.put_f64(m.report.train_mse);
  w.put_f64(m.report.rel_err_obs);
  w.put_f64(m.report.rel_err_clicks);
  w.put_u32(static_cast<std::uint32_t>(m.report.train_samples));
  w.put_u32(static_cast<std::uint32_t>(m.report.holdout_samples));
}

inline SimulatorModel load_simulator(const std::string& path) {
  BinReader r(path, kSimMagic, 1);
  SimulatorModel m;
  m.cfg_digest = r.get_u64();
  m.norm_base = r.get_f64();
  m.req_cap_norm = r.get_f64();
  m.segment_dim = static_cast<int>(r.get_u32());
  m.net = load_mlp(r);
  m.report.train_mse = r.get_f64();
  m.report.rel_err_obs = r.get_f64();
  m.report.rel_err_clicks = r.get_f64();
  m.report.train_samples = static_cast<int>(r.get_u32());
  m.report.holdout_samples = static_cast<int>(r.get_u32());
  return m;
}

// ---------------------------------------------------------------------------
// Episodic rollout adapter
// ---------------------------------------------------------------------------

// Drives the learned model through the same episodic interface as the ground
// truth environment, so training code cannot tell them apart. Each predicted
// window feeds the next prediction; optional seeded sampling keeps rollouts
// from collapsing onto one trajectory. Following the adjacent-window sample
// format, the action taken at a window shapes the *next* window's counts; the
// opening window leans on the only action available, the current one.
class SimEnv {
 public:
  SimEnv(const ExperimentConfig& cfg, const SimulatorModel& model)
      : cfg_(cfg), model_(model) {
    if (model.segment_dim != cfg.env.segment_dim)
      throw CompatibilityError("simulator segment width does not match config");
    user_vec_.resize(cfg.env.segment_dim);
  }

  void reset(std::uint64_t episode_seed, std::int64_t period = 0) {
    noise_ = derive_stream(episode_seed, 6);
    (void)period;
    window_ = 0;
    prev_obs_ = 0.0;
    prev_clicks_ = 0.0;
    prev_action_ = 0.0;
    observed_cum_ = 0;
    clicks_cum_ = 0;
  }

  bool done() const { return window_ >= cfg_.num_windows; }
  int window() const { return window_; }

  WindowOutcome step(const Action& a) {
    if (done())
      throw EpisodeCompleteError("simulated period already has all " +
                                 std::to_string(cfg_.num_windows) + " windows");
    const int i = window_;
    for (int d = 0; d < cfg_.env.segment_dim; ++d)
      user_vec_[d] = cfg_.env.user_vec_at(i, d);
    const double drive_action = i == 0 ? a.probability : prev_action_;
    SimPrediction pred = simulate_step(model_, prev_obs_, prev_clicks_, user_vec_,
                                       cfg_.env.ad_vector, drive_action);

    long obs, clicks;
    if (cfg_.sim.rollout_noise) {
      std::poisson_distribution<long> od(std::max(pred.obs, 1e-12));
      obs = pred.obs > 0.0 ? od(noise_) : 0;
      const double p =
          pred.obs > 0.0 ? std::clamp(pred.clicks / pred.obs, 0.0, 1.0) : 0.0;
      std::binomial_distribution<long> cd(obs, p);
      clicks = obs > 0 ? cd(noise_) : 0;
    } else {
      obs = static_cast<long>(std::llround(pred.obs));
      clicks = std::min(static_cast<long>(std::llround(pred.clicks)), obs);
    }

    observed_cum_ += obs;
    clicks_cum_ += clicks;
    prev_obs_ = static_cast<double>(obs);
    prev_clicks_ = static_cast<double>(clicks);
    prev_action_ = a.probability;
    ++window_;

    WindowOutcome out;
    out.window = i;
    out.requests = 0;  // the learned model only reproduces counts
    out.fills = 0;
    out.observed = obs;
    out.clicks = clicks;
    out.action = a.probability;
    out.n_cum = observed_cum_;
    out.clicks_cum = clicks_cum_;
    return out;
  }

  std::int64_t observed_cum() const { return observed_cum_; }
  std::int64_t clicks_cum() const { return clicks_cum_; }

 private:
  ExperimentConfig cfg_;
  const SimulatorModel& model_;
  std::vector<double> user_vec_;
  Rng noise_;
  int window_ = 0;
  double prev_obs_ = 0.0;
  double prev_clicks_ = 0.0;
  double prev_action_ = 0.0;
  std::int64_t observed_cum_ = 0;
  std::int64_t clicks_cum_ = 0;
};

}  // namespace rltp
