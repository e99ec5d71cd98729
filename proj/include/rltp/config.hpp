#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rltp/errors.hpp"
#include "rltp/rng.hpp"

namespace rltp {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Core grid types
// ---------------------------------------------------------------------------

// One point of the discrete selection-probability grid.
struct Action {
  int index = 0;
  double probability = 0.0;  // always index * action_step

  friend bool operator==(const Action& a, const Action& b) {
    return a.index == b.index;
  }
};

struct WindowId {
  std::int64_t period = 0;
  int index = 0;  // 0 .. L-1 within the period
};

// ---------------------------------------------------------------------------
// Publisher environment parameters
// ---------------------------------------------------------------------------

// Synthetic publisher knobs. `traffic_shape`, `ctr_curve` and the segment
// vectors are materialized from the preset at load time unless given
// explicitly, so a params value is always fully resolved after validation.
struct PublisherParams {
  std::int64_t base_requests_per_window = 520;
  std::string traffic_preset = "two_peak";  // two_peak | flat | regime_shift
  std::vector<double> traffic_shape;        // length L, positive, mean 1 before shift scaling
  std::vector<double> ctr_curve;            // length L, entries in (0,1)
  double delay_decay = 0.93;                // geometric decay of delay factors
  int max_delay_windows = 32;
  double drop_prob = 0.10;    // share of fills never displayed within the period
  double delay_jitter = 0.0;  // >0 adds lognormal per-window noise to delay factors
  std::uint64_t seed = 99;    // structural seed (segment vectors)

  // Mid-period regime shift (regime_shift preset, or set directly).
  int shift_window = -1;  // -1 disables
  double delay_decay_after = 0.9;
  double traffic_scale_after = 0.75;

  // Synthetic audience segments; the per-window averaged user vector follows
  // the diurnal mix, which is also what drives the default ctr_curve.
  int num_segments = 3;
  int segment_dim = 8;
  std::vector<double> segment_ctrs;     // per segment, derived default
  std::vector<double> segment_mix;      // L x K row-major, rows sum to 1
  std::vector<double> segment_vectors;  // K x segment_dim row-major
  std::vector<double> ad_vector;        // segment_dim

  double user_vec_at(int window, int d) const {
    double v = 0.0;
    for (int k = 0; k < num_segments; ++k)
      v += segment_mix[static_cast<std::size_t>(window) * num_segments + k] *
           segment_vectors[static_cast<std::size_t>(k) * segment_dim + d];
    return v;
  }

  double delay_decay_at(int fill_window) const {
    return (shift_window >= 0 && fill_window >= shift_window) ? delay_decay_after
                                                              : delay_decay;
  }

  friend bool operator==(const PublisherParams&, const PublisherParams&) = default;
};

// ---------------------------------------------------------------------------
// Hyperparameter groups
// ---------------------------------------------------------------------------

struct StateParams {
  int embedding_dim = 4;
  int tail_windows = 12;  // sliding tail summarized by sequence features
  int ratio_buckets = 20;
  int count_buckets = 24;

  friend bool operator==(const StateParams&, const StateParams&) = default;
};

struct AgentParams {
  std::vector<int> value_layers = {200, 100, 1};
  std::vector<int> advantage_layers = {200, 100, 50};
  int action_embedding_dim = 4;
  double learning_rate = 3e-4;
  double eta_learning_rate = 1e-4;
  int batch_size = 64;
  int replay_capacity = 50000;
  int target_refresh_updates = 500;
  int train_every_steps = 16;
  int learning_starts = 2000;  // buffered transitions before updates begin
  double explore_start = 1.0;
  double explore_end = 0.05;
  double explore_fraction = 0.3;  // share of episodes spanned by the anneal
  std::vector<double> eta_init = {1.0, 1.0, 1.0, 1.0};
  bool eta4_zero = false;  // freeze the traffic-value weight at zero (ablation)
  double grad_clip = 10.0;

  friend bool operator==(const AgentParams&, const AgentParams&) = default;
};

struct SimParams {
  std::vector<int> hidden = {128, 64};
  int epochs = 80;
  double learning_rate = 1e-3;
  int batch_size = 128;
  double holdout_fraction = 0.2;  // chronological tail of periods held out
  double refresh_learning_rate = 2e-4;
  int refresh_epochs = 10;
  double clamp_scale = 1.2;   // prediction ceiling = scale * max logged requests
  bool rollout_noise = true;  // sample counts around predictions during rollouts

  friend bool operator==(const SimParams&, const SimParams&) = default;
};

struct BaselineParams {
  double kp = 1.0;
  double ki = 60.0;
  double kd = 0.1;
  int ctr_groups = 3;
  std::vector<double> group_gain_scale = {0.8, 1.0, 1.2};
  bool pid_additive = false;  // false: a' = a * score; true: a' = a * (1 + score)
  std::string schedule = "uniform";  // uniform | traffic
  double rule_margin = 0.0;
  double rule_base_scale = 1.25;
  std::vector<int> predictor_layers = {32, 16, 1};
  int predictor_epochs = 120;
  double predictor_learning_rate = 1e-3;
  int predictor_ensemble = 5;  // independently seeded fits, averaged
  int bootstrap_periods = 5;   // log periods driven by the naive predictor

  friend bool operator==(const BaselineParams&, const BaselineParams&) = default;
};

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::int64_t n_target = 15000;
  std::int64_t epsilon = 1500;  // over-delivery tolerance, defaults to 10% of n_target
  int num_windows = 288;        // L
  int window_minutes = 5;       // dT
  double action_step = 0.02;
  double gamma = 0.99;
  double ctr_base = 0.082;
  double ctr_prior_strength = 100.0;  // pseudo-impressions behind the running-CTR statistic; 0 disables
  double smoothness_c = 0.05;
  std::uint64_t seed = 1;
  std::int64_t training_episodes = 20000;
  int period_start_weekday = 0;  // 0 = Monday, anchors context features
  int log_periods = 50;
  double log_explore = 0.2;  // per-window chance of a uniform logging action
  int eval_episodes = 3;

  PublisherParams env;
  StateParams state;
  AgentParams agent;
  SimParams sim;
  BaselineParams baselines;

  int num_actions() const {
    return static_cast<int>(std::llround(1.0 / action_step)) + 1;
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// ---------------------------------------------------------------------------
// Preset materialization
// ---------------------------------------------------------------------------

namespace detail {

inline double diurnal_bump(double hour, double mu, double sigma) {
  double d = std::fabs(hour - mu);
  d = std::min(d, 24.0 - d);  // wrap-around distance on the day circle
  return std::exp(-0.5 * (d / sigma) * (d / sigma));
}

inline void materialize_env(PublisherParams& p, int L) {
  const bool flat = p.traffic_preset == "flat";
  if (p.traffic_preset == "regime_shift" && p.shift_window < 0) p.shift_window = L / 2;

  if (p.segment_ctrs.empty()) {
    p.segment_ctrs = flat ? std::vector<double>(p.num_segments, 0.08)
                          : std::vector<double>{0.045, 0.075, 0.115};
    p.segment_ctrs.resize(p.num_segments, 0.08);
  }

  if (p.segment_mix.empty()) {
    p.segment_mix.resize(static_cast<std::size_t>(L) * p.num_segments);
    for (int i = 0; i < L; ++i) {
      double hour = (i + 0.5) / L * 24.0;
      std::vector<double> w(p.num_segments, 1.0);
      if (!flat && p.num_segments >= 3) {
        w[0] = diurnal_bump(hour, 2.5, 3.5) + 0.15;   // night
        w[1] = diurnal_bump(hour, 13.0, 3.5) + 0.15;  // day
        w[2] = diurnal_bump(hour, 20.5, 2.5) + 0.15;  // evening
        for (int k = 3; k < p.num_segments; ++k) w[k] = 0.15;
      }
      double s = std::accumulate(w.begin(), w.end(), 0.0);
      for (int k = 0; k < p.num_segments; ++k)
        p.segment_mix[static_cast<std::size_t>(i) * p.num_segments + k] = w[k] / s;
    }
  }

  if (p.traffic_shape.empty()) {
    p.traffic_shape.resize(L);
    double sum = 0.0;
    for (int i = 0; i < L; ++i) {
      double hour = (i + 0.5) / L * 24.0;
      double v = flat ? 1.0
                      : 0.35 + 0.9 * diurnal_bump(hour, 13.0, 3.0) +
                            1.15 * diurnal_bump(hour, 20.5, 2.2);
      p.traffic_shape[i] = v;
      sum += v;
    }
    for (double& v : p.traffic_shape) v *= L / sum;  // mean 1
    if (p.shift_window >= 0)
      for (int i = p.shift_window; i < L; ++i) p.traffic_shape[i] *= p.traffic_scale_after;
  }

  if (p.ctr_curve.empty()) {
    p.ctr_curve.resize(L);
    for (int i = 0; i < L; ++i) {
      double c = 0.0;
      for (int k = 0; k < p.num_segments; ++k)
        c += p.segment_mix[static_cast<std::size_t>(i) * p.num_segments + k] *
             p.segment_ctrs[k];
      p.ctr_curve[i] = c;
    }
  }

  if (p.segment_vectors.empty()) {
    Rng rng = derive_stream(p.seed, /*tag=*/0x5E6);
    std::normal_distribution<double> nd(0.0, 1.0);
    const double inv = 1.0 / std::sqrt(static_cast<double>(p.segment_dim));
    p.segment_vectors.resize(static_cast<std::size_t>(p.num_segments) * p.segment_dim);
    for (double& v : p.segment_vectors) v = nd(rng) * inv;
    p.ad_vector.resize(p.segment_dim);
    for (double& v : p.ad_vector) v = nd(rng) * inv;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void check(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ValidationError("invalid config field '" + field + "': " + why);
}

inline void validate(const ExperimentConfig& c) {
  check(c.n_target >= 1, "n_target", "must be >= 1");
  check(c.epsilon >= 0 && c.epsilon <= c.n_target, "epsilon",
        "must be in [0, n_target]");
  check(c.num_windows >= 1, "num_windows", "must be >= 1");
  check(c.window_minutes >= 1, "window_minutes", "must be >= 1");
  check(c.action_step > 0.0 && c.action_step <= 1.0, "action_step",
        "must be in (0, 1]");
  double inv = 1.0 / c.action_step;
  check(std::fabs(inv - std::llround(inv)) < 1e-9, "action_step",
        "1/action_step must be an integer");
  check(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma", "must be in [0, 1]");
  check(c.ctr_base > 0.0 && c.ctr_base < 1.0, "ctr_base", "must be in (0, 1)");
  check(c.ctr_prior_strength >= 0.0, "ctr_prior_strength", "must be >= 0");
  check(c.smoothness_c > 0.0, "smoothness_c", "must be > 0");
  check(c.training_episodes >= 0, "training_episodes", "must be >= 0");
  check(c.period_start_weekday >= 0 && c.period_start_weekday <= 6,
        "period_start_weekday", "must be in [0, 6]");
  check(c.log_periods >= 1, "log_periods", "must be >= 1");
  check(c.log_explore >= 0.0 && c.log_explore <= 1.0, "log_explore",
        "must be in [0, 1]");
  check(c.eval_episodes >= 1, "eval_episodes", "must be >= 1");

  const PublisherParams& e = c.env;
  check(e.base_requests_per_window >= 1, "env.base_requests_per_window", "must be >= 1");
  check(e.delay_decay > 0.0 && e.delay_decay <= 1.0, "env.delay_decay",
        "must be in (0, 1]");
  check(e.max_delay_windows >= 0, "env.max_delay_windows", "must be >= 0");
  check(e.drop_prob >= 0.0 && e.drop_prob < 1.0, "env.drop_prob", "must be in [0, 1)");
  check(e.delay_jitter >= 0.0, "env.delay_jitter", "must be >= 0");
  check(e.num_segments >= 1, "env.num_segments", "must be >= 1");
  check(e.segment_dim >= 1, "env.segment_dim", "must be >= 1");
  check(static_cast<int>(e.traffic_shape.size()) == c.num_windows, "env.traffic_shape",
        "must have one entry per window");
  check(static_cast<int>(e.ctr_curve.size()) == c.num_windows, "env.ctr_curve",
        "must have one entry per window");
  for (double v : e.traffic_shape)
    check(v > 0.0, "env.traffic_shape", "entries must be > 0");
  for (double v : e.ctr_curve)
    check(v > 0.0 && v < 1.0, "env.ctr_curve", "entries must be in (0, 1)");
  check(e.segment_mix.size() ==
            static_cast<std::size_t>(c.num_windows) * e.num_segments,
        "env.segment_mix", "must be L x num_segments");
  check(e.segment_vectors.size() ==
            static_cast<std::size_t>(e.num_segments) * e.segment_dim,
        "env.segment_vectors", "must be num_segments x segment_dim");
  check(static_cast<int>(e.ad_vector.size()) == e.segment_dim, "env.ad_vector",
        "must have segment_dim entries");

  const AgentParams& a = c.agent;
  check(!a.value_layers.empty() && a.value_layers.back() == 1, "agent.value_layers",
        "last layer must output a single value");
  check(!a.advantage_layers.empty(), "agent.advantage_layers", "must be non-empty");
  check(a.action_embedding_dim >= 1, "agent.action_embedding_dim", "must be >= 1");
  check(a.batch_size >= 1, "agent.batch_size", "must be >= 1");
  check(a.replay_capacity >= a.batch_size, "agent.replay_capacity",
        "must hold at least one batch");
  check(a.target_refresh_updates >= 1, "agent.target_refresh_updates", "must be >= 1");
  check(a.train_every_steps >= 1, "agent.train_every_steps", "must be >= 1");
  check(a.explore_start >= 0.0 && a.explore_start <= 1.0, "agent.explore_start",
        "must be in [0, 1]");
  check(a.explore_end >= 0.0 && a.explore_end <= 1.0, "agent.explore_end",
        "must be in [0, 1]");
  check(a.explore_fraction > 0.0 && a.explore_fraction <= 1.0,
        "agent.explore_fraction", "must be in (0, 1]");
  check(a.eta_init.size() == 4, "agent.eta_init", "must have 4 entries");
  for (double v : a.eta_init)
    check(v >= 0.0, "agent.eta_init", "entries must be >= 0");

  check(c.sim.holdout_fraction > 0.0 && c.sim.holdout_fraction < 1.0,
        "sim.holdout_fraction", "must be in (0, 1)");
  check(c.sim.epochs >= 1, "sim.epochs", "must be >= 1");

  const BaselineParams& b = c.baselines;
  check(b.kp >= 0.0 && b.ki >= 0.0 && b.kd >= 0.0, "baselines.kp/ki/kd",
        "gains must be non-negative");
  check(b.ctr_groups >= 1, "baselines.ctr_groups", "must be >= 1");
  check(static_cast<int>(b.group_gain_scale.size()) == b.ctr_groups,
        "baselines.group_gain_scale", "must have one entry per CTR group");
  check(b.schedule == "uniform" || b.schedule == "traffic", "baselines.schedule",
        "must be 'uniform' or 'traffic'");
  check(b.rule_margin >= 0.0 && b.rule_margin < 1.0, "baselines.rule_margin",
        "must be in [0, 1)");
  check(b.predictor_epochs >= 1, "baselines.predictor_epochs", "must be >= 1");
  check(b.predictor_ensemble >= 1, "baselines.predictor_ensemble",
        "must be >= 1");
  check(b.bootstrap_periods >= 1, "baselines.bootstrap_periods",
        "must be >= 1");
}

// ---------------------------------------------------------------------------
// JSON binding
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void from_json_env(const json& j, PublisherParams& p) {
  get_if(j, "base_requests_per_window", p.base_requests_per_window);
  get_if(j, "traffic_preset", p.traffic_preset);
  get_if(j, "traffic_shape", p.traffic_shape);
  get_if(j, "ctr_curve", p.ctr_curve);
  get_if(j, "delay_decay", p.delay_decay);
  get_if(j, "max_delay_windows", p.max_delay_windows);
  get_if(j, "drop_prob", p.drop_prob);
  get_if(j, "delay_jitter", p.delay_jitter);
  get_if(j, "seed", p.seed);
  get_if(j, "shift_window", p.shift_window);
  get_if(j, "delay_decay_after", p.delay_decay_after);
  get_if(j, "traffic_scale_after", p.traffic_scale_after);
  get_if(j, "num_segments", p.num_segments);
  get_if(j, "segment_dim", p.segment_dim);
  get_if(j, "segment_ctrs", p.segment_ctrs);
  get_if(j, "segment_mix", p.segment_mix);
  get_if(j, "segment_vectors", p.segment_vectors);
  get_if(j, "ad_vector", p.ad_vector);
}

inline json to_json_env(const PublisherParams& p) {
  return json{{"base_requests_per_window", p.base_requests_per_window},
              {"traffic_preset", p.traffic_preset},
              {"traffic_shape", p.traffic_shape},
              {"ctr_curve", p.ctr_curve},
              {"delay_decay", p.delay_decay},
              {"max_delay_windows", p.max_delay_windows},
              {"drop_prob", p.drop_prob},
              {"delay_jitter", p.delay_jitter},
              {"seed", p.seed},
              {"shift_window", p.shift_window},
              {"delay_decay_after", p.delay_decay_after},
              {"traffic_scale_after", p.traffic_scale_after},
              {"num_segments", p.num_segments},
              {"segment_dim", p.segment_dim},
              {"segment_ctrs", p.segment_ctrs},
              {"segment_mix", p.segment_mix},
              {"segment_vectors", p.segment_vectors},
              {"ad_vector", p.ad_vector}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::get_if;
  ExperimentConfig c;
  get_if(j, "n_target", c.n_target);
  if (j.contains("epsilon"))
    j.at("epsilon").get_to(c.epsilon);
  else
    c.epsilon = c.n_target / 10;
  get_if(j, "num_windows", c.num_windows);
  get_if(j, "window_minutes", c.window_minutes);
  get_if(j, "action_step", c.action_step);
  get_if(j, "gamma", c.gamma);
  get_if(j, "ctr_base", c.ctr_base);
  get_if(j, "ctr_prior_strength", c.ctr_prior_strength);
  get_if(j, "smoothness_c", c.smoothness_c);
  get_if(j, "seed", c.seed);
  get_if(j, "training_episodes", c.training_episodes);
  get_if(j, "period_start_weekday", c.period_start_weekday);
  get_if(j, "log_periods", c.log_periods);
  get_if(j, "log_explore", c.log_explore);
  get_if(j, "eval_episodes", c.eval_episodes);

  if (j.contains("env")) detail::from_json_env(j.at("env"), c.env);

  if (j.contains("state")) {
    const json& s = j.at("state");
    get_if(s, "embedding_dim", c.state.embedding_dim);
    get_if(s, "tail_windows", c.state.tail_windows);
    get_if(s, "ratio_buckets", c.state.ratio_buckets);
    get_if(s, "count_buckets", c.state.count_buckets);
  }
  if (j.contains("agent")) {
    const json& a = j.at("agent");
    get_if(a, "value_layers", c.agent.value_layers);
    get_if(a, "advantage_layers", c.agent.advantage_layers);
    get_if(a, "action_embedding_dim", c.agent.action_embedding_dim);
    get_if(a, "learning_rate", c.agent.learning_rate);
    get_if(a, "eta_learning_rate", c.agent.eta_learning_rate);
    get_if(a, "batch_size", c.agent.batch_size);
    get_if(a, "replay_capacity", c.agent.replay_capacity);
    get_if(a, "target_refresh_updates", c.agent.target_refresh_updates);
    get_if(a, "train_every_steps", c.agent.train_every_steps);
    get_if(a, "learning_starts", c.agent.learning_starts);
    get_if(a, "explore_start", c.agent.explore_start);
    get_if(a, "explore_end", c.agent.explore_end);
    get_if(a, "explore_fraction", c.agent.explore_fraction);
    get_if(a, "eta_init", c.agent.eta_init);
    get_if(a, "eta4_zero", c.agent.eta4_zero);
    get_if(a, "grad_clip", c.agent.grad_clip);
  }
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    get_if(s, "hidden", c.sim.hidden);
    get_if(s, "epochs", c.sim.epochs);
    get_if(s, "learning_rate", c.sim.learning_rate);
    get_if(s, "batch_size", c.sim.batch_size);
    get_if(s, "holdout_fraction", c.sim.holdout_fraction);
    get_if(s, "refresh_learning_rate", c.sim.refresh_learning_rate);
    get_if(s, "refresh_epochs", c.sim.refresh_epochs);
    get_if(s, "clamp_scale", c.sim.clamp_scale);
    get_if(s, "rollout_noise", c.sim.rollout_noise);
  }
  if (j.contains("baselines")) {
    const json& b = j.at("baselines");
    get_if(b, "kp", c.baselines.kp);
    get_if(b, "ki", c.baselines.ki);
    get_if(b, "kd", c.baselines.kd);
    get_if(b, "ctr_groups", c.baselines.ctr_groups);
    get_if(b, "group_gain_scale", c.baselines.group_gain_scale);
    get_if(b, "pid_additive", c.baselines.pid_additive);
    get_if(b, "schedule", c.baselines.schedule);
    get_if(b, "rule_margin", c.baselines.rule_margin);
    get_if(b, "rule_base_scale", c.baselines.rule_base_scale);
    get_if(b, "predictor_layers", c.baselines.predictor_layers);
    get_if(b, "predictor_epochs", c.baselines.predictor_epochs);
    get_if(b, "predictor_learning_rate", c.baselines.predictor_learning_rate);
    get_if(b, "predictor_ensemble", c.baselines.predictor_ensemble);
    get_if(b, "bootstrap_periods", c.baselines.bootstrap_periods);
  }

  detail::materialize_env(c.env, c.num_windows);
  validate(c);
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  return json{
      {"n_target", c.n_target},
      {"epsilon", c.epsilon},
      {"num_windows", c.num_windows},
      {"window_minutes", c.window_minutes},
      {"action_step", c.action_step},
      {"gamma", c.gamma},
      {"ctr_base", c.ctr_base},
      {"ctr_prior_strength", c.ctr_prior_strength},
      {"smoothness_c", c.smoothness_c},
      {"seed", c.seed},
      {"training_episodes", c.training_episodes},
      {"period_start_weekday", c.period_start_weekday},
      {"log_periods", c.log_periods},
      {"log_explore", c.log_explore},
      {"eval_episodes", c.eval_episodes},
      {"env", detail::to_json_env(c.env)},
      {"state",
       {{"embedding_dim", c.state.embedding_dim},
        {"tail_windows", c.state.tail_windows},
        {"ratio_buckets", c.state.ratio_buckets},
        {"count_buckets", c.state.count_buckets}}},
      {"agent",
       {{"value_layers", c.agent.value_layers},
        {"advantage_layers", c.agent.advantage_layers},
        {"action_embedding_dim", c.agent.action_embedding_dim},
        {"learning_rate", c.agent.learning_rate},
        {"eta_learning_rate", c.agent.eta_learning_rate},
        {"batch_size", c.agent.batch_size},
        {"replay_capacity", c.agent.replay_capacity},
        {"target_refresh_updates", c.agent.target_refresh_updates},
        {"train_every_steps", c.agent.train_every_steps},
        {"learning_starts", c.agent.learning_starts},
        {"explore_start", c.agent.explore_start},
        {"explore_end", c.agent.explore_end},
        {"explore_fraction", c.agent.explore_fraction},
        {"eta_init", c.agent.eta_init},
        {"eta4_zero", c.agent.eta4_zero},
        {"grad_clip", c.agent.grad_clip}}},
      {"sim",
       {{"hidden", c.sim.hidden},
        {"epochs", c.sim.epochs},
        {"learning_rate", c.sim.learning_rate},
        {"batch_size", c.sim.batch_size},
        {"holdout_fraction", c.sim.holdout_fraction},
        {"refresh_learning_rate", c.sim.refresh_learning_rate},
        {"refresh_epochs", c.sim.refresh_epochs},
        {"clamp_scale", c.sim.clamp_scale},
        {"rollout_noise", c.sim.rollout_noise}}},
      {"baselines",
       {{"kp", c.baselines.kp},
        {"ki", c.baselines.ki},
        {"kd", c.baselines.kd},
        {"ctr_groups", c.baselines.ctr_groups},
        {"group_gain_scale", c.baselines.group_gain_scale},
        {"pid_additive", c.baselines.pid_additive},
        {"schedule", c.baselines.schedule},
        {"rule_margin", c.baselines.rule_margin},
        {"rule_base_scale", c.baselines.rule_base_scale},
        {"predictor_layers", c.baselines.predictor_layers},
        {"predictor_epochs", c.baselines.predictor_epochs},
        {"predictor_learning_rate", c.baselines.predictor_learning_rate},
        {"predictor_ensemble", c.baselines.predictor_ensemble},
        {"bootstrap_periods", c.baselines.bootstrap_periods}}}};
}

// Applies a dotted-path override ("env.delay_decay=0.5") onto raw JSON.
// Values parse as JSON when possible, otherwise as strings.
inline void apply_override(json& j, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw FormatError("override must look like key=value, got '" + kv + "'");
  std::string path = kv.substr(0, eq);
  std::string value = kv.substr(eq + 1);

  json* node = &j;
  std::size_t pos = 0;
  while (true) {
    std::size_t dot = path.find('.', pos);
    std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (key.empty()) throw FormatError("empty key segment in override '" + kv + "'");
    if (dot == std::string::npos) {
      json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      break;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config parse failure in " + path + ": " + e.what());
  }
  for (const std::string& kv : overrides) apply_override(j, kv);
  return config_from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out << config_to_json(c).dump(2) << "\n";
}

// FNV-1a over the canonical JSON dump; identifies a config across artifacts.
inline std::uint64_t config_digest(const ExperimentConfig& c) {
  std::string s = config_to_json(c).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Action grid
// ---------------------------------------------------------------------------

inline std::vector<Action> action_space(const ExperimentConfig& c) {
  int n = c.num_actions();
  std::vector<Action> actions(n);
  for (int i = 0; i < n; ++i) actions[i] = {i, i * c.action_step};
  return actions;
}

inline Action snap_to_grid(double probability, const ExperimentConfig& c) {
  int n = c.num_actions();
  int idx = static_cast<int>(std::llround(probability / c.action_step));
  idx = std::clamp(idx, 0, n - 1);
  return {idx, idx * c.action_step};
}

}  // namespace rltp
