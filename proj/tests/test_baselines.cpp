#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "rltp/baselines.hpp"
#include "rltp/env.hpp"

namespace fs = std::filesystem;
using namespace rltp;

namespace {

// Half-hour windows, no delivery delay at all: observed == eventual.
ExperimentConfig no_delay_config() {
  json j;
  j["num_windows"] = 48;
  j["window_minutes"] = 30;
  j["n_target"] = 2600;
  j["epsilon"] = 260;
  j["env"] = {{"traffic_preset", "flat"},
              {"delay_decay", 1.0},
              {"max_delay_windows", 0},
              {"drop_prob", 0.0}};
  return config_from_json(j);
}

// Exactly half of each window's fills display one window later.
ExperimentConfig half_delay_config() {
  ExperimentConfig cfg = no_delay_config();
  json j;
  j["num_windows"] = 48;
  j["window_minutes"] = 30;
  j["n_target"] = 2600;
  j["epsilon"] = 260;
  j["env"] = {{"traffic_preset", "flat"},
              {"delay_decay", 1.0},
              {"max_delay_windows", 1},
              {"drop_prob", 0.0}};
  return config_from_json(j);
}

// Long geometric tails plus dropped fills: the regime the correction layers
// are for.
ExperimentConfig heavy_delay_config() {
  json j;
  j["num_windows"] = 48;
  j["window_minutes"] = 30;
  j["n_target"] = 2600;
  j["epsilon"] = 260;
  j["env"] = {{"traffic_preset", "flat"},
              {"delay_decay", 0.9},
              {"max_delay_windows", 24},
              {"drop_prob", 0.1}};
  return config_from_json(j);
}

std::vector<EpisodeLog> constant_logs(const ExperimentConfig& cfg, double prob,
                                      int periods, std::uint64_t seed) {
  PublisherEnv env(cfg);
  std::vector<EpisodeLog> logs;
  for (int p = 0; p < periods; ++p) {
    env.reset(combine_seed(seed, static_cast<std::uint64_t>(p)), p);
    Action a = snap_to_grid(prob, cfg);
    for (int i = 0; i < cfg.num_windows; ++i) env.step(a);
    logs.push_back(env.log());
  }
  return logs;
}

LogRow make_row(int period, int window, long requests, long fills,
                long observed, long eventual, double action = 0.1) {
  LogRow r;
  r.period = period;
  r.window = window;
  r.requests = requests;
  r.fills = fills;
  r.observed = observed;
  r.clicks = 0;
  r.action = action;
  r.eventual = eventual;
  return r;
}

WindowOutcome make_outcome(int window, long observed, double action) {
  WindowOutcome o;
  o.window = window;
  o.observed = observed;
  o.action = action;
  return o;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("rltp_baselines_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct EpisodeMetrics {
  double completion = 0.0;
  std::vector<double> actions;
};

template <class Fn>
EpisodeMetrics run_episode(const ExperimentConfig& cfg, std::uint64_t seed,
                           Fn policy) {
  PublisherEnv env(cfg);
  env.reset(seed, 0);
  DeliveryStatus status;
  EpisodeMetrics m;
  for (int i = 0; i < cfg.num_windows; ++i) {
    Action a = policy(status, i);
    m.actions.push_back(a.probability);
    status.observe(env.step(a));
  }
  m.completion = static_cast<double>(status.n_cum()) /
                 static_cast<double>(cfg.n_target);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Delay mapping
// ---------------------------------------------------------------------------

TEST(DelayMapping, NoDelayGivesUnitRatios) {
  ExperimentConfig cfg = no_delay_config();
  auto logs = constant_logs(cfg, 0.1, 5, 11);
  DelayMapping m = build_delay_mapping(logs, cfg.num_windows);
  ASSERT_EQ(static_cast<int>(m.ratio.size()), cfg.num_windows);
  for (double r : m.ratio) EXPECT_DOUBLE_EQ(r, 1.0);
}

TEST(DelayMapping, HalfNextWindowDelayDoublesEarlyRatio) {
  ExperimentConfig cfg = half_delay_config();
  auto logs = constant_logs(cfg, 0.1, 20, 13);
  DelayMapping m = build_delay_mapping(logs, cfg.num_windows);
  ASSERT_EQ(static_cast<int>(m.ratio.size()), cfg.num_windows);

  // Window 0 observes only the half that displays immediately.
  EXPECT_NEAR(m.ratio[0], 2.0, 0.1);
  // Steady state: each window sees half of its own fills plus half of the
  // previous window's, so observed ~= eventual.
  for (int w = 4; w + 4 < cfg.num_windows; ++w) {
    EXPECT_GE(m.ratio[w], 1.0);
    EXPECT_LE(m.ratio[w], 1.1);
  }
  // The final window's tail is truncated; the clamp pins the ratio at one.
  EXPECT_DOUBLE_EQ(m.ratio.back(), 1.0);
}

TEST(DelayMapping, ZeroObservedWindowsInheritNeighborAverage) {
  EpisodeLog ep;
  ep.period = 0;
  ep.rows.push_back(make_row(0, 0, 100, 10, 10, 12));  // ratio 1.2
  ep.rows.push_back(make_row(0, 1, 100, 0, 0, 0));     // undefined
  ep.rows.push_back(make_row(0, 2, 100, 10, 10, 10));  // ratio 1.0
  DelayMapping m = build_delay_mapping({ep}, 3);
  EXPECT_DOUBLE_EQ(m.ratio[0], 1.2);
  EXPECT_DOUBLE_EQ(m.ratio[1], 1.1);  // mean of the two nearest neighbors
  EXPECT_DOUBLE_EQ(m.ratio[2], 1.0);
}

TEST(DelayMapping, EdgeWindowInheritsOneSidedNeighbor) {
  EpisodeLog ep;
  ep.period = 0;
  ep.rows.push_back(make_row(0, 0, 100, 0, 0, 0));
  ep.rows.push_back(make_row(0, 1, 100, 10, 10, 13));
  DelayMapping m = build_delay_mapping({ep}, 2);
  EXPECT_DOUBLE_EQ(m.ratio[0], 1.3);
  EXPECT_DOUBLE_EQ(m.ratio[1], 1.3);
}

TEST(DelayMapping, AllZeroLogsThrow) {
  EpisodeLog ep;
  ep.period = 0;
  ep.rows.push_back(make_row(0, 0, 100, 0, 0, 0));
  ep.rows.push_back(make_row(0, 1, 100, 0, 0, 0));
  EXPECT_THROW(build_delay_mapping({ep}, 2), ValidationError);
}

TEST(DelayMapping, RatiosNeverBelowOne) {
  ExperimentConfig cfg = heavy_delay_config();
  for (std::uint64_t seed : {3ull, 17ull, 94ull}) {
    auto logs = constant_logs(cfg, 0.15, 6, seed);
    DelayMapping m = build_delay_mapping(logs, cfg.num_windows);
    for (double r : m.ratio) EXPECT_GE(r, 1.0);
  }
}

// ---------------------------------------------------------------------------
// Base probability
// ---------------------------------------------------------------------------

TEST(BaseProbability, HandComputedValue) {
  // Mean requests per period 150, land rate 27/30 = 0.9, target 27:
  // p = 27 / (150 * 0.9) = 0.2 exactly.
  json j;
  j["num_windows"] = 2;
  j["window_minutes"] = 30;
  j["n_target"] = 27;
  j["epsilon"] = 3;
  ExperimentConfig cfg = config_from_json(j);

  EpisodeLog p0, p1;
  p0.period = 0;
  p0.rows.push_back(make_row(0, 0, 100, 20, 18, 18));
  p0.rows.push_back(make_row(0, 1, 50, 10, 9, 9));
  p1.period = 1;
  p1.rows.push_back(make_row(1, 0, 90, 0, 0, 0));
  p1.rows.push_back(make_row(1, 1, 60, 0, 0, 0));
  EXPECT_DOUBLE_EQ(base_probability({p0, p1}, cfg), 0.2);
}

TEST(BaseProbability, ErrorsOnDegenerateLogs) {
  ExperimentConfig cfg = no_delay_config();
  EXPECT_THROW(base_probability({}, cfg), ValidationError);

  EpisodeLog ep;
  ep.period = 0;
  ep.rows.push_back(make_row(0, 0, 100, 0, 0, 0));
  EXPECT_THROW(base_probability({ep}, cfg), ValidationError);
}

// ---------------------------------------------------------------------------
// Rule-based adjusting
// ---------------------------------------------------------------------------

TEST(RuleBased, ColdStartServesScaledBase) {
  ExperimentConfig cfg = no_delay_config();
  cfg.baselines.rule_base_scale = 2.0;
  DelayMapping m;
  m.ratio.assign(cfg.num_windows, 1.0);
  DeliveryStatus status;
  Action a = rule_based_policy(m, 0.15, status, cfg);
  EXPECT_DOUBLE_EQ(a.probability, 0.3);
}

TEST(RuleBased, ProjectionAtThresholdShutsOff) {
  ExperimentConfig cfg = no_delay_config();
  cfg.baselines.rule_base_scale = 1.0;
  DelayMapping m;
  m.ratio.assign(cfg.num_windows, 2.0);
  DeliveryStatus status;
  // Projected = 1300 * 2.0 = 2600 >= n_target -> off.
  status.observe(make_outcome(0, 1300, 0.1));
  Action a = rule_based_policy(m, 0.1, status, cfg);
  EXPECT_EQ(a.index, 0);
  EXPECT_DOUBLE_EQ(a.probability, 0.0);
}

TEST(RuleBased, BelowThresholdKeepsServing) {
  ExperimentConfig cfg = no_delay_config();
  cfg.baselines.rule_base_scale = 1.0;
  DelayMapping m;
  m.ratio.assign(cfg.num_windows, 2.0);
  DeliveryStatus status;
  status.observe(make_outcome(0, 1299, 0.1));  // projected 2598 < 2600
  Action a = rule_based_policy(m, 0.1, status, cfg);
  EXPECT_DOUBLE_EQ(a.probability, 0.1);
}

TEST(RuleBased, MarginShutsOffEarlier) {
  ExperimentConfig cfg = no_delay_config();
  cfg.baselines.rule_base_scale = 1.0;
  cfg.baselines.rule_margin = 0.1;  // threshold 2340
  DelayMapping m;
  m.ratio.assign(cfg.num_windows, 1.0);
  DeliveryStatus status;
  status.observe(make_outcome(0, 2340, 0.1));
  EXPECT_DOUBLE_EQ(rule_based_policy(m, 0.1, status, cfg).probability, 0.0);
}

TEST(RuleBased, MappingLengthMismatchThrows) {
  ExperimentConfig cfg = no_delay_config();
  DelayMapping m;
  m.ratio.assign(cfg.num_windows - 1, 1.0);
  DeliveryStatus status;
  EXPECT_THROW(rule_based_policy(m, 0.1, status, cfg), DimensionError);
}

TEST(RuleBased, StaleMappingOnDelayedEnvOvershootsSubstantially) {
  ExperimentConfig cfg = heavy_delay_config();
  cfg.baselines.rule_base_scale = 2.0;
  auto logs = constant_logs(cfg, 0.1, 10, 5);
  const double base = base_probability(logs, cfg);

  // A mapping that pretends nothing is delayed: the projection only counts
  // what has landed, so the rule keeps serving long past the real target.
  DelayMapping stale;
  stale.ratio.assign(cfg.num_windows, 1.0);

  EpisodeMetrics m = run_episode(cfg, 1234, [&](const DeliveryStatus& s, int) {
    return rule_based_policy(stale, base, s, cfg);
  });
  EXPECT_GT(m.completion, 1.10);
}

// ---------------------------------------------------------------------------
// PID controller
// ---------------------------------------------------------------------------

TEST(Pid, HandComputedTwoStepScore) {
  json j;
  j["num_windows"] = 3;
  j["window_minutes"] = 30;
  j["n_target"] = 100;
  j["epsilon"] = 10;
  ExperimentConfig cfg = config_from_json(j);

  PidGains g{1.0, 0.5, 0.2};
  PidState st;
  st.schedule = {10.0, 10.0, 10.0};

  // Step 1: e1 = (10 - 0)/100 = 0.1; score = 0.1 + 0.5*0.1 + 0.2*0.1 = 0.17.
  EXPECT_NEAR(pid_adjust(st, g, 0.0, 0, 1.0, cfg), 0.17, 1e-12);
  // Step 2: e2 = 0.05; score = 0.05 + 0.5*0.15 + 0.2*(-0.05) = 0.115.
  EXPECT_NEAR(pid_adjust(st, g, 5.0, 1, 1.0, cfg), 0.115, 1e-12);
}

TEST(Pid, AllZeroGainsGiveZeroProbability) {
  ExperimentConfig cfg = no_delay_config();
  PidGains g{0.0, 0.0, 0.0};
  PidState st = make_pid_state(cfg);
  EXPECT_DOUBLE_EQ(pid_adjust(st, g, 3.0, 0, 0.5, cfg), 0.0);
}

TEST(Pid, PerfectTrackingDropsMultiplicativeFormToZero) {
  ExperimentConfig cfg = no_delay_config();
  PidGains g{1.0, 0.5, 0.2};
  PidState st = make_pid_state(cfg);
  // Prediction equal to the schedule leaves every error at zero.
  EXPECT_DOUBLE_EQ(pid_adjust(st, g, st.schedule[0], 0, 0.4, cfg), 0.0);
  EXPECT_DOUBLE_EQ(pid_adjust(st, g, st.schedule[1], 1, 0.4, cfg), 0.0);
}

TEST(Pid, AdditiveFormKeepsBaseUnderPerfectTracking) {
  ExperimentConfig cfg = no_delay_config();
  cfg.baselines.pid_additive = true;
  PidGains g{1.0, 0.5, 0.2};
  PidState st = make_pid_state(cfg);
  EXPECT_DOUBLE_EQ(pid_adjust(st, g, st.schedule[0], 0, 0.4, cfg), 0.4);
}

TEST(Pid, IntegralIsExactRunningErrorSum) {
  ExperimentConfig cfg = no_delay_config();
  PidGains g{0.3, 0.7, 0.2};
  PidState st = make_pid_state(cfg);
  Rng rng = derive_stream(99, 1);
  std::uniform_real_distribution<double> uni(0.0, 120.0);

  double expected = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int w = k % cfg.num_windows;
    const double predicted = uni(rng);
    expected += st.schedule[w] / cfg.n_target - predicted / cfg.n_target;
    pid_adjust(st, g, predicted, w, 0.5, cfg);
    EXPECT_NEAR(st.integral, expected, 1e-12);
  }
  EXPECT_EQ(st.steps, 100);
}

TEST(Pid, NegativeScoreClampsToZero) {
  ExperimentConfig cfg = no_delay_config();
  PidGains g{1.0, 1.0, 0.0};
  PidState st = make_pid_state(cfg);
  // Massive over-delivery prediction drives the score negative.
  EXPECT_DOUBLE_EQ(pid_adjust(st, g, 1e6, 0, 0.5, cfg), 0.0);
}

TEST(Pid, BadWindowOrNegativePredictionThrows) {
  ExperimentConfig cfg = no_delay_config();
  PidGains g;
  PidState st = make_pid_state(cfg);
  EXPECT_THROW(pid_adjust(st, g, 1.0, -1, 0.5, cfg), ValidationError);
  EXPECT_THROW(pid_adjust(st, g, 1.0, cfg.num_windows, 0.5, cfg),
               ValidationError);
  EXPECT_THROW(pid_adjust(st, g, -1.0, 0, 0.5, cfg), ValidationError);
}

// ---------------------------------------------------------------------------
// Expected schedule
// ---------------------------------------------------------------------------

TEST(Schedule, UniformSumsToTargetWithEqualShares) {
  ExperimentConfig cfg = no_delay_config();
  std::vector<double> s = expected_schedule(cfg);
  ASSERT_EQ(static_cast<int>(s.size()), cfg.num_windows);
  double total = 0.0;
  for (double v : s) {
    EXPECT_DOUBLE_EQ(v, static_cast<double>(cfg.n_target) / cfg.num_windows);
    total += v;
  }
  EXPECT_NEAR(total, static_cast<double>(cfg.n_target), 1e-9);
}

TEST(Schedule, TrafficModeFollowsShapeAndSumsToTarget) {
  json j;
  j["num_windows"] = 48;
  j["window_minutes"] = 30;
  j["n_target"] = 2600;
  j["epsilon"] = 260;
  j["env"] = {{"traffic_preset", "two_peak"}};
  j["baselines"] = {{"schedule", "traffic"}};
  ExperimentConfig cfg = config_from_json(j);

  std::vector<double> s = expected_schedule(cfg);
  double total = 0.0;
  for (double v : s) total += v;
  EXPECT_NEAR(total, static_cast<double>(cfg.n_target), 1e-9);
  // Shares are proportional to the traffic shape.
  const double k0 = s[0] / cfg.env.traffic_shape[0];
  for (int i = 1; i < cfg.num_windows; ++i)
    EXPECT_NEAR(s[i] / cfg.env.traffic_shape[i], k0, 1e-9);
}

// ---------------------------------------------------------------------------
// Actual-count predictor
// ---------------------------------------------------------------------------

TEST(Predictor, IdentityPassesObservedThrough) {
  ActualCountPredictor p;
  p.identity = true;
  EXPECT_TRUE(p.trained());
  EXPECT_DOUBLE_EQ(p.predict(37.0, 0.4, 0.2), 37.0);
}

TEST(Predictor, UnfittedPredictThrows) {
  ActualCountPredictor p;
  EXPECT_FALSE(p.trained());
  EXPECT_THROW(p.predict(1.0, 0.1, 0.1), ConfigurationError);
}

TEST(Predictor, FitIsDeterministicForASeed) {
  ExperimentConfig cfg = heavy_delay_config();
  cfg.baselines.predictor_epochs = 10;
  cfg.baselines.predictor_ensemble = 2;
  auto logs = constant_logs(cfg, 0.12, 3, 7);
  ActualCountPredictor a = fit_actual_predictor(cfg, logs, 42);
  ActualCountPredictor b = fit_actual_predictor(cfg, logs, 42);
  EXPECT_TRUE(a == b);
  ASSERT_EQ(a.nets.size(), 2u);
}

TEST(Predictor, FittedBeatsRawObservedOnDelayedLogs) {
  ExperimentConfig cfg = heavy_delay_config();
  const double levels[] = {0.08, 0.10, 0.12, 0.14, 0.16};
  std::vector<EpisodeLog> logs;
  PublisherEnv env(cfg);
  for (int p = 0; p < 30; ++p) {
    env.reset(combine_seed(19, static_cast<std::uint64_t>(p)), p);
    Action a = snap_to_grid(levels[p % 5], cfg);
    for (int i = 0; i < cfg.num_windows; ++i) env.step(a);
    logs.push_back(env.log());
  }
  ActualCountPredictor pred = fit_actual_predictor(cfg, logs, 42);

  // Fresh episodes: the corrected counts must track eventual displays better
  // than the uncorrected observations do.
  double pred_mae = 0.0, obs_mae = 0.0, n = 0.0;
  for (int p = 0; p < 5; ++p) {
    env.reset(combine_seed(777, static_cast<std::uint64_t>(p)), p);
    Action a = snap_to_grid(0.12, cfg);
    for (int i = 0; i < cfg.num_windows; ++i) env.step(a);
    double cum = 0.0;
    for (const LogRow& r : env.log().rows) {
      cum += static_cast<double>(r.observed);
      const double est = pred.predict(static_cast<double>(r.observed),
                                      cum / cfg.n_target, r.action);
      pred_mae += std::abs(est - static_cast<double>(r.eventual));
      obs_mae += std::abs(static_cast<double>(r.observed) -
                          static_cast<double>(r.eventual));
      n += 1.0;
    }
  }
  EXPECT_LT(pred_mae / n, obs_mae / n);
}

TEST(Predictor, EmptyLogsThrow) {
  ExperimentConfig cfg = no_delay_config();
  EXPECT_THROW(fit_actual_predictor(cfg, {}, 1), ValidationError);
}

// ---------------------------------------------------------------------------
// Prediction-then-adjusting
// ---------------------------------------------------------------------------

TEST(Pta, CtrGroupBoundaries) {
  PtaPolicy p;
  p.group_edges = {0.03, 0.06};
  EXPECT_EQ(ctr_group(p, 0.01), 0);
  EXPECT_EQ(ctr_group(p, 0.03), 1);
  EXPECT_EQ(ctr_group(p, 0.045), 1);
  EXPECT_EQ(ctr_group(p, 0.06), 2);
  EXPECT_EQ(ctr_group(p, 0.25), 2);
}

TEST(Pta, HigherGainGroupRaisesProbabilityForSameShortfall) {
  ExperimentConfig cfg = no_delay_config();
  PidGains low{0.8, 0.8 * 60.0, 0.08};
  PidGains high{1.2, 1.2 * 60.0, 0.12};
  PidState st_low = make_pid_state(cfg);
  PidState st_high = make_pid_state(cfg);
  // Identical shortfall histories; the hotter gain set must push at least as
  // hard (it is strictly hotter before the clamp saturates).
  const double predicted = 10.0;
  const double a_low = pid_adjust(st_low, low, predicted, 0, 0.2, cfg);
  const double a_high = pid_adjust(st_high, high, predicted, 0, 0.2, cfg);
  EXPECT_GE(a_high, a_low);
  EXPECT_GT(a_high, 0.0);
}

TEST(Pta, MissingPredictorThrows) {
  ExperimentConfig cfg = no_delay_config();
  PtaPolicy p;
  p.schedule = expected_schedule(cfg);
  p.base_prob = 0.1;
  p.group_gains.push_back(PidGains{});
  PidState st = make_pid_state(cfg);
  DeliveryStatus status;
  EXPECT_THROW(prediction_then_adjusting(p, st, status, cfg),
               ConfigurationError);
}

TEST(Pta, ActionsStayOnGridAndInRange) {
  ExperimentConfig cfg = heavy_delay_config();
  auto logs = constant_logs(cfg, 0.12, 10, 23);
  BaselineArtifact art = build_baselines(cfg, logs, 42);

  PidState st = make_pid_state(cfg);
  EpisodeMetrics m = run_episode(cfg, 555, [&](const DeliveryStatus& s, int) {
    return prediction_then_adjusting(art.pta, st, s, cfg);
  });
  for (double a : m.actions) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    const double steps = a / cfg.action_step;
    EXPECT_NEAR(steps, std::round(steps), 1e-9);
  }
}

TEST(Pta, IdentityPredictorOnNoDelayEnvReducesToPlainPid) {
  ExperimentConfig cfg = no_delay_config();
  cfg.baselines.ctr_groups = 1;
  cfg.baselines.group_gain_scale = {1.0};

  PtaPolicy p;
  p.predictor.identity = true;
  p.schedule = expected_schedule(cfg);
  p.base_prob = 0.12;
  p.group_gains.push_back(
      PidGains{cfg.baselines.kp, cfg.baselines.ki, cfg.baselines.kd});

  PidState st_pta = make_pid_state(cfg);
  EpisodeMetrics via_pta =
      run_episode(cfg, 808, [&](const DeliveryStatus& s, int) {
        return prediction_then_adjusting(p, st_pta, s, cfg);
      });

  // Manual loop: plain PID on the raw observed counts, same gains and env.
  PidGains g{cfg.baselines.kp, cfg.baselines.ki, cfg.baselines.kd};
  PidState st_pid = make_pid_state(cfg);
  EpisodeMetrics via_pid =
      run_episode(cfg, 808, [&](const DeliveryStatus& s, int i) {
        if (i == 0) return snap_to_grid(p.base_prob, cfg);
        const double observed_prev =
            static_cast<double>(s.observed_seq().back());
        const double prob =
            pid_adjust(st_pid, g, observed_prev, i - 1, p.base_prob, cfg);
        return snap_to_grid(prob, cfg);
      });

  ASSERT_EQ(via_pta.actions.size(), via_pid.actions.size());
  for (std::size_t i = 0; i < via_pta.actions.size(); ++i)
    EXPECT_DOUBLE_EQ(via_pta.actions[i], via_pid.actions[i]);
}

TEST(Pta, OracleCountsWithTunedGainsBeatStaleRule) {
  // The two-stage controller fed perfect actual counts must finish closer to
  // the target than the stale-mapping rule on the same delayed env.
  ExperimentConfig cfg = heavy_delay_config();
  auto logs = constant_logs(cfg, 0.12, 10, 29);
  const double base = base_probability(logs, cfg);

  DelayMapping stale;
  stale.ratio.assign(cfg.num_windows, 1.0);

  PidGains g{cfg.baselines.kp, cfg.baselines.ki, cfg.baselines.kd};
  double pid_dev = 0.0, rule_dev = 0.0;
  for (std::uint64_t e = 0; e < 3; ++e) {
    PublisherEnv env(cfg);
    env.reset(combine_seed(4242, e), static_cast<std::int64_t>(e));
    DeliveryStatus status;
    PidState st = make_pid_state(cfg);
    for (int i = 0; i < cfg.num_windows; ++i) {
      Action a;
      if (i == 0) {
        a = snap_to_grid(base, cfg);
      } else {
        const double oracle =
            static_cast<double>(env.log().rows[i - 1].eventual);
        a = snap_to_grid(pid_adjust(st, g, oracle, i - 1, base, cfg), cfg);
      }
      status.observe(env.step(a));
    }
    pid_dev += std::abs(static_cast<double>(status.n_cum()) / cfg.n_target - 1.0);

    EpisodeMetrics rule = run_episode(
        cfg, combine_seed(4242, e), [&](const DeliveryStatus& s, int) {
          return rule_based_policy(stale, base, s, cfg);
        });
    rule_dev += std::abs(rule.completion - 1.0);
  }
  EXPECT_LT(pid_dev / 3.0, rule_dev / 3.0);
}

// ---------------------------------------------------------------------------
// Artifact
// ---------------------------------------------------------------------------

TEST(BaselineArtifactIo, RoundTripRestoresEverything) {
  ExperimentConfig cfg = heavy_delay_config();
  cfg.baselines.predictor_epochs = 10;
  cfg.baselines.predictor_ensemble = 2;
  auto logs = constant_logs(cfg, 0.12, 4, 31);
  BaselineArtifact art = build_baselines(cfg, logs, 42);
  EXPECT_EQ(art.cfg_digest, config_digest(cfg));

  TempDir dir;
  const std::string path = dir.file("baselines.bin");
  save_baselines(path, art);
  BaselineArtifact back = load_baselines(path);
  EXPECT_TRUE(back == art);

  const std::string again = dir.file("baselines2.bin");
  save_baselines(again, back);
  EXPECT_EQ(slurp(path), slurp(again));
}

TEST(BaselineArtifactIo, IdentityPredictorRoundTrips) {
  ExperimentConfig cfg = no_delay_config();
  auto logs = constant_logs(cfg, 0.1, 2, 3);
  BaselineArtifact art;
  art.cfg_digest = config_digest(cfg);
  art.mapping = build_delay_mapping(logs, cfg.num_windows);
  art.rule_base_prob = base_probability(logs, cfg);
  art.pta.predictor.identity = true;
  art.pta.schedule = expected_schedule(cfg);
  art.pta.base_prob = art.rule_base_prob;
  art.pta.group_gains.push_back(PidGains{});

  TempDir dir;
  const std::string path = dir.file("identity.bin");
  save_baselines(path, art);
  BaselineArtifact back = load_baselines(path);
  EXPECT_TRUE(back == art);
  EXPECT_TRUE(back.pta.predictor.identity);
  EXPECT_TRUE(back.pta.predictor.nets.empty());
}
