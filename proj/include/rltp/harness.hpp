#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rltp/agent.hpp"
#include "rltp/baselines.hpp"
#include "rltp/env.hpp"
#include "rltp/simulator.hpp"

namespace rltp {

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

// One window of the evaluation trend, averaged over the evaluation episodes.
// `completion` and `ctr` are cumulative-so-far ratios; `observed`, `clicks`
// and `reward` are the window's own means, so column sums reproduce the
// period totals exactly.
struct TrendRow {
  int window = 0;
  double completion = 0.0;
  double ctr = 0.0;
  double action = 0.0;
  double observed = 0.0;
  double clicks = 0.0;
  double reward = 0.0;

  friend bool operator==(const TrendRow&, const TrendRow&) = default;
};

struct EvalReport {
  double completion_rate = 0.0;  // delivered impressions / target
  double ctr = 0.0;              // clicks / delivered impressions (0 if none)
  double cumulative_reward = 0.0;
  double smoothness_cv = 0.0;  // CV of the mean per-window delivered counts
  double pending_tail = 0.0;   // mean fills still in flight at period end
  double never_displayed = 0.0;  // mean fills that never landed
  int episodes = 0;
  std::vector<TrendRow> per_window_trend;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline double trend_cv(const std::vector<TrendRow>& trend) {
  if (trend.empty()) return 0.0;
  double mean = 0.0;
  for (const TrendRow& t : trend) mean += t.observed;
  mean /= static_cast<double>(trend.size());
  if (mean <= 0.0) return 0.0;
  double var = 0.0;
  for (const TrendRow& t : trend)
    var += (t.observed - mean) * (t.observed - mean);
  var /= static_cast<double>(trend.size());
  return std::sqrt(var) / mean;
}

// ---------------------------------------------------------------------------
// Trend files
// ---------------------------------------------------------------------------

inline constexpr const char* kTrendHeader =
    "window\taction\tobserved\tclicks\tcompletion\tctr\treward";

inline void write_trend(const std::string& path,
                        const std::vector<TrendRow>& trend) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open trend file for writing: " + path);
  out << kTrendHeader << '\n';
  out.precision(17);
  for (const TrendRow& t : trend)
    out << t.window << '\t' << t.action << '\t' << t.observed << '\t'
        << t.clicks << '\t' << t.completion << '\t' << t.ctr << '\t'
        << t.reward << '\n';
  if (!out) throw FormatError("short write: " + path);
}

inline std::vector<TrendRow> read_trend(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open trend file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kTrendHeader)
    throw FormatError("bad trend header in " + path);
  std::vector<TrendRow> trend;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    TrendRow t;
    if (!(is >> t.window >> t.action >> t.observed >> t.clicks >>
          t.completion >> t.ctr >> t.reward))
      throw FormatError("bad trend row in " + path + ": " + line);
    trend.push_back(t);
  }
  return trend;
}

// Re-derives the headline metrics from a trend alone; the consistency gate
// for any report/file pair. Completion and reward come from column sums,
// CTR from the final cumulative ratio, smoothness from the observed column.
inline EvalReport recompute_from_trend(const std::vector<TrendRow>& trend,
                                       const ExperimentConfig& cfg) {
  EvalReport r;
  double obs = 0.0, reward = 0.0;
  for (const TrendRow& t : trend) {
    obs += t.observed;
    reward += t.reward;
  }
  r.completion_rate = obs / static_cast<double>(cfg.n_target);
  r.ctr = trend.empty() ? 0.0 : trend.back().ctr;
  r.cumulative_reward = reward;
  r.smoothness_cv = trend_cv(trend);
  r.per_window_trend = trend;
  return r;
}

// ---------------------------------------------------------------------------
// Policies under evaluation
// ---------------------------------------------------------------------------

// A policy maps the delivery status to the next window's selection
// probability. Sources mint a fresh policy per episode so stateful
// controllers (the PID stage) restart cleanly.
using WindowPolicy = std::function<Action(const DeliveryStatus&, int)>;
using PolicySource = std::function<WindowPolicy(std::int64_t episode)>;

// Greedy argmax-Q policy over a trained agent. The caller keeps the agent and
// config alive for the source's lifetime.
inline PolicySource greedy_policy(const DqnAgent& agent,
                                  const ExperimentConfig& cfg) {
  if (FeatureLayout::make(cfg) != agent.layout())
    throw CompatibilityError(
        "policy feature layout does not match the evaluation config");
  return [&agent, &cfg](std::int64_t episode) -> WindowPolicy {
    return [&agent, &cfg, episode](const DeliveryStatus& status, int i) {
      const StateVector s =
          build_state(agent.layout(), cfg, status, {episode, i});
      const std::vector<double> q = agent.q_values(s);
      int best = 0;
      for (int a = 1; a < static_cast<int>(q.size()); ++a)
        if (q[a] > q[best]) best = a;
      return Action{best, best * cfg.action_step};
    };
  };
}

inline PolicySource rule_policy(const BaselineArtifact& art,
                                const ExperimentConfig& cfg) {
  return [&art, &cfg](std::int64_t) -> WindowPolicy {
    return [&art, &cfg](const DeliveryStatus& status, int) {
      return rule_based_policy(art.mapping, art.rule_base_prob, status, cfg);
    };
  };
}

inline PolicySource pta_policy(const BaselineArtifact& art,
                               const ExperimentConfig& cfg) {
  return [&art, &cfg](std::int64_t) -> WindowPolicy {
    auto st = std::make_shared<PidState>(make_pid_state(cfg));
    return [&art, &cfg, st](const DeliveryStatus& status, int) {
      return prediction_then_adjusting(art.pta, *st, status, cfg);
    };
  };
}

inline PolicySource constant_policy(double probability,
                                    const ExperimentConfig& cfg) {
  const Action a = snap_to_grid(probability, cfg);
  return [a](std::int64_t) -> WindowPolicy {
    return [a](const DeliveryStatus&, int) { return a; };
  };
}

inline PolicySource zero_policy(const ExperimentConfig& cfg) {
  return constant_policy(0.0, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation loop
// ---------------------------------------------------------------------------

// Runs the online decision loop: before every window a hard guard checks the
// delivered total and the clock — at the target, or on the final window, the
// probability is forced to zero regardless of the policy — then the policy
// picks the action. Metrics average over seeded episodes; fused rewards use
// the configured reference weights so different policies stay comparable.
template <class EnvT>
EvalReport evaluate(const PolicySource& source, EnvT& env,
                    const ExperimentConfig& cfg, int episodes,
                    std::uint64_t seed) {
  if (episodes < 1)
    throw ValidationError("evaluation needs at least one episode");
  const int L = cfg.num_windows;
  const Action zero = snap_to_grid(0.0, cfg);
  std::array<double, 4> eta{};
  for (int k = 0; k < 4; ++k) eta[k] = cfg.agent.eta_init[k];
  if (cfg.agent.eta4_zero) eta[3] = 0.0;

  EvalReport rep;
  rep.episodes = episodes;
  rep.per_window_trend.assign(L, TrendRow{});
  for (int i = 0; i < L; ++i) rep.per_window_trend[i].window = i;

  for (int e = 0; e < episodes; ++e) {
    WindowPolicy policy = source(e);
    env.reset(combine_seed(seed, static_cast<std::uint64_t>(e)), e);
    DeliveryStatus status;
    double cum_reward = 0.0;
    for (int i = 0; i < L; ++i) {
      const Action a = (status.n_cum() >= cfg.n_target || i == L - 1)
                           ? zero
                           : policy(status, i);
      const std::int64_t prev_n = status.n_cum();
      const WindowOutcome out = env.step(a);
      status.observe(out);
      const RewardBreakdown rb =
          reward_breakdown(status.n_cum(), prev_n, status.clicks_cum(), cfg);
      const double r = fuse_reward(rb, eta);
      cum_reward += r;

      TrendRow& t = rep.per_window_trend[i];
      t.action += a.probability;
      t.observed += static_cast<double>(out.observed);
      t.clicks += static_cast<double>(out.clicks);
      t.completion += static_cast<double>(status.n_cum()) /
                      static_cast<double>(cfg.n_target);
      t.ctr += status.n_cum() > 0
                   ? static_cast<double>(status.clicks_cum()) /
                         static_cast<double>(status.n_cum())
                   : 0.0;
      t.reward += r;
    }
    rep.completion_rate += static_cast<double>(status.n_cum()) /
                           static_cast<double>(cfg.n_target);
    rep.ctr += status.n_cum() > 0
                   ? static_cast<double>(status.clicks_cum()) /
                         static_cast<double>(status.n_cum())
                   : 0.0;
    rep.cumulative_reward += cum_reward;
    if constexpr (requires { env.pending(); })
      rep.pending_tail += static_cast<double>(env.pending());
    if constexpr (requires { env.never_displayed(); })
      rep.never_displayed += static_cast<double>(env.never_displayed());
  }

  const double E = static_cast<double>(episodes);
  rep.completion_rate /= E;
  rep.ctr /= E;
  rep.cumulative_reward /= E;
  rep.pending_tail /= E;
  rep.never_displayed /= E;
  for (TrendRow& t : rep.per_window_trend) {
    t.action /= E;
    t.observed /= E;
    t.clicks /= E;
    t.completion /= E;
    t.ctr /= E;
    t.reward /= E;
  }
  rep.smoothness_cv = trend_cv(rep.per_window_trend);
  return rep;
}

// ---------------------------------------------------------------------------
// Named reports and comparison
// ---------------------------------------------------------------------------

struct NamedReport {
  std::string name;
  EvalReport report;
  std::uint64_t cfg_digest = 0;
  json config;  // canonical dump, kept for mismatch diagnostics
};

inline void write_report(const std::string& dir, const NamedReport& r) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  json j{{"name", r.name},
         {"config_digest", r.cfg_digest},
         {"episodes", r.report.episodes},
         {"completion_rate", r.report.completion_rate},
         {"ctr", r.report.ctr},
         {"cumulative_reward", r.report.cumulative_reward},
         {"smoothness_cv", r.report.smoothness_cv},
         {"pending_tail", r.report.pending_tail},
         {"never_displayed", r.report.never_displayed},
         {"config", r.config}};
  const std::string path = (d / (r.name + "_report.json")).string();
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open report for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("short write: " + path);
  write_trend((d / (r.name + "_trend.tsv")).string(), r.report.per_window_trend);
}

inline NamedReport read_report(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  const std::string path = (d / (name + "_report.json")).string();
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open report: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw FormatError("unparseable report " + path + ": " + ex.what());
  }
  NamedReport r;
  try {
    r.name = j.at("name").get<std::string>();
    r.cfg_digest = j.at("config_digest").get<std::uint64_t>();
    r.report.episodes = j.at("episodes").get<int>();
    r.report.completion_rate = j.at("completion_rate").get<double>();
    r.report.ctr = j.at("ctr").get<double>();
    r.report.cumulative_reward = j.at("cumulative_reward").get<double>();
    r.report.smoothness_cv = j.at("smoothness_cv").get<double>();
    r.report.pending_tail = j.at("pending_tail").get<double>();
    r.report.never_displayed = j.at("never_displayed").get<double>();
    r.config = j.at("config");
  } catch (const json::exception& ex) {
    throw FormatError("report " + path + " is missing fields: " + ex.what());
  }
  r.report.per_window_trend = read_trend((d / (name + "_trend.tsv")).string());
  return r;
}

// Flat key-by-key difference of two canonical config dumps, for refusal
// messages.
inline std::string config_diff(const json& a, const json& b) {
  const json fa = a.is_object() ? a.flatten() : json::object();
  const json fb = b.is_object() ? b.flatten() : json::object();
  std::ostringstream os;
  for (const auto& [key, va] : fa.items()) {
    if (!fb.contains(key))
      os << "  " << key << ": " << va.dump() << " vs <absent>\n";
    else if (fb.at(key) != va)
      os << "  " << key << ": " << va.dump() << " vs " << fb.at(key).dump()
         << "\n";
  }
  for (const auto& [key, vb] : fb.items())
    if (!fa.contains(key)) os << "  " << key << ": <absent> vs " << vb.dump() << "\n";
  return os.str();
}

struct Comparison {
  std::vector<std::string> names;
  std::string table;  // rendered text, one row per policy
};

// Aligns the headline metrics of several reports; refuses to mix configs.
inline Comparison compare(const std::vector<NamedReport>& reports) {
  if (reports.size() < 2)
    throw ValidationError("compare needs at least two reports");
  for (std::size_t k = 1; k < reports.size(); ++k) {
    if (reports[k].cfg_digest != reports[0].cfg_digest)
      throw CompatibilityError(
          "reports '" + reports[0].name + "' and '" + reports[k].name +
          "' come from different configs:\n" +
          config_diff(reports[0].config, reports[k].config));
  }
  Comparison c;
  std::ostringstream os;
  os << std::left << std::setw(12) << "policy" << std::right << std::setw(12)
     << "completion" << std::setw(10) << "ctr" << std::setw(14) << "reward"
     << std::setw(10) << "cv" << std::setw(10) << "pending" << '\n';
  os << std::fixed;
  for (const NamedReport& r : reports) {
    c.names.push_back(r.name);
    os << std::left << std::setw(12) << r.name << std::right
       << std::setprecision(4) << std::setw(12) << r.report.completion_rate
       << std::setprecision(4) << std::setw(10) << r.report.ctr
       << std::setprecision(1) << std::setw(14) << r.report.cumulative_reward
       << std::setprecision(3) << std::setw(10) << r.report.smoothness_cv
       << std::setprecision(1) << std::setw(10) << r.report.pending_tail
       << '\n';
  }
  c.table = os.str();
  return c;
}

inline constexpr const char* kComparisonHeader =
    "policy\tcompletion_rate\tctr\tcumulative_reward\tsmoothness_cv\tpending_"
    "tail\tnever_displayed\tepisodes";

inline void write_comparison(const std::string& dir,
                             const std::vector<NamedReport>& reports) {
  compare(reports);  // reuse the config guard
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dir) / "comparison.tsv").string();
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open comparison for writing: " + path);
  out << kComparisonHeader << '\n';
  out.precision(17);
  for (const NamedReport& r : reports)
    out << r.name << '\t' << r.report.completion_rate << '\t' << r.report.ctr
        << '\t' << r.report.cumulative_reward << '\t'
        << r.report.smoothness_cv << '\t' << r.report.pending_tail << '\t'
        << r.report.never_displayed << '\t' << r.report.episodes << '\n';
  if (!out) throw FormatError("short write: " + path);
}

// ---------------------------------------------------------------------------
// Behavior-log generation
// ---------------------------------------------------------------------------

// Stage-wise controller with the pass-through predictor and a base
// probability derived from the configured request volume alone — the policy
// available before any statistics exist.
inline PtaPolicy bootstrap_pta_policy(const ExperimentConfig& cfg) {
  PtaPolicy p;
  p.predictor.identity = true;
  p.schedule = expected_schedule(cfg);
  double expected_requests = 0.0;
  for (double s : cfg.env.traffic_shape) expected_requests += s;
  expected_requests *= static_cast<double>(cfg.env.base_requests_per_window);
  p.base_prob = std::min(1.0, static_cast<double>(cfg.n_target) /
                                  std::max(expected_requests, 1.0));
  assign_ctr_groups(p, cfg);
  return p;
}

// Two-phase log generation: the opening bootstrap periods run the
// pass-through controller, one predictor fit on that slice then serves the
// remaining periods. A per-window exploration mix replaces the controller's
// action with a uniform grid draw so every probability level appears in the
// log.
inline std::vector<EpisodeLog> gen_logs(const ExperimentConfig& cfg,
                                        std::uint64_t seed) {
  PublisherEnv env(cfg);
  const std::vector<Action> grid = action_space(cfg);
  PtaPolicy pol = bootstrap_pta_policy(cfg);
  const int bootstrap =
      std::min(cfg.baselines.bootstrap_periods, cfg.log_periods);

  std::vector<EpisodeLog> logs;
  for (int p = 0; p < cfg.log_periods; ++p) {
    if (p == bootstrap)
      pol.predictor = fit_actual_predictor(cfg, logs, combine_seed(seed, 0xF17));
    const std::uint64_t pseed =
        combine_seed(seed, static_cast<std::uint64_t>(p));
    env.reset(pseed, p);
    Rng explore = derive_stream(pseed, 0xE0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0,
                                            static_cast<int>(grid.size()) - 1);
    DeliveryStatus status;
    PidState pid = make_pid_state(cfg);
    for (int i = 0; i < cfg.num_windows; ++i) {
      Action a = prediction_then_adjusting(pol, pid, status, cfg);
      if (uni(explore) < cfg.log_explore) a = grid[pick(explore)];
      status.observe(env.step(a));
    }
    logs.push_back(env.log());
  }
  return logs;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

inline std::uint64_t fnv64_bytes(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string fnv64_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string fnv64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot hash missing file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return fnv64_hex(fnv64_bytes(os.str()));
}

inline std::string utc_timestamp() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct ManifestEntry {
  std::string role;
  std::string path;
  std::string fnv64;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// Index of everything a run wrote: content-hashed artifact list plus the
// config digest and seed that produced it. `created` is the only field
// expected to change between identical reruns.
struct RunManifest {
  std::uint64_t cfg_digest = 0;
  std::uint64_t seed = 0;
  std::string created;
  std::vector<ManifestEntry> artifacts;
};

inline json manifest_to_json(const RunManifest& m) {
  json arts = json::array();
  for (const ManifestEntry& e : m.artifacts)
    arts.push_back({{"role", e.role}, {"path", e.path}, {"fnv64", e.fnv64}});
  return json{{"format", "rltp-manifest-1"},
              {"config_digest", m.cfg_digest},
              {"seed", m.seed},
              {"created", m.created},
              {"artifacts", arts}};
}

inline RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    if (j.at("format").get<std::string>() != "rltp-manifest-1")
      throw FormatError("unknown manifest format");
    m.cfg_digest = j.at("config_digest").get<std::uint64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created = j.at("created").get<std::string>();
    for (const json& e : j.at("artifacts"))
      m.artifacts.push_back({e.at("role").get<std::string>(),
                             e.at("path").get<std::string>(),
                             e.at("fnv64").get<std::string>()});
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad manifest: ") + ex.what());
  }
  return m;
}

inline void save_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open manifest for writing: " + path);
  out << manifest_to_json(m).dump(2) << '\n';
  if (!out) throw FormatError("short write: " + path);
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw FormatError("unparseable manifest " + path + ": " + ex.what());
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

// Logs → simulator → baselines → agent (trained inside the learned
// simulator) → evaluation on the ground-truth environment → comparison.
// The agent's simulator-side numbers are evaluated and reported alongside the
// ground-truth ones, so the sim-to-real gap is a first-class output. Any
// stage failure surfaces as a PipelineError naming the stage and carrying the
// manifest of whatever had been written.
inline RunManifest run_pipeline(const ExperimentConfig& cfg, std::uint64_t seed,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  RunManifest man;
  man.cfg_digest = config_digest(cfg);
  man.seed = seed;
  man.created = utc_timestamp();

  const fs::path dir(out_dir);
  auto record = [&](const std::string& role, const fs::path& p) {
    man.artifacts.push_back({role, p.string(), fnv64_file(p.string())});
  };

  std::string stage = "setup";
  try {
    fs::create_directories(dir);
    {
      const std::string path = (dir / "config.json").string();
      std::ofstream out(path);
      if (!out) throw FormatError("cannot open for writing: " + path);
      out << config_to_json(cfg).dump(2) << '\n';
    }
    record("config", dir / "config.json");

    stage = "gen-logs";
    const std::vector<EpisodeLog> logs = gen_logs(cfg, seed);
    write_behavior_log((dir / "logs.tsv").string(), logs);
    record("behavior-log", dir / "logs.tsv");

    stage = "train-sim";
    const SimDataset ds = build_sim_dataset(cfg, logs);
    const SimulatorModel sim =
        fit_simulator(cfg, ds, combine_seed(seed, 0x51A));
    save_simulator(sim, (dir / "sim.bin").string());
    record("simulator", dir / "sim.bin");

    stage = "baselines";
    const BaselineArtifact base =
        build_baselines(cfg, logs, combine_seed(seed, 0xBA5));
    save_baselines((dir / "baselines.bin").string(), base);
    record("baselines", dir / "baselines.bin");

    stage = "train-agent";
    DqnAgent agent(cfg);
    SimEnv sim_env(cfg, sim);
    const TrainResult tr =
        train_agent(agent, sim_env, cfg.training_episodes,
                    combine_seed(seed, 0xA6E));
    save_policy((dir / "policy.bin").string(), agent);
    record("policy", dir / "policy.bin");
    write_train_curve((dir / "train_curve.tsv").string(), tr.curve);
    record("train-curve", dir / "train_curve.tsv");

    stage = "eval";
    const std::uint64_t eval_seed = combine_seed(seed, 0xE7A1);
    std::vector<NamedReport> reports;
    auto run_eval = [&](const std::string& name, const PolicySource& src,
                        auto& env) {
      NamedReport r;
      r.name = name;
      r.report = evaluate(src, env, cfg, cfg.eval_episodes, eval_seed);
      r.cfg_digest = man.cfg_digest;
      r.config = config_to_json(cfg);
      write_report(out_dir, r);
      record(name + "-report", dir / (name + "_report.json"));
      record(name + "-trend", dir / (name + "_trend.tsv"));
      reports.push_back(std::move(r));
    };
    PublisherEnv real(cfg);
    run_eval("rltp", greedy_policy(agent, cfg), real);
    {
      SimEnv side(cfg, sim);
      run_eval("rltp_sim", greedy_policy(agent, cfg), side);
    }
    run_eval("rule", rule_policy(base, cfg), real);
    run_eval("pta", pta_policy(base, cfg), real);

    stage = "compare";
    write_comparison(out_dir, reports);
    record("comparison", dir / "comparison.tsv");

    stage = "manifest";
    save_manifest((dir / "manifest.json").string(), man);
  } catch (const std::exception& ex) {
    throw PipelineError(stage, ex.what(), manifest_to_json(man).dump(2));
  }
  return man;
}

}  // namespace rltp
