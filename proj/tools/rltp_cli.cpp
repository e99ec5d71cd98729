// Command-line front end: log generation, simulator fitting, agent training,
// evaluation, comparison, and the end-to-end pipeline. Every subcommand is
// deterministic given the same config, seed, and inputs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "rltp/harness.hpp"

namespace fs = std::filesystem;
using namespace rltp;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "JSON config file (defaults apply when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", opts.out_dir, "artifact directory");
  cmd->add_option("--set", opts.sets,
                  "override a config key, dotted path: --set agent.batch_size=32")
      ->take_all();
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&opts](const std::uint64_t& v) {
        opts.seed = v;
        opts.seed_given = true;
      },
      "run seed (defaults to the config's seed)");
}

// "a.b.c=value" applied to the config JSON before parsing; the value text is
// itself parsed as JSON when possible so numbers and arrays work, otherwise
// it is taken as a string.
void apply_set(json& j, const std::string& kv) {
  const std::size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw FormatError("--set expects key=value, got: " + kv);
  std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  for (char& c : key)
    if (c == '.') c = '/';
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  j[json::json_pointer("/" + key)] = value;
}

ExperimentConfig load_config(const CommonOpts& opts) {
  json j = json::object();
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw FormatError("cannot open config: " + opts.config_path);
    try {
      in >> j;
    } catch (const json::exception& ex) {
      throw FormatError("unparseable config " + opts.config_path + ": " +
                        ex.what());
    }
  }
  for (const std::string& kv : opts.sets) apply_set(j, kv);
  return config_from_json(j);
}

std::uint64_t run_seed(const CommonOpts& opts, const ExperimentConfig& cfg) {
  return opts.seed_given ? opts.seed : cfg.seed;
}

std::string in_dir(const CommonOpts& opts, const std::string& name) {
  return (fs::path(opts.out_dir) / name).string();
}

void ensure_out(const CommonOpts& opts) { fs::create_directories(opts.out_dir); }

int cmd_gen_logs(const CommonOpts& opts) {
  const ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = run_seed(opts, cfg);
  ensure_out(opts);
  const std::vector<EpisodeLog> logs = gen_logs(cfg, seed);
  const std::string path = in_dir(opts, "logs.tsv");
  write_behavior_log(path, logs);
  std::size_t rows = 0;
  for (const EpisodeLog& ep : logs) rows += ep.rows.size();
  std::printf("wrote %zu periods (%zu rows) to %s\n", logs.size(), rows,
              path.c_str());
  return 0;
}

int cmd_train_sim(const CommonOpts& opts, const std::string& logs_path) {
  const ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = run_seed(opts, cfg);
  ensure_out(opts);
  const std::string logs_file =
      logs_path.empty() ? in_dir(opts, "logs.tsv") : logs_path;
  const std::vector<EpisodeLog> logs = read_behavior_log(logs_file);
  const SimDataset ds = build_sim_dataset(cfg, logs);
  const SimulatorModel m = fit_simulator(cfg, ds, combine_seed(seed, 0x51A));
  const std::string path = in_dir(opts, "sim.bin");
  save_simulator(m, path);
  std::printf("simulator: %d train / %d holdout samples\n",
              m.report.train_samples, m.report.holdout_samples);
  std::printf("held-out relative error: impressions %.4f, clicks %.4f\n",
              m.report.rel_err_obs, m.report.rel_err_clicks);
  std::printf("saved %s\n", path.c_str());
  return 0;
}

int cmd_train_agent(const CommonOpts& opts, const std::string& sim_path,
                    const std::string& resume_path) {
  const ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = run_seed(opts, cfg);
  ensure_out(opts);
  const std::string sim_file =
      sim_path.empty() ? in_dir(opts, "sim.bin") : sim_path;
  const SimulatorModel sim = load_simulator(sim_file);
  SimEnv env(cfg, sim);

  TrainResult res;
  std::string policy_path = in_dir(opts, "policy.bin");
  if (!resume_path.empty()) {
    DqnAgent agent = load_policy(resume_path, cfg);
    res = incremental_update(agent, cfg, env, cfg.training_episodes,
                             combine_seed(seed, 0xA6E));
    save_policy(policy_path, agent);
  } else {
    DqnAgent agent(cfg);
    res = train_agent(agent, env, cfg.training_episodes,
                      combine_seed(seed, 0xA6E));
    save_policy(policy_path, agent);
  }
  write_train_curve(in_dir(opts, "train_curve.tsv"), res.curve);

  if (!res.curve.empty()) {
    const std::size_t third = res.curve.size() / 3;
    double early = 0.0, late = 0.0;
    for (std::size_t i = 0; i < third; ++i)
      early += std::fabs(res.curve[i].completion - 1.0);
    for (std::size_t i = res.curve.size() - third; i < res.curve.size(); ++i)
      late += std::fabs(res.curve[i].completion - 1.0);
    if (third > 0)
      std::printf("mean |completion-1|: first third %.4f, final third %.4f\n",
                  early / static_cast<double>(third),
                  late / static_cast<double>(third));
  }
  std::printf("saved %s\n", policy_path.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& policy_kind,
             const std::string& on, std::string name) {
  const ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = run_seed(opts, cfg);
  ensure_out(opts);

  DqnAgent agent(cfg);  // replaced when evaluating the trained policy
  BaselineArtifact base;
  PolicySource src;
  if (policy_kind == "rltp") {
    agent = load_policy(in_dir(opts, "policy.bin"), cfg);
    src = greedy_policy(agent, cfg);
  } else if (policy_kind == "rule" || policy_kind == "pta") {
    base = load_baselines(in_dir(opts, "baselines.bin"));
    if (base.cfg_digest != config_digest(cfg))
      throw CompatibilityError(
          "baseline artifact was built from a different config");
    src = policy_kind == "rule" ? rule_policy(base, cfg) : pta_policy(base, cfg);
  } else if (policy_kind == "zero") {
    src = zero_policy(cfg);
  } else {
    throw ValidationError("unknown policy: " + policy_kind);
  }

  if (name.empty()) name = on == "sim" ? policy_kind + "_sim" : policy_kind;
  NamedReport r;
  r.name = name;
  r.cfg_digest = config_digest(cfg);
  r.config = config_to_json(cfg);
  const std::uint64_t eval_seed = combine_seed(seed, 0xE7A1);
  if (on == "sim") {
    const SimulatorModel sim = load_simulator(in_dir(opts, "sim.bin"));
    SimEnv env(cfg, sim);
    r.report = evaluate(src, env, cfg, cfg.eval_episodes, eval_seed);
  } else {
    PublisherEnv env(cfg);
    r.report = evaluate(src, env, cfg, cfg.eval_episodes, eval_seed);
  }
  write_report(opts.out_dir, r);
  std::printf(
      "%s: completion %.4f, ctr %.4f, reward %.1f, smoothness cv %.3f\n",
      name.c_str(), r.report.completion_rate, r.report.ctr,
      r.report.cumulative_reward, r.report.smoothness_cv);
  std::printf("wrote %s and %s\n",
              in_dir(opts, name + "_report.json").c_str(),
              in_dir(opts, name + "_trend.tsv").c_str());
  return 0;
}

std::vector<std::string> report_names_in(const std::string& dir) {
  std::vector<std::string> names;
  const std::string suffix = "_report.json";
  if (!fs::is_directory(dir)) return names;
  for (const fs::directory_entry& e : fs::directory_iterator(dir)) {
    const std::string fn = e.path().filename().string();
    if (fn.size() > suffix.size() &&
        fn.compare(fn.size() - suffix.size(), suffix.size(), suffix) == 0)
      names.push_back(fn.substr(0, fn.size() - suffix.size()));
  }
  std::sort(names.begin(), names.end());
  return names;
}

int cmd_compare(const CommonOpts& opts, std::vector<std::string> names) {
  if (names.empty()) names = report_names_in(opts.out_dir);
  if (names.size() < 2)
    throw ValidationError("compare needs at least two reports in " +
                          opts.out_dir);
  std::vector<NamedReport> reports;
  for (const std::string& n : names)
    reports.push_back(read_report(opts.out_dir, n));
  const Comparison cmp = compare(reports);
  write_comparison(opts.out_dir, reports);
  std::fputs(cmp.table.c_str(), stdout);
  std::printf("wrote %s\n", in_dir(opts, "comparison.tsv").c_str());
  return 0;
}

int cmd_pipeline(const CommonOpts& opts) {
  const ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = run_seed(opts, cfg);
  const RunManifest man = run_pipeline(cfg, seed, opts.out_dir);

  std::vector<NamedReport> reports;
  for (const std::string& n : {"rltp", "rltp_sim", "rule", "pta"})
    reports.push_back(read_report(opts.out_dir, n));
  std::fputs(compare(reports).table.c_str(), stdout);
  std::printf("%zu artifacts, manifest at %s\n", man.artifacts.size(),
              in_dir(opts, "manifest.json").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"delivery pacing laboratory"};
  app.require_subcommand(1);

  CommonOpts gen_o, sim_o, agent_o, eval_o, cmp_o, pipe_o;
  std::string logs_path, sim_path, resume_path;
  std::string eval_policy = "rltp", eval_on = "real", eval_name;
  std::vector<std::string> cmp_names;

  CLI::App* gen = app.add_subcommand("gen-logs", "generate behavior logs");
  add_common(gen, gen_o);

  CLI::App* sim = app.add_subcommand("train-sim", "fit the simulator on logs");
  add_common(sim, sim_o);
  sim->add_option("--logs", logs_path, "behavior log file (default <out>/logs.tsv)");

  CLI::App* tr = app.add_subcommand("train-agent",
                                    "train the pacing agent in the simulator");
  add_common(tr, agent_o);
  tr->add_option("--sim", sim_path, "simulator file (default <out>/sim.bin)");
  tr->add_option("--resume", resume_path, "continue from a saved policy")
      ->check(CLI::ExistingFile);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a policy");
  add_common(ev, eval_o);
  ev->add_option("--policy", eval_policy, "rltp | rule | pta | zero")
      ->check(CLI::IsMember({"rltp", "rule", "pta", "zero"}));
  ev->add_option("--on", eval_on, "environment: real | sim")
      ->check(CLI::IsMember({"real", "sim"}));
  ev->add_option("--name", eval_name, "report name (defaults to the policy)");

  CLI::App* cm = app.add_subcommand("compare", "tabulate saved reports");
  add_common(cm, cmp_o);
  cm->add_option("--names", cmp_names,
                 "report names (default: every report in <out>)")
      ->take_all();

  CLI::App* pipe = app.add_subcommand(
      "pipeline", "logs -> simulator -> baselines -> agent -> eval -> compare");
  add_common(pipe, pipe_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_logs(gen_o);
    if (sim->parsed()) return cmd_train_sim(sim_o, logs_path);
    if (tr->parsed()) return cmd_train_agent(agent_o, sim_path, resume_path);
    if (ev->parsed()) return cmd_eval(eval_o, eval_policy, eval_on, eval_name);
    if (cm->parsed()) return cmd_compare(cmp_o, cmp_names);
    if (pipe->parsed()) return cmd_pipeline(pipe_o);
  } catch (const PipelineError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    if (!ex.partial_manifest().empty())
      std::cerr << "partial manifest:\n" << ex.partial_manifest() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
