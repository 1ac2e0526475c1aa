// Command-line front end over the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "mdfl/mdfl.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  int code;
};

int exit_code(mdfl_status s) {
  if (s == MDFL_OK) return kExitOk;
  if (s == MDFL_ERR_CONFIG || s == MDFL_ERR_INVALID_ARGUMENT) return kExitConfig;
  return kExitRuntime;
}

void check(mdfl_status s, const char* what) {
  if (s == MDFL_OK) return;
  std::fprintf(stderr, "mdfl: %s: %s: %s\n", what, mdfl_status_name(s), mdfl_last_error_message());
  throw Failure{exit_code(s)};
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (INI); defaults apply when omitted");
  cmd->add_option("--seed", c.seed, "Master seed, overrides run.seed");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

struct ConfigHandle {
  mdfl_config* ptr = nullptr;
  ~ConfigHandle() { mdfl_config_free(ptr); }
};
struct PolicyHandle {
  mdfl_policy* ptr = nullptr;
  ~PolicyHandle() { mdfl_policy_free(ptr); }
};
struct TraceHandle {
  mdfl_trace* ptr = nullptr;
  ~TraceHandle() { mdfl_trace_free(ptr); }
};

void load_config(const Common& c, ConfigHandle& h) {
  if (c.config.empty()) {
    check(mdfl_config_default(&h.ptr), "config");
  } else {
    check(mdfl_config_load(c.config.c_str(), &h.ptr), "config");
  }
  if (c.seed) check(mdfl_config_set_seed(h.ptr, *c.seed), "config");
}

std::string config_value(const ConfigHandle& h, const char* key) {
  size_t needed = 0;
  check(mdfl_config_get(h.ptr, key, nullptr, 0, &needed), "config");
  std::string value(needed + 1, '\0');
  check(mdfl_config_get(h.ptr, key, value.data(), value.size(), &needed), "config");
  value.resize(needed);
  return value;
}

std::string path_in(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

void print_episode(int episode, double reward, double policy_loss, double value_loss, double entropy, void*) {
  if (episode % 50 == 0 || episode == 1)
    std::fprintf(stderr, "episode %d reward %.4f policy_loss %.4f value_loss %.4f entropy %.4f\n", episode, reward,
                 policy_loss, value_loss, entropy);
}

void print_log(const char* message, void*) { std::fprintf(stderr, "%s\n", message); }

void train_into(const ConfigHandle& cfg, const std::string& out, PolicyHandle& policy) {
  const auto curve = path_in(out, "curve.csv");
  const auto ckpt = path_in(out, "policy.bin");
  std::filesystem::create_directories(out);
  check(mdfl_policy_train(cfg.ptr, curve.c_str(), print_episode, nullptr, &policy.ptr), "train");
  check(mdfl_policy_save(policy.ptr, ckpt.c_str()), "save policy");
  std::printf("%s\n%s\n", curve.c_str(), ckpt.c_str());
}

void print_summary(const std::string& out, const mdfl_run_summary& s) {
  for (const char* name : {"metrics.csv", "rounds.csv", "energy.csv", "summary.csv"})
    std::printf("%s\n", path_in(out, name).c_str());
  std::fprintf(stderr, "f_acc %.4f ecr %.4f rounds %d committed %d e_total %g\n", s.f_acc, s.ecr, s.rounds_executed,
               s.rounds_committed, s.e_total);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mobility-aware decentralized federated learning simulator"};
  app.require_subcommand(1);

  Common gen_opts, ingest_opts, train_opts, run_opts, eval_opts, sweep_opts;
  std::string ingest_input;
  std::string run_scheduler, run_policy, eval_policy, sweep_axis, sweep_values, sweep_policy;
  bool reuse_policy = false;

  auto* gen = app.add_subcommand("gen-trace", "Generate a synthetic mobility trace");
  add_common(gen, gen_opts);

  auto* ingest = app.add_subcommand("ingest", "Validate and normalize a trace CSV");
  add_common(ingest, ingest_opts);
  ingest->add_option("input", ingest_input, "Trace CSV (round,vehicle_id,x,y,speed,accel)")->required();

  auto* train = app.add_subcommand("train", "Train MAPPO policies");
  add_common(train, train_opts);

  auto* run = app.add_subcommand("run", "Run one experiment");
  add_common(run, run_opts);
  run->add_option("--scheduler", run_scheduler, "mappo, random or dfl (overrides run.scheduler)")
      ->check(CLI::IsMember({"mappo", "random", "dfl"}));
  run->add_option("--policy", run_policy, "Policy checkpoint for mappo; trains one when omitted");

  auto* eval = app.add_subcommand("eval", "Evaluate a trained MAPPO checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--policy", eval_policy, "Policy checkpoint")->required();

  auto* sw = app.add_subcommand("sweep", "Sweep one parameter for all schedulers");
  add_common(sw, sweep_opts);
  sw->add_option("--axis", sweep_axis, "E_v, E_cloud, N, epsilon or r")->required();
  sw->add_option("--values", sweep_values, "Comma-separated values")->required();
  sw->add_flag("--reuse-policy", reuse_policy, "Train once on the base config instead of per value");
  sw->add_option("--policy", sweep_policy, "Reuse this checkpoint for every value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) {
      ConfigHandle cfg;
      load_config(gen_opts, cfg);
      TraceHandle trace;
      check(mdfl_trace_generate(cfg.ptr, &trace.ptr), "gen-trace");
      const auto path = path_in(gen_opts.out, "trace.csv");
      check(mdfl_trace_write_csv(trace.ptr, path.c_str()), "gen-trace");
      std::printf("%s\n", path.c_str());
    } else if (*ingest) {
      ConfigHandle cfg;
      load_config(ingest_opts, cfg);
      const double t_round = std::stod(config_value(cfg, "resources.t_round"));
      TraceHandle trace;
      check(mdfl_trace_ingest(ingest_input.c_str(), t_round, &trace.ptr), "ingest");
      int rounds = 0, vehicles = 0;
      check(mdfl_trace_info(trace.ptr, &rounds, &vehicles), "ingest");
      const auto path = path_in(ingest_opts.out, "trace.csv");
      check(mdfl_trace_write_csv(trace.ptr, path.c_str()), "ingest");
      std::fprintf(stderr, "%d rounds, %d vehicles\n", rounds, vehicles);
      std::printf("%s\n", path.c_str());
    } else if (*train) {
      ConfigHandle cfg;
      load_config(train_opts, cfg);
      PolicyHandle policy;
      train_into(cfg, train_opts.out, policy);
    } else if (*run) {
      ConfigHandle cfg;
      load_config(run_opts, cfg);
      if (!run_scheduler.empty()) check(mdfl_config_set_scheduler(cfg.ptr, run_scheduler.c_str()), "config");
      PolicyHandle policy;
      if (config_value(cfg, "run.scheduler") == "mappo") {
        if (!run_policy.empty()) {
          check(mdfl_policy_load(cfg.ptr, run_policy.c_str(), &policy.ptr), "load policy");
        } else {
          train_into(cfg, run_opts.out, policy);
        }
      }
      mdfl_run_summary summary{};
      check(mdfl_run(cfg.ptr, policy.ptr, run_opts.out.c_str(), &summary), "run");
      print_summary(run_opts.out, summary);
    } else if (*eval) {
      ConfigHandle cfg;
      load_config(eval_opts, cfg);
      check(mdfl_config_set_scheduler(cfg.ptr, "mappo"), "config");
      PolicyHandle policy;
      check(mdfl_policy_load(cfg.ptr, eval_policy.c_str(), &policy.ptr), "load policy");
      mdfl_run_summary summary{};
      check(mdfl_run(cfg.ptr, policy.ptr, eval_opts.out.c_str(), &summary), "eval");
      print_summary(eval_opts.out, summary);
    } else if (*sw) {
      ConfigHandle cfg;
      load_config(sweep_opts, cfg);
      PolicyHandle policy;
      if (!sweep_policy.empty()) check(mdfl_policy_load(cfg.ptr, sweep_policy.c_str(), &policy.ptr), "load policy");
      check(mdfl_sweep(cfg.ptr, sweep_axis.c_str(), sweep_values.c_str(), reuse_policy ? 1 : 0, policy.ptr,
                       sweep_opts.out.c_str(), print_log, nullptr),
            "sweep");
      for (const char* metric : {"f_acc", "ecr"})
        std::printf("%s\n",
                    (std::filesystem::path(sweep_opts.out) / ("sweep_" + sweep_axis + "_" + metric + ".csv")).c_str());
    }
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mdfl: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
