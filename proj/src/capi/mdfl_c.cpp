#include "mdfl/mdfl.h"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <memory>
#include <string>

#include "mdfl/error.hpp"
#include "mdfl/experiment.hpp"

struct mdfl_config {
  mdfl::exp::ExperimentConfig value;
};

struct mdfl_trace {
  mdfl::mobility::MobilityTrace value;
};

struct mdfl_policy {
  mdfl::exp::ExperimentConfig config;  // shape the networks were built for
  std::unique_ptr<mdfl::marl::MappoTrainer> trainer;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
mdfl_status guard(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return MDFL_OK;
  } catch (const mdfl::ConfigError& e) {
    g_last_error = e.what();
    return MDFL_ERR_CONFIG;
  } catch (const mdfl::ParseError& e) {
    g_last_error = e.what();
    return MDFL_ERR_PARSE;
  } catch (const mdfl::ValidationError& e) {
    g_last_error = e.what();
    return MDFL_ERR_VALIDATION;
  } catch (const mdfl::IoError& e) {
    g_last_error = e.what();
    return MDFL_ERR_IO;
  } catch (const mdfl::PreconditionError& e) {
    g_last_error = e.what();
    return MDFL_ERR_PRECONDITION;
  } catch (const mdfl::InvariantError& e) {
    g_last_error = e.what();
    return MDFL_ERR_INVARIANT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return MDFL_ERR_IO;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return MDFL_ERR_INVALID_ARGUMENT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MDFL_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MDFL_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw std::invalid_argument(std::string(what) + " must not be NULL");
}

void copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed != nullptr) *needed = text.size();
  if (cap > 0) {
    const std::size_t n = std::min(cap - 1, text.size());
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
  }
}

}  // namespace

extern "C" {

const char* mdfl_version(void) { return "0.1.0"; }

const char* mdfl_last_error_message(void) { return g_last_error.c_str(); }

const char* mdfl_status_name(mdfl_status status) {
  switch (status) {
    case MDFL_OK: return "ok";
    case MDFL_ERR_CONFIG: return "config error";
    case MDFL_ERR_PARSE: return "parse error";
    case MDFL_ERR_VALIDATION: return "validation error";
    case MDFL_ERR_IO: return "i/o error";
    case MDFL_ERR_PRECONDITION: return "precondition violated";
    case MDFL_ERR_INVARIANT: return "invariant violated";
    case MDFL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MDFL_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

mdfl_status mdfl_config_default(mdfl_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new mdfl_config{};
  });
}

mdfl_status mdfl_config_load(const char* path, mdfl_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    auto c = std::make_unique<mdfl_config>(mdfl_config{mdfl::exp::parse_config(path)});
    *out = c.release();
  });
}

mdfl_status mdfl_config_parse(const char* text, mdfl_config** out) {
  return guard([&] {
    require(text, "text");
    require(out, "out");
    auto c = std::make_unique<mdfl_config>(mdfl_config{mdfl::exp::parse_config_string(text)});
    *out = c.release();
  });
}

mdfl_status mdfl_config_clone(const mdfl_config* config, mdfl_config** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    *out = new mdfl_config{config->value};
  });
}

mdfl_status mdfl_config_set(mdfl_config* config, const char* key, const char* value) {
  return guard([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    mdfl::exp::set_config_value(config->value, key, value);
  });
}

mdfl_status mdfl_config_get(const mdfl_config* config, const char* key, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    require(config, "config");
    require(key, "key");
    if (cap > 0) require(buf, "buf");
    copy_out(mdfl::exp::get_config_value(config->value, key), buf, cap, needed);
  });
}

mdfl_status mdfl_config_set_seed(mdfl_config* config, uint64_t seed) {
  return guard([&] {
    require(config, "config");
    config->value.seed = seed;
  });
}

mdfl_status mdfl_config_get_seed(const mdfl_config* config, uint64_t* seed) {
  return guard([&] {
    require(config, "config");
    require(seed, "seed");
    *seed = config->value.seed;
  });
}

mdfl_status mdfl_config_set_scheduler(mdfl_config* config, const char* scheduler) {
  return guard([&] {
    require(config, "config");
    require(scheduler, "scheduler");
    config->value.scheduler = mdfl::exp::parse_scheduler(scheduler);
  });
}

mdfl_status mdfl_config_to_ini(const mdfl_config* config, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    require(config, "config");
    if (cap > 0) require(buf, "buf");
    copy_out(mdfl::exp::to_ini(config->value), buf, cap, needed);
  });
}

void mdfl_config_free(mdfl_config* config) { delete config; }

mdfl_status mdfl_trace_generate(const mdfl_config* config, mdfl_trace** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    auto c = config->value;
    c.trace_file.reset();
    *out = new mdfl_trace{*mdfl::exp::make_trace(c)};
  });
}

mdfl_status mdfl_trace_ingest(const char* path, double round_duration, mdfl_trace** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    if (!(round_duration > 0.0)) throw mdfl::ConfigError("round duration must be positive");
    if (!std::filesystem::exists(path)) throw mdfl::IoError(std::string(path) + ": trace file not found");
    *out = new mdfl_trace{mdfl::mobility::ingest_trace(path, round_duration)};
  });
}

mdfl_status mdfl_trace_write_csv(const mdfl_trace* trace, const char* path) {
  return guard([&] {
    require(trace, "trace");
    require(path, "path");
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    mdfl::mobility::write_trace_csv(trace->value, p);
  });
}

mdfl_status mdfl_trace_info(const mdfl_trace* trace, int* rounds, int* vehicles) {
  return guard([&] {
    require(trace, "trace");
    if (rounds != nullptr) *rounds = trace->value.num_rounds();
    if (vehicles != nullptr) *vehicles = static_cast<int>(trace->value.vehicle_ids().size());
  });
}

void mdfl_trace_free(mdfl_trace* trace) { delete trace; }

mdfl_status mdfl_policy_train(const mdfl_config* config, const char* curve_csv, mdfl_episode_callback callback,
                              void* user, mdfl_policy** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    auto result = mdfl::exp::train_policy(config->value, [&](const mdfl::marl::EpisodeStats& s) {
      if (callback != nullptr)
        callback(s.episode, s.accumulated_reward, s.policy_loss, s.value_loss, s.entropy, user);
    });
    if (curve_csv != nullptr) mdfl::exp::write_curve_csv(result.curve, curve_csv);
    *out = new mdfl_policy{config->value, std::move(result.policy)};
  });
}

mdfl_status mdfl_policy_save(const mdfl_policy* policy, const char* path) {
  return guard([&] {
    require(policy, "policy");
    require(path, "path");
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    policy->trainer->save(p);
  });
}

mdfl_status mdfl_policy_load(const mdfl_config* config, const char* path, mdfl_policy** out) {
  return guard([&] {
    require(config, "config");
    require(path, "path");
    require(out, "out");
    *out = new mdfl_policy{config->value, mdfl::exp::load_policy(config->value, path)};
  });
}

void mdfl_policy_free(mdfl_policy* policy) { delete policy; }

mdfl_status mdfl_run(const mdfl_config* config, const mdfl_policy* policy, const char* out_dir,
                     mdfl_run_summary* summary) {
  return guard([&] {
    require(config, "config");
    const auto& c = config->value;
    const mdfl::marl::MappoTrainer* trainer = nullptr;
    if (c.scheduler == mdfl::exp::Scheduler::kMappo) {
      if (policy == nullptr) throw mdfl::ConfigError("the mappo scheduler needs a policy (train or load one)");
      trainer = policy->trainer.get();
    }
    const auto result = mdfl::exp::run_experiment(c, trainer);
    if (out_dir != nullptr) mdfl::exp::write_run_outputs(result, out_dir);
    if (summary != nullptr) {
      summary->f_acc = result.f_acc;
      summary->ecr = result.ecr;
      summary->e_total = result.ledger.total_spent().to_double();
      summary->rounds_executed = result.rounds_executed;
      summary->rounds_committed = result.rounds_committed;
    }
  });
}

mdfl_status mdfl_sweep(const mdfl_config* config, const char* axis, const char* values, int reuse_policy,
                       const mdfl_policy* policy, const char* out_dir, mdfl_log_callback log, void* user) {
  return guard([&] {
    require(config, "config");
    require(axis, "axis");
    require(values, "values");
    require(out_dir, "out_dir");
    const auto ax = mdfl::exp::parse_axis(axis);
    const auto xs = mdfl::exp::parse_values(values);
    mdfl::exp::SweepOptions opts;
    opts.reuse_policy = reuse_policy != 0;
    opts.policy = policy != nullptr ? policy->trainer.get() : nullptr;
    if (log != nullptr) opts.log = [&](const std::string& m) { log(m.c_str(), user); };
    const auto points = mdfl::exp::sweep(config->value, ax, xs, opts);
    mdfl::exp::write_sweep_outputs(points, ax, out_dir);
  });
}

}  // extern "C"
