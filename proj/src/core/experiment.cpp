#include "mdfl/experiment.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "mdfl/error.hpp"

namespace mdfl::exp {

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  // splitmix64 finalizer over seed + stream * golden ratio
  std::uint64_t z = seed + static_cast<std::uint64_t>(stream) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::shared_ptr<const mobility::MobilityTrace> make_trace(const ExperimentConfig& config) {
  if (config.trace_file)
    return std::make_shared<const mobility::MobilityTrace>(
        mobility::ingest_trace(*config.trace_file, config.params.compute.t_round.to_double()));
  return std::make_shared<const mobility::MobilityTrace>(
      mobility::generate_trace(config.trace, derive_seed(config.seed, SeedStream::kTrace)));
}

std::shared_ptr<const marl::FlTask> make_task(const ExperimentConfig& config) {
  nn::Rng rng(derive_seed(config.seed, SeedStream::kData));
  fl::Dataset data;
  if (config.task.kind == TaskKind::kBlobs) {
    data = fl::make_blobs(config.task.blobs, rng);
  } else {
    data = fl::ingest_idx(config.task.images, config.task.labels, config.task.idx_classes);
  }
  fl::PartitionSpec part;
  part.mode = config.task.partition;
  part.num_clients = config.num_vehicles();
  part.alpha = config.task.alpha;
  part.seed = rng();
  auto task = std::make_shared<marl::FlTask>();
  task->clients = fl::partition(data, part, config.task.val_fraction);
  task->model_spec.layer_sizes.push_back(data.feature_dim);
  for (auto h : config.task.hidden) task->model_spec.layer_sizes.push_back(h);
  task->model_spec.layer_sizes.push_back(static_cast<std::size_t>(data.num_classes));
  task->model_spec.hidden = nn::Activation::kTanh;
  task->model_spec.head = nn::Head::kLinear;
  task->model_spec.validate();
  nn::Rng model_rng(derive_seed(config.seed, SeedStream::kModel));
  task->initial_model = nn::init_params(task->model_spec, model_rng);
  return task;
}

fl::AggregationStrategy make_strategy(const ExperimentConfig& config) {
  fl::AggregationStrategy s;
  s.kind = config.aggregation;
  s.mu = config.aggregation == fl::StrategyKind::kFedProx ? config.mu : 0.0;
  s.total_clients = static_cast<std::size_t>(config.num_vehicles());
  s.validate();
  return s;
}

marl::MdflEnvConfig make_env_config(const ExperimentConfig& config, std::shared_ptr<const marl::FlTask> task) {
  marl::MdflEnvConfig env;
  env.params = config.params;
  env.trace = config.trace;
  env.task = std::move(task);
  env.strategy = make_strategy(config);
  env.enforce_leader_rule = true;
  env.reward_committed_only = config.reward_committed_only;
  env.max_rounds = config.max_rounds;
  return env;
}

std::unique_ptr<marl::MappoTrainer> make_trainer(const ExperimentConfig& config) {
  return std::make_unique<marl::MappoTrainer>(
      marl::mdfl_groups(config.params, static_cast<std::size_t>(config.num_vehicles())), config.ppo,
      derive_seed(config.seed, SeedStream::kTraining));
}

TrainResult train_policy(const ExperimentConfig& config,
                         const std::function<void(const marl::EpisodeStats&)>& on_episode) {
  TrainResult out;
  out.policy = make_trainer(config);
  marl::MdflEnv env(make_env_config(config, make_task(config)),
                    derive_seed(derive_seed(config.seed, SeedStream::kTraining), SeedStream::kTrace));
  out.curve = out.policy->train(env, config.episodes, on_episode);
  return out;
}

std::unique_ptr<marl::MappoTrainer> load_policy(const ExperimentConfig& config, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError(fmt::format("{}: policy checkpoint not found", path.string()));
  auto policy = make_trainer(config);
  policy->load(path);
  return policy;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("{}: cannot open for writing", path.string()));
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError(fmt::format("{}: write failed", path.string()));
}

}  // namespace

void write_curve_csv(const std::vector<marl::EpisodeStats>& curve, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "episode,accumulated_reward,policy_loss,value_loss,entropy\n";
  for (const auto& e : curve)
    out << fmt::format("{},{},{},{},{}\n", e.episode, e.accumulated_reward, e.policy_loss, e.value_loss, e.entropy);
  finish(out, path);
}

double current_f_acc(const protocol::SimulationState& state) {
  const auto& data = *state.data;
  std::vector<double> acc;
  if (state.committed_rounds == 0) {
    for (const auto& [id, v] : state.vehicles)
      acc.push_back(fl::evaluate(data.model_spec, v.model, data.clients.at(id).val));
  } else {
    for (auto id : state.last_members)
      acc.push_back(fl::evaluate(data.model_spec, state.vehicles.at(id).model, data.clients.at(id).val));
  }
  return fl::f_acc(acc);
}

RunResult run_experiment(const ExperimentConfig& config, const marl::MappoTrainer* policy) {
  return run_experiment(config, config.scheduler, policy);
}

RunResult run_experiment(const ExperimentConfig& config, Scheduler scheduler, const marl::MappoTrainer* policy) {
  config.validate();
  if (scheduler == Scheduler::kMappo && policy == nullptr)
    throw PreconditionError("the mappo scheduler needs a trained policy");
  const auto trace = make_trace(config);
  const auto task = make_task(config);
  const auto data = marl::bind_task(trace, *task);
  protocol::SimulationState state(config.params, data, make_strategy(config));
  const auto ids = trace->vehicle_ids();
  const std::vector<VehicleId> slots(ids.begin(), ids.end());
  const auto n_slots = static_cast<std::size_t>(config.num_vehicles());
  nn::Rng rng(derive_seed(config.seed, SeedStream::kScheduler));

  RunResult result;
  const int last = std::min(trace->num_rounds(), config.max_rounds);
  result.stop_reason = last == trace->num_rounds() ? "trace_end" : "round_cap";
  const Energy floor = config.params.min_participation_energy();
  for (int k = 1; k <= last; ++k) {
    int able = 0;
    for (const auto& [id, v] : state.vehicles)
      if (state.ledger.residual(id) >= floor) ++able;
    if (able < 2) {
      result.stop_reason = "energy_exhausted";
      break;
    }
    const auto members = state.members(k);
    if (members.size() < 2) continue;

    protocol::RoundOutcome outcome;
    switch (scheduler) {
      case Scheduler::kMappo:
        outcome = protocol::run_round(state, marl::mappo_plan(*policy, state, k, slots, n_slots));
        break;
      case Scheduler::kRandom:
        outcome = protocol::run_round(state, protocol::random_plan(members, k, config.params, rng),
                                      protocol::ConstraintInputs{false});
        break;
      case Scheduler::kDfl:
        outcome = protocol::dfl_round(state, k);
        break;
    }
    ++result.rounds_executed;
    if (outcome.committed) ++result.rounds_committed;

    RoundRecord rec;
    rec.round = k;
    rec.leader = outcome.leader;
    for (const auto& [id, l] : outcome.iterations) {
      rec.members.push_back(id);
      rec.iterations.push_back(l);
    }
    rec.t_max = outcome.t_max;
    rec.feasible = outcome.committed;
    rec.violations = protocol::violation_labels(outcome.violations);
    rec.f_acc = current_f_acc(state);
    rec.e_total = fl::e_total(state.ledger, k);
    result.rounds.push_back(std::move(rec));
  }
  result.f_acc = current_f_acc(state);
  result.ecr = config.ecr_per_vehicle ? fl::ecr_per_vehicle_mean(state.ledger) : fl::ecr(state.ledger);
  result.ledger = state.ledger;
  return result;
}

namespace {

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + fmt::format("{}", v[i]);
  return out;
}

}  // namespace

std::vector<std::filesystem::path> write_run_outputs(const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;

  const auto metrics = dir / "metrics.csv";
  {
    auto out = open_out(metrics);
    out << "round,f_acc,e_total\n";
    for (const auto& r : result.rounds) out << fmt::format("{},{},{}\n", r.round, r.f_acc, r.e_total.to_string());
    finish(out, metrics);
  }
  paths.push_back(metrics);

  const auto rounds = dir / "rounds.csv";
  {
    auto out = open_out(rounds);
    out << "round,leader_id,member_ids,l_vector,t_max,feasible,violations\n";
    for (const auto& r : result.rounds)
      out << fmt::format("{},{},{},{},{},{},{}\n", r.round, r.leader ? fmt::format("{}", *r.leader) : "",
                         join(r.members), join(r.iterations), r.t_max.to_string(), r.feasible ? 1 : 0, r.violations);
    finish(out, rounds);
  }
  paths.push_back(rounds);

  const auto energy = dir / "energy.csv";
  {
    auto out = open_out(energy);
    out << "round,vehicle_id,e_cmp,e_com,e_sum,e_res\n";
    for (const auto& row : result.ledger.rows())
      out << fmt::format("{},{},{},{},{},{}\n", row.round, row.vehicle_id, row.e_cmp.to_string(),
                         row.e_com.to_string(), row.e_sum.to_string(), row.e_res.to_string());
    finish(out, energy);
  }
  paths.push_back(energy);

  const auto summary = dir / "summary.csv";
  {
    auto out = open_out(summary);
    out << "f_acc,ecr,rounds_executed,rounds_committed,e_total,stop_reason\n";
    out << fmt::format("{},{},{},{},{},{}\n", result.f_acc, result.ecr, result.rounds_executed,
                       result.rounds_committed, result.ledger.total_spent().to_string(), result.stop_reason);
    finish(out, summary);
  }
  paths.push_back(summary);
  return paths;
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "E_v") return SweepAxis::kInitialEnergy;
  if (name == "E_cloud") return SweepAxis::kCloudEnergy;
  if (name == "N") return SweepAxis::kVehicles;
  if (name == "epsilon") return SweepAxis::kEpsilon;
  if (name == "r") return SweepAxis::kRadius;
  throw ConfigError(fmt::format("unknown sweep axis '{}' (expected E_v, E_cloud, N, epsilon or r)", name));
}

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kInitialEnergy: return "E_v";
    case SweepAxis::kCloudEnergy: return "E_cloud";
    case SweepAxis::kVehicles: return "N";
    case SweepAxis::kEpsilon: return "epsilon";
    case SweepAxis::kRadius: return "r";
  }
  return "?";
}

void apply_axis(ExperimentConfig& config, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::kInitialEnergy:
      if (!(value > 0.0)) throw ConfigError(fmt::format("E_v must be positive, got {}", value));
      config.params.initial_energy = Energy::from_double(value);
      break;
    case SweepAxis::kCloudEnergy:
      if (!(value > 0.0)) throw ConfigError(fmt::format("E_cloud must be positive, got {}", value));
      config.params.comm.e_cloud = Energy::from_double(value);
      break;
    case SweepAxis::kVehicles:
      if (value < 2.0 || value != std::floor(value))
        throw ConfigError(fmt::format("N must be an integer >= 2, got {}", value));
      config.trace.num_vehicles = static_cast<int>(value);
      break;
    case SweepAxis::kEpsilon:
      if (!(value >= 0.0)) throw ConfigError(fmt::format("epsilon must be non-negative, got {}", value));
      config.params.epsilon = value;
      break;
    case SweepAxis::kRadius:
      if (!(value > 0.0)) throw ConfigError(fmt::format("r must be positive, got {}", value));
      config.params.comm.r = value;
      break;
  }
  config.validate();
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto s = item.substr(b, item.find_last_not_of(" \t") - b + 1);
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != s.size() || !std::isfinite(v)) throw ConfigError(fmt::format("--values: '{}' is not a number", s));
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--values: empty value list");
  return out;
}

std::vector<SweepPoint> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                              const SweepOptions& options) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const bool reuse = options.reuse_policy || options.policy != nullptr;
  if (reuse && axis == SweepAxis::kVehicles)
    throw ConfigError("a reused policy cannot serve the N axis: network shapes depend on N");
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  const marl::MappoTrainer* shared = options.policy;
  std::unique_ptr<marl::MappoTrainer> trained_once;
  if (reuse && shared == nullptr) {
    log(fmt::format("training one policy on the base config ({} episodes)", base.episodes));
    trained_once = train_policy(base).policy;
    shared = trained_once.get();
  }

  std::vector<SweepPoint> out;
  for (double x : values) {
    ExperimentConfig c = base;
    apply_axis(c, axis, x);
    SweepPoint p;
    p.x = x;
    std::unique_ptr<marl::MappoTrainer> local;
    const marl::MappoTrainer* policy = shared;
    if (policy == nullptr) {
      log(fmt::format("{}={}: training ({} episodes)", axis_name(axis), x, c.episodes));
      local = train_policy(c).policy;
      policy = local.get();
    }
    const auto m = run_experiment(c, Scheduler::kMappo, policy);
    const auto d = run_experiment(c, Scheduler::kDfl, nullptr);
    const auto r = run_experiment(c, Scheduler::kRandom, nullptr);
    p.acc_mappo = m.f_acc;
    p.acc_dfl = d.f_acc;
    p.acc_random = r.f_acc;
    p.ecr_mappo = m.ecr;
    p.ecr_dfl = d.ecr;
    p.ecr_random = r.ecr;
    log(fmt::format("{}={}: f_acc mappo {:.4f} dfl {:.4f} random {:.4f}", axis_name(axis), x, p.acc_mappo, p.acc_dfl,
                    p.acc_random));
    out.push_back(p);
  }
  return out;
}

std::vector<std::filesystem::path> write_sweep_outputs(const std::vector<SweepPoint>& points, SweepAxis axis,
                                                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto acc = dir / fmt::format("sweep_{}_f_acc.csv", axis_name(axis));
  const auto ecr = dir / fmt::format("sweep_{}_ecr.csv", axis_name(axis));
  {
    auto out = open_out(acc);
    out << "x,mappo,dfl,random\n";
    for (const auto& p : points) out << fmt::format("{},{},{},{}\n", p.x, p.acc_mappo, p.acc_dfl, p.acc_random);
    finish(out, acc);
  }
  {
    auto out = open_out(ecr);
    out << "x,mappo,dfl,random\n";
    for (const auto& p : points) out << fmt::format("{},{},{},{}\n", p.x, p.ecr_mappo, p.ecr_dfl, p.ecr_random);
    finish(out, ecr);
  }
  return {acc, ecr};
}

}  // namespace mdfl::exp
