#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mdfl/mdfl_env.hpp"

namespace mdfl::exp {

using mobility::VehicleId;

enum class Scheduler { kMappo, kRandom, kDfl };
Scheduler parse_scheduler(const std::string& name);
std::string scheduler_name(Scheduler s);

enum class TaskKind { kBlobs, kIdx };

struct TaskConfig {
  TaskKind kind = TaskKind::kBlobs;
  fl::BlobSpec blobs{2, 2, 2000, 2.0, 1.0, 0.0};
  std::filesystem::path images;
  std::filesystem::path labels;
  int idx_classes = 10;
  std::vector<std::size_t> hidden = {16};
  fl::PartitionMode partition = fl::PartitionMode::kIid;
  double alpha = 0.3;
  double val_fraction = 0.2;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  Scheduler scheduler = Scheduler::kMappo;
  int max_rounds = 200;
  bool ecr_per_vehicle = false;
  protocol::ProtocolParams params;
  mobility::TraceConfig trace;  // trace.num_vehicles is N
  std::optional<std::filesystem::path> trace_file;
  fl::StrategyKind aggregation = fl::StrategyKind::kFedAvg;
  double mu = 0.01;
  TaskConfig task;
  marl::PpoConfig ppo;
  int episodes = 300;
  bool reward_committed_only = true;

  int num_vehicles() const { return trace.num_vehicles; }
  // Throws ConfigError naming the offending key.
  void validate() const;
};

// INI text: [section] headers and key = value lines; '#' or ';' comments.
// Omitted keys keep their defaults; unknown sections or keys are rejected.
ExperimentConfig parse_config_string(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
// Sets one `section.key` to its textual value; the result is validated.
void set_config_value(ExperimentConfig& config, const std::string& path, const std::string& value);
std::string get_config_value(const ExperimentConfig& config, const std::string& path);
// Canonical INI rendering of every key.
std::string to_ini(const ExperimentConfig& config);

// Independent stream for each consumer of the master seed.
enum class SeedStream : std::uint64_t { kTrace = 1, kData = 2, kModel = 3, kScheduler = 4, kTraining = 5 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

std::shared_ptr<const mobility::MobilityTrace> make_trace(const ExperimentConfig& config);
std::shared_ptr<const marl::FlTask> make_task(const ExperimentConfig& config);
fl::AggregationStrategy make_strategy(const ExperimentConfig& config);
marl::MdflEnvConfig make_env_config(const ExperimentConfig& config, std::shared_ptr<const marl::FlTask> task);
std::unique_ptr<marl::MappoTrainer> make_trainer(const ExperimentConfig& config);

struct TrainResult {
  std::unique_ptr<marl::MappoTrainer> policy;
  std::vector<marl::EpisodeStats> curve;
};
TrainResult train_policy(const ExperimentConfig& config,
                         const std::function<void(const marl::EpisodeStats&)>& on_episode = {});
std::unique_ptr<marl::MappoTrainer> load_policy(const ExperimentConfig& config, const std::filesystem::path& path);
void write_curve_csv(const std::vector<marl::EpisodeStats>& curve, const std::filesystem::path& path);

struct RoundRecord {
  int round = 0;
  std::optional<VehicleId> leader;
  std::vector<VehicleId> members;
  std::vector<int> iterations;  // in member order
  Duration t_max;
  bool feasible = false;
  std::string violations;
  double f_acc = 0.0;  // after this round
  Energy e_total;      // spent through this round
};

struct RunResult {
  std::vector<RoundRecord> rounds;  // attempted rounds only
  comms::EnergyLedger ledger;
  double f_acc = 0.0;
  double ecr = 0.0;
  int rounds_executed = 0;
  int rounds_committed = 0;
  std::string stop_reason;
};

// Final-round accuracy: mean over the members of the last committed round,
// or over every vehicle with its initial model if nothing was committed.
double current_f_acc(const protocol::SimulationState& state);

// Runs the configured scheduler over the trace. `policy` is required for
// the mappo scheduler.
RunResult run_experiment(const ExperimentConfig& config, const marl::MappoTrainer* policy = nullptr);
RunResult run_experiment(const ExperimentConfig& config, Scheduler scheduler, const marl::MappoTrainer* policy);

// metrics.csv, rounds.csv, energy.csv, summary.csv
std::vector<std::filesystem::path> write_run_outputs(const RunResult& result, const std::filesystem::path& dir);

enum class SweepAxis { kInitialEnergy, kCloudEnergy, kVehicles, kEpsilon, kRadius };
SweepAxis parse_axis(const std::string& name);
std::string axis_name(SweepAxis axis);
void apply_axis(ExperimentConfig& config, SweepAxis axis, double value);
std::vector<double> parse_values(const std::string& csv);

struct SweepPoint {
  double x = 0.0;
  double acc_mappo = 0.0, acc_dfl = 0.0, acc_random = 0.0;
  double ecr_mappo = 0.0, ecr_dfl = 0.0, ecr_random = 0.0;
};

struct SweepOptions {
  bool reuse_policy = false;
  // Used as-is for every point when set; implies reuse.
  const marl::MappoTrainer* policy = nullptr;
  std::function<void(const std::string&)> log;
};

std::vector<SweepPoint> sweep(const ExperimentConfig& base, SweepAxis axis, const std::vector<double>& values,
                              const SweepOptions& options = {});
// Two CSVs with columns x,mappo,dfl,random: accuracy and ECR.
std::vector<std::filesystem::path> write_sweep_outputs(const std::vector<SweepPoint>& points, SweepAxis axis,
                                                       const std::filesystem::path& dir);

}  // namespace mdfl::exp
