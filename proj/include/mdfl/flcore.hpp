#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "mdfl/comms.hpp"
#include "mdfl/nn.hpp"

namespace mdfl::fl {

using mobility::VehicleId;
using nn::ParamVector;

struct Example {
  std::vector<double> features;
  int label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t feature_dim = 0;
  int num_classes = 0;
};

struct ClientDataset {
  std::vector<Example> train;
  std::vector<Example> val;

  std::size_t sample_count() const { return train.size(); }
};

// Gaussian blobs: class c is centred at offset + separation * (cos, sin) of
// angle 2*pi*c/classes in the first two dimensions.
struct BlobSpec {
  std::size_t dim = 2;
  int classes = 2;
  std::size_t samples = 1000;
  double separation = 2.0;
  double noise = 1.0;
  double offset = 0.0;

  void validate() const;
};
Dataset make_blobs(const BlobSpec& spec, nn::Rng& rng);

enum class PartitionMode { kIid, kPathological, kDirichlet };

struct PartitionSpec {
  PartitionMode mode = PartitionMode::kIid;
  int num_clients = 10;
  double alpha = 0.3;  // Dirichlet concentration
  std::uint64_t seed = 0;

  void validate() const;
};

// Disjoint index sets covering the dataset, one per client.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& data, const PartitionSpec& spec);

// Splits each client's share into train and validation parts; the first
// round(val_fraction * n) shuffled examples go to validation, always
// leaving at least one training example.
std::vector<ClientDataset> partition(const Dataset& data, const PartitionSpec& spec, double val_fraction = 0.2);

enum class StrategyKind { kFedAvg, kFedNova, kFedProx, kScaffold };

// Aggregation strategy plus the Scaffold control variates (all zero until
// the first aggregation touches them).
struct AggregationStrategy {
  StrategyKind kind = StrategyKind::kFedAvg;
  double mu = 0.0;  // FedProx proximal weight
  std::size_t total_clients = 1;
  ParamVector server_control;
  std::map<VehicleId, ParamVector> client_control;

  void validate() const;
  // Returns the stored client control variate, or zeros of size `n`.
  ParamVector client_control_or_zero(VehicleId id, std::size_t n) const;
  ParamVector server_control_or_zero(std::size_t n) const;
};

// Mean softmax cross-entropy and its gradient with respect to the params.
double loss_and_gradient(const nn::NetSpec& spec, std::span<const double> params, std::span<const Example> data,
                         std::span<double> grad);

struct LocalResult {
  ParamVector model;
  int iterations = 0;
  std::optional<ParamVector> new_client_control;  // Scaffold only
};

// `l` full-batch gradient steps starting from `start`.
LocalResult local_train(const nn::NetSpec& spec, const ParamVector& start, const ClientDataset& client, int l,
                        double eta, const AggregationStrategy& strategy, VehicleId client_id);

struct ClientUpdate {
  VehicleId id = 0;
  ParamVector model;
  int iterations = 1;
  std::size_t samples = 0;
  std::optional<ParamVector> new_client_control;
};

// n_v / sum(n) in the order of `updates`.
std::vector<double> sample_weights(std::span<const ClientUpdate> updates);

// Weighted aggregation of the trained models. `global_start` is the model
// every client started from this round. Scaffold control variates are
// committed into `strategy`.
ParamVector aggregate(std::span<const ClientUpdate> updates, std::span<const double> weights,
                      const ParamVector& global_start, AggregationStrategy& strategy);

double evaluate(const nn::NetSpec& spec, std::span<const double> model, std::span<const Example> val);

// Mean of per-vehicle accuracies. Throws PreconditionError when empty.
double f_acc(std::span<const double> accuracies);

inline constexpr double kZeta = 1e-9;
// Ratio of totals: sum of compute energy over sum of all energy (+ zeta).
double ecr(const comms::EnergyLedger& ledger);
// Mean over vehicles with at least one committed row of the per-vehicle
// ratio.
double ecr_per_vehicle_mean(const comms::EnergyLedger& ledger);
// Energy consumed by all vehicles in rounds <= k.
Energy e_total(const comms::EnergyLedger& ledger, int round);

// IDX images (magic 0x00000803, u8 pixels) and labels (magic 0x00000801).
// Pixels are scaled to [0, 1].
Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes = 10);

}  // namespace mdfl::fl
