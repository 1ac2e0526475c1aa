#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "mdfl/comms.hpp"
#include "mdfl/flcore.hpp"
#include "mdfl/mobility.hpp"

namespace mdfl::protocol {

using mobility::VehicleId;

struct ProtocolParams {
  comms::CommParams comm;
  comms::ComputeParams compute;
  mobility::RoiSpec roi;
  double epsilon = 1.0;  // weight of the participation ratio in the leader score
  double rho = 5.0;      // participation count at which G peaks
  double learning_rate = 0.05;
  Energy initial_energy = Energy::from_units(1000);

  void validate() const;
  // Largest local iteration count that fits a round with three direct
  // communication phases.
  int max_local_iterations() const;
  // Fixed iteration count of the all-to-all baseline (two phases).
  int dfl_iterations() const;
  // Cheapest possible participation: one iteration plus three direct
  // phases. Vehicles below this residual no longer count as available.
  Energy min_participation_energy() const;
};

class ParticipationTracker {
 public:
  explicit ParticipationTracker(double rho = 5.0) : rho_(rho) {}

  int count(VehicleId id) const;
  double rho() const { return rho_; }
  void increment(const std::set<VehicleId>& members);
  const std::map<VehicleId, int>& counts() const { return counts_; }

 private:
  double rho_;
  std::map<VehicleId, int> counts_;
};

double energy_ratio(const std::map<VehicleId, double>& residuals, VehicleId leader);
double participation_ratio(double h, double rho);
double leader_score(VehicleId candidate, const std::map<VehicleId, double>& residuals,
                    const ParticipationTracker& tracker, double epsilon);
// Highest score wins; ties go to the smallest id. Returns nullopt when
// fewer than two members are present.
std::optional<VehicleId> argmax_leader(const std::map<VehicleId, double>& residuals,
                                       const ParticipationTracker& tracker, double epsilon);

struct RoundPlan {
  int round = 0;
  VehicleId leader = 0;
  std::map<VehicleId, int> iterations;
};

// Constraint labels of the joint problem.
enum class Constraint : char {
  kPredictedEnergy = 'b',
  kRealizedEnergy = 'c',
  kTime = 'd',
  kLeaderRule = 'e',
  kValidity = 'f',
};
std::string violation_labels(const std::set<Constraint>& v);

struct VehicleCost {
  VehicleId id = 0;
  bool leader = false;
  int iterations = 0;
  Energy e_com_predicted;  // per phase
  Energy e_cmp;
  Energy e_com;  // all phases
  Energy e_sum;
  Duration t_sum;
};

struct RoundAssessment {
  std::vector<VehicleCost> costs;  // sorted by id
  Duration t_max;
};

struct SimulationData {
  std::shared_ptr<const mobility::MobilityTrace> trace;
  nn::NetSpec model_spec;
  std::map<VehicleId, fl::ClientDataset> clients;
  nn::ParamVector initial_model;
};

struct VehicleState {
  nn::ParamVector model;
  int last_iterations = 0;
  int last_round = 0;  // last committed round, 0 if none
};

// Mutable simulator state for one run.
struct SimulationState {
  ProtocolParams params;
  std::shared_ptr<const SimulationData> data;
  std::map<VehicleId, VehicleState> vehicles;
  comms::EnergyLedger ledger;
  ParticipationTracker tracker;
  fl::AggregationStrategy strategy;
  int committed_rounds = 0;
  int last_committed_round = 0;
  std::set<VehicleId> last_members;

  SimulationState(ProtocolParams params, std::shared_ptr<const SimulationData> data,
                  fl::AggregationStrategy strategy);

  const mobility::Snapshot& snapshot(int round) const { return data->trace->at(round); }
  // In the RoI and holding enough energy for the cheapest round.
  std::set<VehicleId> members(int round) const;
  std::map<VehicleId, double> residuals(const std::set<VehicleId>& members) const;
  // l_{k-1,v}: the vehicle's iteration count if it trained in round k-1.
  int previous_iterations(VehicleId id, int round) const;
};

// Predicted and realized per-vehicle costs of a leader/follower plan.
RoundAssessment assess_plan(const SimulationState& state, const RoundPlan& plan);

// Pure constraint evaluation over already computed costs. Iteration counts
// below 1 or fewer than two members violate (f); (e) is reported when
// `leader_rule_satisfied` is false.
std::set<Constraint> check_costs(const std::vector<VehicleCost>& costs, const std::map<VehicleId, Energy>& residuals,
                                 Duration t_round, std::size_t member_count, bool leader_rule_satisfied);

struct ConstraintInputs {
  bool enforce_leader_rule = true;
};
std::set<Constraint> check_constraints(const SimulationState& state, const RoundPlan& plan,
                                       const RoundAssessment& assessment, const ConstraintInputs& inputs);

struct RoundOutcome {
  int round = 0;
  std::optional<VehicleId> leader;  // empty for the all-to-all baseline
  std::map<VehicleId, int> iterations;
  std::vector<VehicleCost> costs;
  std::set<Constraint> violations;
  bool committed = false;
  Duration t_max;
  nn::ParamVector model;  // post-round model (empty when not committed)
};

// One leader/follower round. Throws PreconditionError for malformed plans
// (leader or iteration keys not matching the members). Infeasible plans
// produce an uncommitted outcome and leave the state untouched.
RoundOutcome run_round(SimulationState& state, const RoundPlan& plan, const ConstraintInputs& inputs = {});

RoundPlan random_plan(const std::set<VehicleId>& members, int round, const ProtocolParams& params, nn::Rng& rng);

// All-to-all baseline round: every member trains the fixed iteration count,
// exchanges models with every peer and keeps the equal-weight average.
RoundOutcome dfl_round(SimulationState& state, int round);

}  // namespace mdfl::protocol
