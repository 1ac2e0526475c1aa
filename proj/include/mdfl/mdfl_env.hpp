#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "mdfl/marl.hpp"
#include "mdfl/protocol.hpp"

namespace mdfl::marl {

using mobility::VehicleId;

// Raw per-slot observation values; absent slots are zero with present = 0.
struct LocalObs {
  std::vector<double> distance;         // d_kiv
  std::vector<double> prev_iterations;  // l_{k-1,v}
  std::vector<std::uint8_t> present;
};

struct LeaderObs {
  std::vector<double> predicted_energy;  // per-phase comm energy if v led
  std::vector<double> residual;
  std::vector<std::uint8_t> present;
};

struct GlobalState {
  std::vector<LocalObs> local;
  LeaderObs leader;
  std::vector<double> participation;  // h per slot
  int round = 0;
};

struct MdflObservation {
  std::vector<LocalObs> local;  // one per slot; all zero for absent agents
  LeaderObs leader;
  GlobalState state;
};

// Slot i holds vehicle slots[i]; vehicles not listed never appear. Only
// members of the round (in the RoI with enough energy) are present.
MdflObservation build_observations(const protocol::SimulationState& state, int round,
                                   const std::vector<VehicleId>& slots, std::size_t num_slots);

struct ActionSpaces {
  std::vector<int> local;  // iteration counts 1..L
  std::vector<std::uint8_t> leader;  // per slot, 1 if selectable
};
ActionSpaces action_spaces(const protocol::ProtocolParams& params, const std::vector<std::uint8_t>& present);

struct StepRewards {
  std::vector<double> local;  // per slot
  double leader = 0.0;
};
// Local agents earn their iteration count, the leader agent earns the score
// of the vehicle it picked. Residuals and counts are those before the round.
StepRewards step_rewards(const protocol::RoundPlan& plan, const std::vector<VehicleId>& slots,
                         std::size_t num_slots, const std::map<VehicleId, double>& residuals,
                         const protocol::ParticipationTracker& tracker, double epsilon);

// Fixed FL task shared by every episode: one client dataset per slot.
struct FlTask {
  nn::NetSpec model_spec;
  std::vector<fl::ClientDataset> clients;
  nn::ParamVector initial_model;
};

// Binds client datasets to the sorted vehicle ids of `trace`.
std::shared_ptr<const protocol::SimulationData> bind_task(std::shared_ptr<const mobility::MobilityTrace> trace,
                                                          const FlTask& task);

struct MdflEnvConfig {
  protocol::ProtocolParams params;
  mobility::TraceConfig trace;
  std::shared_ptr<const FlTask> task;
  fl::AggregationStrategy strategy;
  bool enforce_leader_rule = true;
  // Local agents earn their iteration count only when the round commits.
  bool reward_committed_only = true;
  int max_rounds = 200;

  std::size_t num_slots() const { return static_cast<std::size_t>(trace.num_vehicles); }
};

// Agent groups: 0 = local iteration agents (one per slot, shared policy),
// 1 = leader selector.
std::vector<AgentGroupSpec> mdfl_groups(const protocol::ProtocolParams& params, std::size_t num_slots);

// Network inputs for every agent, derived from the raw observation.
Observation to_views(const MdflObservation& obs, const protocol::ProtocolParams& params, int trace_rounds);

class MdflEnv : public MultiAgentEnv {
 public:
  MdflEnv(MdflEnvConfig config, std::uint64_t seed);

  std::vector<AgentGroupSpec> groups() const override;
  Observation reset() override;
  StepResult step(const std::vector<std::vector<int>>& actions) override;

  const protocol::SimulationState& state() const { return *state_; }
  int round() const { return round_; }
  const std::vector<VehicleId>& slots() const { return slots_; }
  const std::optional<protocol::RoundOutcome>& last_outcome() const { return last_; }

 private:
  std::optional<int> next_round(int from) const;
  Observation observe() const;

  MdflEnvConfig config_;
  nn::Rng rng_;
  std::unique_ptr<protocol::SimulationState> state_;
  std::vector<VehicleId> slots_;
  int round_ = 0;
  std::optional<protocol::RoundOutcome> last_;
};

// Decodes per-agent actions into a plan over the round's members.
protocol::RoundPlan decode_actions(const std::vector<std::vector<int>>& actions, const std::vector<VehicleId>& slots,
                                   const std::set<VehicleId>& members, int round);

// Greedy plan from trained policies for `round` of a running simulation.
protocol::RoundPlan mappo_plan(const MappoTrainer& policy, const protocol::SimulationState& state, int round,
                               const std::vector<VehicleId>& slots, std::size_t num_slots);

}  // namespace mdfl::marl
