#include "mdfl/protocol.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "mdfl/error.hpp"

namespace mdfl::protocol {

using comms::kCommPhases;

namespace {
constexpr int kDflPhases = 2;
}

void ProtocolParams::validate() const {
  comm.validate();
  compute.validate();
  roi.validate();
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!(rho >= 0.0)) throw ConfigError("rho must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (initial_energy.micros() <= 0) throw ConfigError("initial energy E_v must be positive");
  if (max_local_iterations() < 1) throw ConfigError("t_round leaves no room for a single local iteration");
}

int ProtocolParams::max_local_iterations() const { return compute.max_iterations(kCommPhases, comm.t_edge); }

int ProtocolParams::dfl_iterations() const { return compute.max_iterations(kDflPhases, comm.t_edge); }

Energy ProtocolParams::min_participation_energy() const {
  return comms::round_energy(compute, 1, comm.e_edge);
}

int ParticipationTracker::count(VehicleId id) const {
  auto it = counts_.find(id);
  return it == counts_.end() ? 0 : it->second;
}

void ParticipationTracker::increment(const std::set<VehicleId>& members) {
  for (auto id : members) ++counts_[id];
}

double energy_ratio(const std::map<VehicleId, double>& residuals, VehicleId leader) {
  auto it = residuals.find(leader);
  if (it == residuals.end()) throw PreconditionError(fmt::format("leader {} is not a member", leader));
  double total = 0.0;
  for (const auto& [id, e] : residuals) total += e;
  if (!(total > 0.0)) throw PreconditionError("energy ratio undefined: members hold no residual energy");
  return it->second / total;
}

double participation_ratio(double h, double rho) {
  const double d = h - rho;
  return std::exp(-0.5 * d * d);
}

double leader_score(VehicleId candidate, const std::map<VehicleId, double>& residuals,
                    const ParticipationTracker& tracker, double epsilon) {
  return energy_ratio(residuals, candidate) + epsilon * participation_ratio(tracker.count(candidate), tracker.rho());
}

std::optional<VehicleId> argmax_leader(const std::map<VehicleId, double>& residuals,
                                       const ParticipationTracker& tracker, double epsilon) {
  if (residuals.size() < 2) return std::nullopt;
  std::optional<VehicleId> best;
  double best_score = 0.0;
  for (const auto& [id, e] : residuals) {
    const double s = leader_score(id, residuals, tracker, epsilon);
    if (!best || s > best_score) {
      best = id;
      best_score = s;
    }
  }
  return best;
}

std::string violation_labels(const std::set<Constraint>& v) {
  std::string out;
  for (auto c : v) out += static_cast<char>(c);
  return out;
}

SimulationState::SimulationState(ProtocolParams p, std::shared_ptr<const SimulationData> d,
                                 fl::AggregationStrategy s)
    : params(std::move(p)), data(std::move(d)), tracker(params.rho), strategy(std::move(s)) {
  params.validate();
  if (!data || !data->trace) throw PreconditionError("simulation needs a trace");
  for (auto id : data->trace->vehicle_ids()) {
    if (data->clients.count(id) == 0) throw PreconditionError(fmt::format("vehicle {} has no client dataset", id));
    vehicles[id].model = data->initial_model;
    ledger.add_vehicle(id, params.initial_energy);
  }
  if (strategy.kind == fl::StrategyKind::kScaffold) strategy.total_clients = vehicles.size();
}

std::set<VehicleId> SimulationState::members(int round) const {
  const auto in_roi = mobility::roi_members(snapshot(round), params.roi);
  const Energy floor = params.min_participation_energy();
  std::set<VehicleId> out;
  for (auto id : in_roi) {
    if (vehicles.count(id) != 0 && ledger.residual(id) >= floor) out.insert(id);
  }
  return out;
}

std::map<VehicleId, double> SimulationState::residuals(const std::set<VehicleId>& m) const {
  std::map<VehicleId, double> out;
  for (auto id : m) out[id] = ledger.residual(id).to_double();
  return out;
}

int SimulationState::previous_iterations(VehicleId id, int round) const {
  auto it = vehicles.find(id);
  if (it == vehicles.end() || it->second.last_round == 0 || it->second.last_round != round - 1) return 0;
  return it->second.last_iterations;
}

namespace {

const mobility::VehicleKinematics& kinematics(const mobility::Snapshot& snap, VehicleId id) {
  const auto* k = snap.find(id);
  if (k == nullptr) throw PreconditionError(fmt::format("vehicle {} missing from round {}", id, snap.round));
  return *k;
}

void check_plan_shape(const RoundPlan& plan, const std::set<VehicleId>& members) {
  if (members.count(plan.leader) == 0) {
    throw PreconditionError(fmt::format("round {}: leader {} is not an available member", plan.round, plan.leader));
  }
  if (plan.iterations.size() != members.size() ||
      !std::equal(plan.iterations.begin(), plan.iterations.end(), members.begin(),
                  [](const auto& kv, VehicleId id) { return kv.first == id; })) {
    throw PreconditionError(fmt::format("round {}: iteration keys do not match the member set", plan.round));
  }
}

}  // namespace

RoundAssessment assess_plan(const SimulationState& state, const RoundPlan& plan) {
  const auto& params = state.params;
  const auto& snap = state.snapshot(plan.round);
  const auto& leader = kinematics(snap, plan.leader);
  const double t_itr = params.compute.t_itr.to_double();

  RoundAssessment out;
  VehicleCost lead;
  lead.id = plan.leader;
  lead.leader = true;
  lead.iterations = plan.iterations.at(plan.leader);
  Energy leader_pred;
  Energy leader_real;
  Duration leader_time;

  for (const auto& [id, l] : plan.iterations) {
    if (id == plan.leader) continue;
    const auto& follower = kinematics(snap, id);
    const double d_now = mobility::distance(leader, follower);

    // Forecast from the previous round's training time.
    const double t_prev = t_itr * state.previous_iterations(id, plan.round);
    const double d_pred = mobility::predict_distance(leader, follower, d_now, t_prev);
    const double p_pred = mobility::direct_comm_indicator(d_pred, params.comm.r);

    // Realized link once this round's local training is done.
    const double t_cmp = t_itr * std::max(l, 0);
    const double d_real =
        mobility::distance(mobility::advance(leader, t_cmp), mobility::advance(follower, t_cmp));
    const double p_real = mobility::direct_comm_indicator(d_real, params.comm.r);

    VehicleCost c;
    c.id = id;
    c.iterations = l;
    c.e_com_predicted = comms::follower_comm_energy(params.comm, p_pred);
    const Energy e_link = comms::follower_comm_energy(params.comm, p_real);
    const Duration t_link = comms::follower_comm_time(params.comm, p_real);
    c.e_cmp = comms::compute_energy(params.compute, std::max(l, 0));
    c.e_com = kCommPhases * e_link;
    c.e_sum = c.e_cmp + c.e_com;
    c.t_sum = comms::compute_time(params.compute, std::max(l, 0)) + kCommPhases * t_link;
    out.costs.push_back(c);

    leader_pred += c.e_com_predicted;
    leader_real += e_link;
    leader_time = std::max(leader_time, t_link);
  }
  lead.e_com_predicted = leader_pred;
  lead.e_cmp = comms::compute_energy(params.compute, std::max(lead.iterations, 0));
  lead.e_com = kCommPhases * leader_real;
  lead.e_sum = lead.e_cmp + lead.e_com;
  lead.t_sum = comms::compute_time(params.compute, std::max(lead.iterations, 0)) + kCommPhases * leader_time;
  out.costs.push_back(lead);
  std::sort(out.costs.begin(), out.costs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& c : out.costs) out.t_max = std::max(out.t_max, c.t_sum);
  return out;
}

std::set<Constraint> check_costs(const std::vector<VehicleCost>& costs, const std::map<VehicleId, Energy>& residuals,
                                 Duration t_round, std::size_t member_count, bool leader_rule_satisfied) {
  std::set<Constraint> v;
  if (member_count < 2) v.insert(Constraint::kValidity);
  if (!leader_rule_satisfied) v.insert(Constraint::kLeaderRule);
  for (const auto& c : costs) {
    if (c.iterations < 1) v.insert(Constraint::kValidity);
    const Energy res = residuals.at(c.id);
    if (c.e_cmp + kCommPhases * c.e_com_predicted > res) v.insert(Constraint::kPredictedEnergy);
    if (c.e_sum > res) v.insert(Constraint::kRealizedEnergy);
    if (c.t_sum > t_round) v.insert(Constraint::kTime);
  }
  return v;
}

std::set<Constraint> check_constraints(const SimulationState& state, const RoundPlan& plan,
                                       const RoundAssessment& assessment, const ConstraintInputs& inputs) {
  std::set<VehicleId> members;
  std::map<VehicleId, Energy> res;
  for (const auto& [id, l] : plan.iterations) {
    members.insert(id);
    res[id] = state.ledger.residual(id);
  }
  bool leader_ok = true;
  if (inputs.enforce_leader_rule && members.size() >= 2) {
    // Ties are allowed: the chosen leader only has to reach the maximum.
    const auto residuals = state.residuals(members);
    const double chosen = leader_score(plan.leader, residuals, state.tracker, state.params.epsilon);
    double best = chosen;
    for (auto id : members) best = std::max(best, leader_score(id, residuals, state.tracker, state.params.epsilon));
    leader_ok = chosen >= best - 1e-12 * std::max(1.0, std::abs(best));
  }
  return check_costs(assessment.costs, res, state.params.compute.t_round, members.size(), leader_ok);
}

namespace {

void commit(SimulationState& state, RoundOutcome& outcome, nn::ParamVector model) {
  std::vector<comms::RoundCharge> charges;
  std::set<VehicleId> members;
  for (const auto& c : outcome.costs) {
    charges.push_back({c.id, c.e_cmp, c.e_com, c.e_sum});
    members.insert(c.id);
  }
  state.ledger.commit_round(outcome.round, charges);
  for (const auto& [id, l] : outcome.iterations) {
    auto& v = state.vehicles.at(id);
    v.model = model;
    v.last_iterations = l;
    v.last_round = outcome.round;
  }
  state.tracker.increment(members);
  state.committed_rounds += 1;
  state.last_committed_round = outcome.round;
  state.last_members = members;
  outcome.model = std::move(model);
  outcome.committed = true;
}

}  // namespace

RoundOutcome run_round(SimulationState& state, const RoundPlan& plan, const ConstraintInputs& inputs) {
  const auto members = state.members(plan.round);
  check_plan_shape(plan, members);

  RoundOutcome out;
  out.round = plan.round;
  out.leader = plan.leader;
  out.iterations = plan.iterations;
  const auto assessment = assess_plan(state, plan);
  out.costs = assessment.costs;
  out.t_max = assessment.t_max;
  out.violations = check_constraints(state, plan, assessment, inputs);
  if (!out.violations.empty()) return out;

  // Distribution: everyone starts from the leader's model.
  const nn::ParamVector start = state.vehicles.at(plan.leader).model;
  const auto& data = *state.data;
  std::vector<fl::ClientUpdate> updates;
  updates.reserve(plan.iterations.size());
  for (const auto& [id, l] : plan.iterations) {
    const auto& client = data.clients.at(id);
    auto local = fl::local_train(data.model_spec, start, client, l, state.params.learning_rate, state.strategy, id);
    updates.push_back({id, std::move(local.model), l, client.sample_count(), std::move(local.new_client_control)});
  }
  const auto weights = fl::sample_weights(updates);
  fl::AggregationStrategy strategy = state.strategy;
  auto aggregated = fl::aggregate(updates, weights, start, strategy);
  state.strategy = std::move(strategy);
  commit(state, out, std::move(aggregated));
  return out;
}

RoundPlan random_plan(const std::set<VehicleId>& members, int round, const ProtocolParams& params, nn::Rng& rng) {
  if (members.size() < 2) throw PreconditionError("random plan needs at least two members");
  RoundPlan plan;
  plan.round = round;
  std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
  plan.leader = *std::next(members.begin(), static_cast<std::ptrdiff_t>(pick(rng)));
  std::uniform_int_distribution<int> iters(1, params.max_local_iterations());
  for (auto id : members) plan.iterations[id] = iters(rng);
  return plan;
}

RoundOutcome dfl_round(SimulationState& state, int round) {
  const auto members = state.members(round);
  const auto& params = state.params;
  const auto& snap = state.snapshot(round);
  const int l = params.dfl_iterations();

  RoundOutcome out;
  out.round = round;
  std::map<VehicleId, Energy> res;
  for (auto id : members) {
    out.iterations[id] = l;
    res[id] = state.ledger.residual(id);
  }

  const double t_cmp = params.compute.t_itr.to_double() * l;
  for (auto id : members) {
    const auto here = mobility::advance(kinematics(snap, id), t_cmp);
    Energy per_phase;
    Duration worst;
    for (auto peer : members) {
      if (peer == id) continue;
      const auto there = mobility::advance(kinematics(snap, peer), t_cmp);
      const double p = mobility::direct_comm_indicator(mobility::distance(here, there), params.comm.r);
      per_phase += comms::follower_comm_energy(params.comm, p);
      worst = std::max(worst, comms::follower_comm_time(params.comm, p));
    }
    VehicleCost c;
    c.id = id;
    c.iterations = l;
    c.e_cmp = comms::compute_energy(params.compute, l);
    c.e_com = kDflPhases * per_phase;
    c.e_sum = c.e_cmp + c.e_com;
    c.t_sum = comms::compute_time(params.compute, l) + kDflPhases * worst;
    out.t_max = std::max(out.t_max, c.t_sum);
    out.costs.push_back(c);
  }
  // No prediction step in this baseline, so (b) is not evaluated.
  out.violations = check_costs(out.costs, res, params.compute.t_round, members.size(), true);
  out.violations.erase(Constraint::kPredictedEnergy);
  if (!out.violations.empty()) return out;

  const auto& data = *state.data;
  const std::size_t n = data.initial_model.size();
  nn::ParamVector mean(n, 0.0);
  const double w = 1.0 / static_cast<double>(members.size());
  // Only the FedProx proximal term carries over to peer-to-peer averaging.
  fl::AggregationStrategy local_rule;
  if (state.strategy.kind == fl::StrategyKind::kFedProx) local_rule = state.strategy;
  for (auto id : members) {
    auto local = fl::local_train(data.model_spec, state.vehicles.at(id).model, data.clients.at(id), l,
                                 params.learning_rate, local_rule, id);
    for (std::size_t i = 0; i < n; ++i) mean[i] += w * local.model[i];
  }
  commit(state, out, std::move(mean));
  return out;
}

}  // namespace mdfl::protocol
