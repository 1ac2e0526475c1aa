#include "mdfl/mdfl_env.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "mdfl/error.hpp"

namespace mdfl::marl {

namespace {

// Distances beyond this many communication radii carry no extra signal.
constexpr double kDistanceCap = 5.0;

std::vector<std::uint8_t> presence(const std::set<VehicleId>& members, const std::vector<VehicleId>& slots,
                                   std::size_t n) {
  std::vector<std::uint8_t> present(n, 0);
  for (std::size_t i = 0; i < slots.size(); ++i) present[i] = members.count(slots[i]) != 0 ? 1 : 0;
  return present;
}

std::size_t state_dim(std::size_t n) { return 3 * n * n + 3 * n + n + 1; }

}  // namespace

MdflObservation build_observations(const protocol::SimulationState& state, int round,
                                   const std::vector<VehicleId>& slots, std::size_t num_slots) {
  if (slots.size() > num_slots)
    throw PreconditionError(fmt::format("{} vehicles do not fit {} agent slots", slots.size(), num_slots));
  const auto members = state.members(round);
  const auto& snap = state.snapshot(round);
  const auto present = presence(members, slots, num_slots);
  const auto& params = state.params;
  const double t_itr = params.compute.t_itr.to_double();

  MdflObservation out;
  out.local.resize(num_slots);
  for (auto& o : out.local) {
    o.distance.assign(num_slots, 0.0);
    o.prev_iterations.assign(num_slots, 0.0);
    o.present.assign(num_slots, 0);
  }
  out.leader.predicted_energy.assign(num_slots, 0.0);
  out.leader.residual.assign(num_slots, 0.0);
  out.leader.present = present;

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!present[i]) continue;
    const auto* ki = snap.find(slots[i]);
    auto& o = out.local[i];
    o.present = present;
    Energy predicted;
    for (std::size_t j = 0; j < slots.size(); ++j) {
      if (!present[j]) continue;
      const auto* kj = snap.find(slots[j]);
      const double d = mobility::distance(*ki, *kj);
      const int prev = state.previous_iterations(slots[j], round);
      o.distance[j] = d;
      o.prev_iterations[j] = prev;
      if (j != i) {
        const double d_pred = mobility::predict_distance(*ki, *kj, d, t_itr * prev);
        predicted += comms::follower_comm_energy(params.comm, mobility::direct_comm_indicator(d_pred, params.comm.r));
      }
    }
    out.leader.predicted_energy[i] = predicted.to_double();
    out.leader.residual[i] = state.ledger.residual(slots[i]).to_double();
  }

  out.state.local = out.local;
  out.state.leader = out.leader;
  out.state.participation.assign(num_slots, 0.0);
  for (std::size_t i = 0; i < slots.size(); ++i) out.state.participation[i] = state.tracker.count(slots[i]);
  out.state.round = round;
  return out;
}

ActionSpaces action_spaces(const protocol::ProtocolParams& params, const std::vector<std::uint8_t>& present) {
  ActionSpaces a;
  const int l_max = params.max_local_iterations();
  for (int l = 1; l <= l_max; ++l) a.local.push_back(l);
  a.leader = present;
  return a;
}

StepRewards step_rewards(const protocol::RoundPlan& plan, const std::vector<VehicleId>& slots,
                         std::size_t num_slots, const std::map<VehicleId, double>& residuals,
                         const protocol::ParticipationTracker& tracker, double epsilon) {
  StepRewards r;
  r.local.assign(num_slots, 0.0);
  for (std::size_t i = 0; i < slots.size() && i < num_slots; ++i) {
    auto it = plan.iterations.find(slots[i]);
    if (it != plan.iterations.end()) r.local[i] = it->second;
  }
  r.leader = protocol::leader_score(plan.leader, residuals, tracker, epsilon);
  return r;
}

std::shared_ptr<const protocol::SimulationData> bind_task(std::shared_ptr<const mobility::MobilityTrace> trace,
                                                          const FlTask& task) {
  auto data = std::make_shared<protocol::SimulationData>();
  const auto ids = trace->vehicle_ids();
  if (ids.size() > task.clients.size())
    throw ConfigError(fmt::format("trace has {} vehicles but only {} client datasets exist", ids.size(),
                                  task.clients.size()));
  std::size_t i = 0;
  for (auto id : ids) data->clients[id] = task.clients[i++];
  data->trace = std::move(trace);
  data->model_spec = task.model_spec;
  data->initial_model = task.initial_model;
  return data;
}

std::vector<AgentGroupSpec> mdfl_groups(const protocol::ProtocolParams& params, std::size_t n) {
  const std::size_t s = state_dim(n);
  const auto l_max = static_cast<std::size_t>(params.max_local_iterations());
  return {
      {"local", n, 4 * n, s + n, l_max},
      {"leader", 1, 3 * n, s, n},
  };
}

Observation to_views(const MdflObservation& obs, const protocol::ProtocolParams& params, int trace_rounds) {
  const std::size_t n = obs.local.size();
  const double r = params.comm.r;
  const double l_max = params.max_local_iterations();
  const double e_scale = params.comm.e_cloud.to_double() * static_cast<double>(std::max<std::size_t>(n, 2) - 1);
  const double e_v = params.initial_energy.to_double();
  const double h_scale = std::max(params.rho, 1.0);

  auto local_features = [&](const LocalObs& o, std::vector<double>& out) {
    for (std::size_t j = 0; j < n; ++j) {
      out.push_back(std::min(o.distance[j] / r, kDistanceCap));
      out.push_back(o.prev_iterations[j] / l_max);
    }
    for (std::size_t j = 0; j < n; ++j) out.push_back(o.present[j]);
  };
  auto leader_features = [&](const LeaderObs& o, std::vector<double>& out) {
    for (std::size_t j = 0; j < n; ++j) {
      out.push_back(o.predicted_energy[j] / e_scale);
      out.push_back(o.residual[j] / e_v);
    }
    for (std::size_t j = 0; j < n; ++j) out.push_back(o.present[j]);
  };

  std::vector<double> state;
  state.reserve(state_dim(n));
  for (const auto& o : obs.state.local) local_features(o, state);
  leader_features(obs.state.leader, state);
  for (double h : obs.state.participation) state.push_back(h / h_scale);
  state.push_back(static_cast<double>(obs.state.round) / std::max(trace_rounds, 1));

  const auto l_actions = static_cast<std::size_t>(params.max_local_iterations());
  Observation out;
  out.views.resize(2);
  for (std::size_t i = 0; i < n; ++i) {
    AgentView v;
    local_features(obs.local[i], v.obs);
    v.value_input = state;
    for (std::size_t j = 0; j < n; ++j) {
      v.obs.push_back(i == j ? 1.0 : 0.0);
      v.value_input.push_back(i == j ? 1.0 : 0.0);
    }
    v.action_mask.assign(l_actions, 1);
    v.active = obs.leader.present[i] != 0;
    out.views[0].push_back(std::move(v));
  }
  AgentView lv;
  leader_features(obs.leader, lv.obs);
  lv.value_input = std::move(state);
  lv.action_mask = obs.leader.present;
  lv.active = std::any_of(lv.action_mask.begin(), lv.action_mask.end(), [](auto m) { return m != 0; });
  out.views[1].push_back(std::move(lv));
  return out;
}

protocol::RoundPlan decode_actions(const std::vector<std::vector<int>>& actions, const std::vector<VehicleId>& slots,
                                   const std::set<VehicleId>& members, int round) {
  if (actions.size() != 2 || actions[1].empty()) throw PreconditionError("expected local and leader actions");
  protocol::RoundPlan plan;
  plan.round = round;
  const int leader_slot = actions[1][0];
  if (leader_slot < 0 || static_cast<std::size_t>(leader_slot) >= slots.size() ||
      members.count(slots[static_cast<std::size_t>(leader_slot)]) == 0)
    throw PreconditionError(fmt::format("round {}: leader slot {} is not an available member", round, leader_slot));
  plan.leader = slots[static_cast<std::size_t>(leader_slot)];
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (members.count(slots[i]) == 0) continue;
    if (i >= actions[0].size()) throw PreconditionError(fmt::format("missing local action for slot {}", i));
    plan.iterations[slots[i]] = actions[0][i] + 1;
  }
  return plan;
}

protocol::RoundPlan mappo_plan(const MappoTrainer& policy, const protocol::SimulationState& state, int round,
                               const std::vector<VehicleId>& slots, std::size_t num_slots) {
  const auto obs = build_observations(state, round, slots, num_slots);
  const auto views = to_views(obs, state.params, state.data->trace->num_rounds());
  std::vector<std::vector<int>> actions(2);
  for (std::size_t g = 0; g < 2; ++g)
    for (const auto& v : views.views[g]) actions[g].push_back(v.active ? policy.greedy_action(g, v) : 0);
  return decode_actions(actions, slots, state.members(round), round);
}

MdflEnv::MdflEnv(MdflEnvConfig config, std::uint64_t seed) : config_(std::move(config)), rng_(seed) {
  config_.params.validate();
  config_.trace.validate();
  if (!config_.task) throw ConfigError("environment needs an FL task");
  if (config_.task->clients.size() != config_.num_slots())
    throw ConfigError(fmt::format("{} client datasets for {} vehicles", config_.task->clients.size(),
                                  config_.num_slots()));
  if (config_.max_rounds < 1) throw ConfigError("max_rounds must be >= 1");
}

std::vector<AgentGroupSpec> MdflEnv::groups() const { return mdfl_groups(config_.params, config_.num_slots()); }

std::optional<int> MdflEnv::next_round(int from) const {
  const int last = std::min(state_->data->trace->num_rounds(), config_.max_rounds);
  for (int k = from; k <= last; ++k)
    if (state_->members(k).size() >= 2) return k;
  return std::nullopt;
}

Observation MdflEnv::observe() const {
  const auto obs = build_observations(*state_, round_, slots_, config_.num_slots());
  return to_views(obs, config_.params, state_->data->trace->num_rounds());
}

Observation MdflEnv::reset() {
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    auto trace = std::make_shared<const mobility::MobilityTrace>(mobility::generate_trace(config_.trace, rng_()));
    state_ = std::make_unique<protocol::SimulationState>(config_.params, bind_task(trace, *config_.task),
                                                         config_.strategy);
    const auto ids = trace->vehicle_ids();
    slots_.assign(ids.begin(), ids.end());
    last_.reset();
    if (auto k = next_round(1)) {
      round_ = *k;
      return observe();
    }
  }
  throw ConfigError(fmt::format("no generated trace had two vehicles in the RoI at once after {} attempts", kAttempts));
}

StepResult MdflEnv::step(const std::vector<std::vector<int>>& actions) {
  if (!state_) throw PreconditionError("step called before reset");
  const auto members = state_->members(round_);
  const auto plan = decode_actions(actions, slots_, members, round_);
  const auto rewards = step_rewards(plan, slots_, config_.num_slots(), state_->residuals(members), state_->tracker,
                                    config_.params.epsilon);
  last_ = protocol::run_round(*state_, plan, {config_.enforce_leader_rule});

  StepResult out;
  out.rewards = {rewards.local, {rewards.leader}};
  if (!last_->committed && config_.reward_committed_only) std::fill(out.rewards[0].begin(), out.rewards[0].end(), 0.0);
  if (!last_->committed) {
    out.done = true;
    return out;
  }
  const auto k = next_round(round_ + 1);
  if (!k) {
    out.done = true;
    return out;
  }
  round_ = *k;
  out.next = observe();
  return out;
}

}  // namespace mdfl::marl
