#include "mdfl/comms.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <set>

#include "mdfl/error.hpp"

namespace mdfl {

std::string Quantity::to_string() const {
  const bool negative = micros_ < 0;
  const std::uint64_t mag = negative ? static_cast<std::uint64_t>(-(micros_ + 1)) + 1 : static_cast<std::uint64_t>(micros_);
  const std::uint64_t whole = mag / static_cast<std::uint64_t>(kScale);
  std::uint64_t frac = mag % static_cast<std::uint64_t>(kScale);
  std::string out = fmt::format("{}{}", negative ? "-" : "", whole);
  if (frac != 0) {
    std::string digits = fmt::format("{:06d}", frac);
    while (!digits.empty() && digits.back() == '0') digits.pop_back();
    out += '.';
    out += digits;
  }
  return out;
}

}  // namespace mdfl

namespace mdfl::comms {

void CommParams::validate() const {
  if (!(r > 0.0)) throw ConfigError("comm radius r must be positive");
  if (e_edge.micros() <= 0 || e_cloud.micros() <= 0) throw ConfigError("E_edge and E_cloud must be positive");
  if (t_edge.micros() <= 0 || t_cloud.micros() <= 0) throw ConfigError("T_edge and T_cloud must be positive");
  if (e_cloud < e_edge) throw ConfigError("E_cloud must be >= E_edge");
  if (t_cloud < t_edge) throw ConfigError("T_cloud must be >= T_edge");
}

void ComputeParams::validate() const {
  if (e_itr.micros() <= 0 || t_itr.micros() <= 0 || t_round.micros() <= 0) {
    throw ConfigError("e_itr, t_itr and t_round must be positive");
  }
}

int ComputeParams::max_iterations(int phases, Duration t_comm_per_phase) const {
  const std::int64_t budget = t_round.micros() - phases * t_comm_per_phase.micros();
  if (budget < 0) return 0;
  return static_cast<int>(budget / t_itr.micros());
}

namespace {

void check_probability(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError(fmt::format("probability {} outside [0, 1]", p));
}

// p * a + (1 - p) * b on the exact micro-unit grid.
Quantity blend(double p, Quantity a, Quantity b) {
  check_probability(p);
  if (p == 1.0) return a;
  if (p == 0.0) return b;
  return Quantity::from_double(p * a.to_double() + (1.0 - p) * b.to_double());
}

}  // namespace

Energy follower_comm_energy(const CommParams& params, double p_suc) {
  return blend(p_suc, params.e_edge, params.e_cloud);
}

Energy leader_comm_energy(const CommParams& params, std::span<const double> p_list) {
  Energy total;
  for (double p : p_list) total += follower_comm_energy(params, p);
  return total;
}

Duration follower_comm_time(const CommParams& params, double p_suc) {
  return blend(p_suc, params.t_edge, params.t_cloud);
}

Duration leader_comm_time(const CommParams& params, std::span<const double> p_list) {
  if (p_list.empty()) throw PreconditionError("leader_comm_time needs at least one follower");
  Duration worst;
  for (double p : p_list) worst = std::max(worst, follower_comm_time(params, p));
  return worst;
}

Energy compute_energy(const ComputeParams& params, int iterations) { return params.e_itr * iterations; }

Duration compute_time(const ComputeParams& params, int iterations) { return params.t_itr * iterations; }

Energy round_energy(const ComputeParams& params, int iterations, Energy e_com) {
  if (iterations < 1) throw PreconditionError("local iterations must be >= 1");
  return compute_energy(params, iterations) + kCommPhases * e_com;
}

Duration round_time(const ComputeParams& params, int iterations, Duration t_com) {
  if (iterations < 1) throw PreconditionError("local iterations must be >= 1");
  return compute_time(params, iterations) + kCommPhases * t_com;
}

std::map<VehicleId, Energy> predicted_comm_energies(const CommParams& params, VehicleId leader,
                                                    const std::map<VehicleId, double>& p_pred_by_follower) {
  std::map<VehicleId, Energy> out;
  Energy leader_total;
  for (const auto& [id, p] : p_pred_by_follower) {
    if (id == leader) continue;
    const Energy e = follower_comm_energy(params, p);
    out[id] = e;
    leader_total += e;
  }
  out[leader] = leader_total;
  return out;
}

EnergyLedger::EnergyLedger(std::map<VehicleId, Energy> initial) {
  for (const auto& [id, e] : initial) add_vehicle(id, e);
}

void EnergyLedger::add_vehicle(VehicleId id, Energy initial) {
  if (initial.micros() < 0) throw PreconditionError("initial energy must be non-negative");
  if (!initial_.emplace(id, initial).second) {
    throw PreconditionError(fmt::format("vehicle {} already in ledger", id));
  }
  spent_.emplace(id, Energy{});
}

Energy EnergyLedger::initial(VehicleId id) const {
  auto it = initial_.find(id);
  if (it == initial_.end()) throw PreconditionError(fmt::format("vehicle {} not in ledger", id));
  return it->second;
}

Energy EnergyLedger::spent(VehicleId id) const {
  auto it = spent_.find(id);
  if (it == spent_.end()) throw PreconditionError(fmt::format("vehicle {} not in ledger", id));
  return it->second;
}

Energy EnergyLedger::residual(VehicleId id) const { return initial(id) - spent(id); }

void EnergyLedger::commit_round(int round, std::span<const RoundCharge> charges) {
  std::set<VehicleId> seen;
  for (const auto& c : charges) {
    if (!seen.insert(c.vehicle_id).second) {
      throw InvariantError(fmt::format("round {}: vehicle {} charged twice", round, c.vehicle_id));
    }
    if (!has_vehicle(c.vehicle_id)) {
      throw InvariantError(fmt::format("round {}: charge for unknown vehicle {}", round, c.vehicle_id));
    }
    if (c.e_sum.micros() < 0 || c.e_sum != c.e_cmp + c.e_com) {
      throw InvariantError(fmt::format("round {}: inconsistent charge for vehicle {}", round, c.vehicle_id));
    }
    if (c.e_sum > residual(c.vehicle_id)) {
      throw InvariantError(fmt::format("round {}: vehicle {} overdraft ({} > residual {})", round, c.vehicle_id,
                                       c.e_sum.to_string(), residual(c.vehicle_id).to_string()));
    }
  }
  for (const auto& c : charges) {
    spent_[c.vehicle_id] += c.e_sum;
    rows_.push_back({round, c.vehicle_id, c.e_cmp, c.e_com, c.e_sum, residual(c.vehicle_id)});
  }
}

Energy EnergyLedger::total_spent() const {
  Energy total;
  for (const auto& [id, e] : spent_) total += e;
  return total;
}

Energy EnergyLedger::total_compute() const {
  Energy total;
  for (const auto& row : rows_) total += row.e_cmp;
  return total;
}

}  // namespace mdfl::comms
