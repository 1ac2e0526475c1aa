#pragma once

#include <map>
#include <span>
#include <vector>

#include "mdfl/mobility.hpp"
#include "mdfl/quantity.hpp"

namespace mdfl::comms {

using mobility::VehicleId;

// Three communication phases per round: distribution, update, broadcast.
inline constexpr int kCommPhases = 3;

struct CommParams {
  double r = 200.0;  // direct communication radius, m
  Energy e_edge = Energy::from_units(2);
  Energy e_cloud = Energy::from_units(5);
  Duration t_edge = Duration::from_units(1);
  Duration t_cloud = Duration::from_units(2);

  void validate() const;
};

struct ComputeParams {
  Energy e_itr = Energy::from_units(5);
  Duration t_itr = Duration::from_units(1);
  Duration t_round = Duration::from_units(10);

  void validate() const;
  // Largest l with t_itr * l + phases * t_comm_per_phase <= t_round; 0 if
  // none fits.
  int max_iterations(int phases, Duration t_comm_per_phase) const;
};

// Per-phase energy of one link whose direct-link probability is `p_suc`.
Energy follower_comm_energy(const CommParams& params, double p_suc);
Energy leader_comm_energy(const CommParams& params, std::span<const double> p_list);
Duration follower_comm_time(const CommParams& params, double p_suc);
// Throws PreconditionError on an empty list.
Duration leader_comm_time(const CommParams& params, std::span<const double> p_list);

Energy compute_energy(const ComputeParams& params, int iterations);
Duration compute_time(const ComputeParams& params, int iterations);
// e_itr * l + 3 * e_com
Energy round_energy(const ComputeParams& params, int iterations, Energy e_com);
// t_itr * l + 3 * t_com
Duration round_time(const ComputeParams& params, int iterations, Duration t_com);

// Leader entry is the sum over followers; each follower entry is its own
// link cost.
std::map<VehicleId, Energy> predicted_comm_energies(const CommParams& params, VehicleId leader,
                                                    const std::map<VehicleId, double>& p_pred_by_follower);

struct EnergyRow {
  int round = 0;
  VehicleId vehicle_id = 0;
  Energy e_cmp;
  Energy e_com;  // total over all phases
  Energy e_sum;
  Energy e_res;  // residual after this row was committed
};

struct RoundCharge {
  VehicleId vehicle_id = 0;
  Energy e_cmp;
  Energy e_com;
  Energy e_sum;
};

// Residual-energy bookkeeping. Residual = initial - spent, never negative.
class EnergyLedger {
 public:
  EnergyLedger() = default;
  explicit EnergyLedger(std::map<VehicleId, Energy> initial);

  void add_vehicle(VehicleId id, Energy initial);
  bool has_vehicle(VehicleId id) const { return initial_.count(id) != 0; }

  Energy initial(VehicleId id) const;
  Energy spent(VehicleId id) const;
  Energy residual(VehicleId id) const;

  // All-or-nothing: throws InvariantError (and leaves the ledger untouched)
  // if any charge would overdraw a vehicle or names an unknown vehicle.
  void commit_round(int round, std::span<const RoundCharge> charges);

  const std::vector<EnergyRow>& rows() const { return rows_; }
  const std::map<VehicleId, Energy>& initial_energies() const { return initial_; }

  Energy total_spent() const;
  Energy total_compute() const;

 private:
  std::map<VehicleId, Energy> initial_;
  std::map<VehicleId, Energy> spent_;
  std::vector<EnergyRow> rows_;
};

}  // namespace mdfl::comms
