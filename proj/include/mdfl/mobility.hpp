#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <vector>

namespace mdfl::mobility {

using VehicleId = std::int64_t;

struct VehicleKinematics {
  VehicleId vehicle_id = 0;
  double x = 0.0;      // m, east-positive along the main road
  double y = 0.0;      // m, lateral
  double speed = 0.0;  // m/s
  double accel = 0.0;  // m/s^2

  friend bool operator==(const VehicleKinematics&, const VehicleKinematics&) = default;
};

struct RoiSpec {
  double x_min = 0.0;
  double x_max = 3000.0;
  double y_min = 0.0;
  double y_max = 200.0;

  void validate() const;
  bool contains(double x, double y) const;
};

struct Snapshot {
  int round = 0;
  std::vector<VehicleKinematics> vehicles;  // sorted by vehicle_id

  const VehicleKinematics* find(VehicleId id) const;
  friend bool operator==(const Snapshot&, const Snapshot&) = default;
};

struct MobilityTrace {
  double round_duration = 10.0;
  std::vector<Snapshot> snapshots;  // snapshots[i].round == i + 1

  int num_rounds() const { return static_cast<int>(snapshots.size()); }
  // Round index is 1-based.
  const Snapshot& at(int round) const;
  // Every vehicle id that appears anywhere in the trace.
  std::set<VehicleId> vehicle_ids() const;
  void validate() const;

  friend bool operator==(const MobilityTrace&, const MobilityTrace&) = default;
};

double distance(const VehicleKinematics& a, const VehicleKinematics& b);

// 1 when the pair can talk directly (boundary inclusive), else 0.
double direct_comm_indicator(double d, double r);

double predict_displacement(double speed, double accel, double t);

// Worst-case distance forecast between a leader `u` and a follower `v`
// after `t_prev_cmp` units of training. Uses the longitudinal axis only and
// is clamped at zero.
double predict_distance(const VehicleKinematics& u, const VehicleKinematics& v, double d_now,
                        double t_prev_cmp);

// Advances kinematics by `t` along x with constant acceleration.
VehicleKinematics advance(const VehicleKinematics& k, double t);

std::set<VehicleId> roi_members(const Snapshot& snapshot, const RoiSpec& roi);

// Synthetic SUMO-like layout: a straight west-east main road with three
// exit ramps and one entrance ramp, yielding six routes.
struct TraceConfig {
  RoiSpec roi;
  double road_length = 3000.0;
  std::vector<double> exit_ramps = {500.0, 1000.0, 2500.0};
  double entrance_ramp = 2000.0;
  double main_road_y = 100.0;
  double lane_width = 3.5;
  int lanes = 3;
  double ramp_lateral_speed = 10.0;  // m/s while leaving on an exit ramp
  int num_vehicles = 10;
  int num_rounds = 60;
  int entry_window = 20;  // entry rounds drawn uniformly from [1, entry_window]
  double round_duration = 10.0;
  double speed_min = 15.0;
  double speed_max = 30.0;
  double accel_min = -1.0;
  double accel_max = 1.0;

  void validate() const;
};

// Routes 1..4 enter from the west (exit at each ramp or the east end);
// routes 5..6 enter at the entrance ramp.
struct Route {
  int id = 1;
  bool enters_from_ramp = false;
  double exit_x = 0.0;
  bool exits_via_ramp = false;
};
std::vector<Route> routes(const TraceConfig& config);

struct GeneratedTrace {
  MobilityTrace trace;
  std::map<VehicleId, int> route_of;  // vehicle id -> route id in 1..6
};

GeneratedTrace generate_trace_detailed(const TraceConfig& config, std::uint64_t seed);
MobilityTrace generate_trace(const TraceConfig& config, std::uint64_t seed);

// CSV header: round,vehicle_id,x,y,speed,accel
// One row per vehicle per round; trailing rounds with no vehicles are not written.
void write_trace_csv(const MobilityTrace& trace, std::ostream& out);
void write_trace_csv(const MobilityTrace& trace, const std::filesystem::path& path);
MobilityTrace read_trace_csv(std::istream& in, double round_duration = 10.0);
MobilityTrace ingest_trace(const std::filesystem::path& path, double round_duration = 10.0);

}  // namespace mdfl::mobility
