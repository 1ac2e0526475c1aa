#include "mdfl/mobility.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mdfl/error.hpp"

namespace mdfl::mobility {

void RoiSpec::validate() const {
  if (!(x_min < x_max) || !(y_min < y_max)) {
    throw ConfigError(fmt::format("RoI must satisfy x_min < x_max and y_min < y_max (got [{}, {}] x [{}, {}])",
                                  x_min, x_max, y_min, y_max));
  }
}

bool RoiSpec::contains(double x, double y) const {
  return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
}

const VehicleKinematics* Snapshot::find(VehicleId id) const {
  auto it = std::lower_bound(vehicles.begin(), vehicles.end(), id,
                             [](const VehicleKinematics& k, VehicleId v) { return k.vehicle_id < v; });
  if (it == vehicles.end() || it->vehicle_id != id) return nullptr;
  return &*it;
}

const Snapshot& MobilityTrace::at(int round) const {
  if (round < 1 || round > num_rounds()) {
    throw PreconditionError(fmt::format("round {} outside trace range [1, {}]", round, num_rounds()));
  }
  return snapshots[static_cast<std::size_t>(round - 1)];
}

std::set<VehicleId> MobilityTrace::vehicle_ids() const {
  std::set<VehicleId> ids;
  for (const auto& s : snapshots) {
    for (const auto& v : s.vehicles) ids.insert(v.vehicle_id);
  }
  return ids;
}

void MobilityTrace::validate() const {
  if (!(round_duration > 0.0)) throw ValidationError("trace round duration must be positive");
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const auto& s = snapshots[i];
    if (s.round != static_cast<int>(i) + 1) {
      throw ValidationError(fmt::format("snapshot {} has round index {}, expected {}", i, s.round, i + 1));
    }
    for (std::size_t j = 0; j < s.vehicles.size(); ++j) {
      const auto& v = s.vehicles[j];
      if (j > 0 && s.vehicles[j - 1].vehicle_id >= v.vehicle_id) {
        throw ValidationError(fmt::format("round {}: vehicle ids not unique/sorted at id {}", s.round, v.vehicle_id));
      }
      if (!(v.speed >= 0.0)) {
        throw ValidationError(fmt::format("round {}: vehicle {} has negative speed", s.round, v.vehicle_id));
      }
    }
  }
}

double distance(const VehicleKinematics& a, const VehicleKinematics& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

double direct_comm_indicator(double d, double r) { return d <= r ? 1.0 : 0.0; }

double predict_displacement(double speed, double accel, double t) { return speed * t + 0.5 * accel * t * t; }

double predict_distance(const VehicleKinematics& u, const VehicleKinematics& v, double d_now, double t_prev_cmp) {
  const double du = predict_displacement(u.speed, u.accel, t_prev_cmp);
  const double dv = predict_displacement(v.speed, v.accel, t_prev_cmp);
  return std::max(0.0, d_now + (u.x - v.x) * (du - dv));
}

VehicleKinematics advance(const VehicleKinematics& k, double t) {
  VehicleKinematics out = k;
  out.x += predict_displacement(k.speed, k.accel, t);
  out.speed = std::max(0.0, k.speed + k.accel * t);
  return out;
}

std::set<VehicleId> roi_members(const Snapshot& snapshot, const RoiSpec& roi) {
  std::set<VehicleId> ids;
  for (const auto& v : snapshot.vehicles) {
    if (roi.contains(v.x, v.y)) ids.insert(v.vehicle_id);
  }
  return ids;
}

void TraceConfig::validate() const {
  roi.validate();
  if (!(road_length > 0.0)) throw ConfigError("road_length must be positive");
  if (num_vehicles < 2) throw ConfigError("trace needs at least 2 vehicles");
  if (num_rounds < 1) throw ConfigError("num_rounds must be >= 1");
  if (entry_window < 1 || entry_window > num_rounds) {
    throw ConfigError("entry_window must lie in [1, num_rounds]");
  }
  if (!(round_duration > 0.0)) throw ConfigError("round_duration must be positive");
  if (speed_min < 0.0 || !(speed_min <= speed_max) || !(speed_max > 0.0)) {
    throw ConfigError("speed range must satisfy 0 <= speed_min <= speed_max, speed_max > 0");
  }
  if (!(accel_min <= accel_max)) throw ConfigError("accel_min must not exceed accel_max");
  if (lanes < 1 || !(lane_width > 0.0)) throw ConfigError("lanes and lane_width must be positive");
  if (!(ramp_lateral_speed > 0.0)) throw ConfigError("ramp_lateral_speed must be positive");
  if (entrance_ramp < 0.0 || entrance_ramp > road_length) throw ConfigError("entrance ramp must lie on the road");
  for (double x : exit_ramps) {
    if (x < 0.0 || x > road_length) throw ConfigError("exit ramps must lie on the road");
  }
}

std::vector<Route> routes(const TraceConfig& config) {
  std::vector<double> exits = config.exit_ramps;
  std::sort(exits.begin(), exits.end());
  std::vector<Route> out;
  int id = 1;
  for (double x : exits) out.push_back({id++, false, x, true});
  out.push_back({id++, false, config.road_length, false});
  for (double x : exits) {
    if (x > config.entrance_ramp) out.push_back({id++, true, x, true});
  }
  out.push_back({id++, true, config.road_length, false});
  return out;
}

namespace {

struct ActiveVehicle {
  VehicleId id = 0;
  Route route;
  int entry_round = 1;
  VehicleKinematics state;
  bool on_exit_ramp = false;
  bool retired = false;
};

}  // namespace

GeneratedTrace generate_trace_detailed(const TraceConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto route_set = routes(config);
  std::uniform_int_distribution<int> entry_dist(1, config.entry_window);
  std::uniform_int_distribution<std::size_t> route_dist(0, route_set.size() - 1);
  std::uniform_int_distribution<int> lane_dist(0, config.lanes - 1);
  std::uniform_real_distribution<double> speed_dist(config.speed_min, config.speed_max);
  std::uniform_real_distribution<double> accel_dist(config.accel_min, config.accel_max);

  GeneratedTrace out;
  out.trace.round_duration = config.round_duration;

  std::vector<ActiveVehicle> fleet;
  fleet.reserve(static_cast<std::size_t>(config.num_vehicles));
  for (int i = 0; i < config.num_vehicles; ++i) {
    ActiveVehicle v;
    v.id = i + 1;
    v.entry_round = entry_dist(rng);
    v.route = route_set[route_dist(rng)];
    const int lane = lane_dist(rng);
    v.state.vehicle_id = v.id;
    v.state.speed = speed_dist(rng);
    if (v.route.enters_from_ramp) {
      // Entrance ramp lane sits just south of the main road.
      v.state.x = config.entrance_ramp;
      v.state.y = config.main_road_y - static_cast<double>(config.lanes) * config.lane_width;
    } else {
      v.state.x = config.roi.x_min;
      v.state.y = config.main_road_y + static_cast<double>(lane) * config.lane_width;
    }
    out.route_of[v.id] = v.route.id;
    fleet.push_back(v);
  }

  const double dt = config.round_duration;
  for (int k = 1; k <= config.num_rounds; ++k) {
    Snapshot snap;
    snap.round = k;
    for (auto& v : fleet) {
      if (v.retired || v.entry_round > k) continue;
      v.state.accel = accel_dist(rng);
      snap.vehicles.push_back(v.state);
      if (!config.roi.contains(v.state.x, v.state.y)) {
        // Emitted once outside the RoI, then gone.
        v.retired = true;
        continue;
      }
      const double s0 = v.state.speed;
      const double s1 = std::clamp(s0 + v.state.accel * dt, config.speed_min, config.speed_max);
      v.state.x += 0.5 * (s0 + s1) * dt;
      v.state.speed = s1;
      if (v.route.exits_via_ramp && v.state.x >= v.route.exit_x) v.on_exit_ramp = true;
      if (v.on_exit_ramp) v.state.y -= config.ramp_lateral_speed * dt;
    }
    out.trace.snapshots.push_back(std::move(snap));
  }
  return out;
}

MobilityTrace generate_trace(const TraceConfig& config, std::uint64_t seed) {
  return generate_trace_detailed(config, seed).trace;
}

void write_trace_csv(const MobilityTrace& trace, std::ostream& out) {
  out << "round,vehicle_id,x,y,speed,accel\n";
  for (const auto& s : trace.snapshots) {
    for (const auto& v : s.vehicles) {
      out << fmt::format("{},{},{},{},{},{}\n", s.round, v.vehicle_id, v.x, v.y, v.speed, v.accel);
    }
  }
}

void write_trace_csv(const MobilityTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  write_trace_csv(trace, out);
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
T parse_field(const std::string& text, std::size_t line_no, const char* column) {
  T value{};
  std::size_t used = 0;
  try {
    if constexpr (std::is_same_v<T, double>) {
      value = std::stod(text, &used);
    } else {
      value = static_cast<T>(std::stoll(text, &used));
    }
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw ParseError(fmt::format("line {}: cannot parse column '{}' from '{}'", line_no, column, text));
  }
  if constexpr (std::is_same_v<T, double>) {
    if (!std::isfinite(value)) {
      throw ParseError(fmt::format("line {}: non-finite value in column '{}'", line_no, column));
    }
  }
  return value;
}

}  // namespace

MobilityTrace read_trace_csv(std::istream& in, double round_duration) {
  static const std::vector<std::string> kHeader = {"round", "vehicle_id", "x", "y", "speed", "accel"};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (split_csv(line) != kHeader) {
    throw ParseError(fmt::format("line 1: expected header 'round,vehicle_id,x,y,speed,accel', got '{}'", line));
  }

  MobilityTrace trace;
  trace.round_duration = round_duration;
  int last_round = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != kHeader.size()) {
      throw ParseError(fmt::format("line {}: expected {} columns, found {}", line_no, kHeader.size(), f.size()));
    }
    const int round = parse_field<int>(f[0], line_no, "round");
    VehicleKinematics v;
    v.vehicle_id = parse_field<VehicleId>(f[1], line_no, "vehicle_id");
    v.x = parse_field<double>(f[2], line_no, "x");
    v.y = parse_field<double>(f[3], line_no, "y");
    v.speed = parse_field<double>(f[4], line_no, "speed");
    v.accel = parse_field<double>(f[5], line_no, "accel");
    if (round < 1) throw ParseError(fmt::format("line {}: round must be a positive integer", line_no));
    if (round < last_round) {
      throw ValidationError(fmt::format("line {}: round {} after round {} (time must be non-decreasing)", line_no,
                                        round, last_round));
    }
    if (v.speed < 0.0) throw ValidationError(fmt::format("line {}: negative speed", line_no));
    // Rounds without any rows become empty snapshots.
    while (trace.num_rounds() < round) {
      Snapshot s;
      s.round = trace.num_rounds() + 1;
      trace.snapshots.push_back(std::move(s));
    }
    last_round = round;
    auto& snap = trace.snapshots.back();
    if (snap.find(v.vehicle_id) != nullptr) {
      throw ValidationError(fmt::format("line {}: duplicate vehicle {} in round {}", line_no, v.vehicle_id, round));
    }
    auto pos = std::lower_bound(snap.vehicles.begin(), snap.vehicles.end(), v.vehicle_id,
                                [](const VehicleKinematics& a, VehicleId id) { return a.vehicle_id < id; });
    snap.vehicles.insert(pos, v);
  }
  trace.validate();
  return trace;
}

MobilityTrace ingest_trace(const std::filesystem::path& path, double round_duration) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open trace '{}'", path.string()));
  return read_trace_csv(in, round_duration);
}

}  // namespace mdfl::mobility
