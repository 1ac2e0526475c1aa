#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "mdfl/experiment.hpp"
#include "mdfl/protocol.hpp"

namespace mdfl::test {

using mobility::VehicleId;
using mobility::VehicleKinematics;

inline VehicleKinematics car(VehicleId id, double x, double y = 100.0, double speed = 0.0, double accel = 0.0) {
  return {id, x, y, speed, accel};
}

// Trace where every round repeats the same vehicle layout.
inline std::shared_ptr<const mobility::MobilityTrace> static_trace(std::vector<VehicleKinematics> cars, int rounds) {
  auto t = std::make_shared<mobility::MobilityTrace>();
  std::sort(cars.begin(), cars.end(), [](const auto& a, const auto& b) { return a.vehicle_id < b.vehicle_id; });
  for (int k = 1; k <= rounds; ++k) t->snapshots.push_back({k, cars});
  return t;
}

inline fl::ClientDataset blob_client(std::uint64_t seed, std::size_t samples = 40) {
  nn::Rng rng(seed);
  fl::BlobSpec spec{2, 2, samples, 3.0, 0.5, 0.0};
  auto data = fl::make_blobs(spec, rng);
  fl::ClientDataset c;
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    (i % 5 == 0 ? c.val : c.train).push_back(data.examples[i]);
  return c;
}

inline nn::NetSpec task_spec() { return {{2, 16, 2}, nn::Activation::kTanh, nn::Head::kLinear}; }

inline std::shared_ptr<const protocol::SimulationData> make_data(std::shared_ptr<const mobility::MobilityTrace> trace,
                                                                 std::uint64_t seed = 7, bool same_data = false) {
  auto d = std::make_shared<protocol::SimulationData>();
  d->trace = trace;
  d->model_spec = task_spec();
  nn::Rng rng(seed);
  d->initial_model = nn::init_params(d->model_spec, rng);
  for (auto id : trace->vehicle_ids()) d->clients[id] = blob_client(same_data ? seed : seed + static_cast<std::uint64_t>(id));
  return d;
}

inline protocol::SimulationState make_state(std::vector<VehicleKinematics> cars, int rounds = 5,
                                            protocol::ProtocolParams params = {}) {
  return protocol::SimulationState(params, make_data(static_trace(std::move(cars), rounds)), {});
}

// Closed-form cost constants written out independently of the library.
struct Costs {
  double e_itr = 5, e_edge = 2, e_cloud = 5, t_itr = 1, t_edge = 1, t_cloud = 2, t_round = 10, r = 200;
};

inline double oracle_position(const VehicleKinematics& k, double t) { return k.x + k.speed * t + 0.5 * k.accel * t * t; }

inline double oracle_distance_after(const VehicleKinematics& a, const VehicleKinematics& b, double t) {
  const double dx = oracle_position(a, t) - oracle_position(b, t);
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

struct ReplayCost {
  double e_sum = 0.0;
  double t_sum = 0.0;
};

// Realized per-vehicle energy and time of a committed round, recomputed from
// raw kinematics: hub-and-spoke for leader rounds (three phases), all-to-all
// for leaderless rounds (two phases).
inline std::map<VehicleId, ReplayCost> replay_round(const mobility::Snapshot& snap,
                                                    const std::optional<VehicleId>& leader,
                                                    const std::map<VehicleId, int>& iterations, const Costs& c) {
  auto kin = [&](VehicleId id) { return *snap.find(id); };
  auto link = [&](VehicleId a, VehicleId b, double t) {
    const bool direct = oracle_distance_after(kin(a), kin(b), t) <= c.r;
    return std::pair{direct ? c.e_edge : c.e_cloud, direct ? c.t_edge : c.t_cloud};
  };
  std::map<VehicleId, ReplayCost> out;
  if (leader) {
    double lead_e = 0.0, lead_t = 0.0;
    for (const auto& [id, l] : iterations) {
      if (id == *leader) continue;
      const auto [e, t] = link(*leader, id, c.t_itr * l);
      out[id] = {c.e_itr * l + 3 * e, c.t_itr * l + 3 * t};
      lead_e += e;
      lead_t = std::max(lead_t, t);
    }
    const int ll = iterations.at(*leader);
    out[*leader] = {c.e_itr * ll + 3 * lead_e, c.t_itr * ll + 3 * lead_t};
  } else {
    for (const auto& [id, l] : iterations) {
      double e = 0.0, t = 0.0;
      for (const auto& [peer, lp] : iterations) {
        if (peer == id) continue;
        const auto [pe, pt] = link(id, peer, c.t_itr * l);
        e += pe;
        t = std::max(t, pt);
      }
      out[id] = {c.e_itr * l + 2 * e, c.t_itr * l + 2 * t};
    }
  }
  return out;
}

// Brute-force leader: evaluates W + eps * G for every member by hand.
inline VehicleId brute_force_leader(const std::map<VehicleId, double>& residuals, const std::map<VehicleId, int>& h,
                                    double rho, double eps) {
  double total = 0.0;
  for (const auto& [id, e] : residuals) total += e;
  VehicleId best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& [id, e] : residuals) {
    const auto it = h.find(id);
    const double hv = it == h.end() ? 0.0 : it->second;
    const double score = e / total + eps * std::exp(-0.5 * (hv - rho) * (hv - rho));
    if (score > best_score) {
      best_score = score;
      best = id;
    }
  }
  return best;
}

// Desk-scale experiment used by the ordering and convergence checks.
inline exp::ExperimentConfig desk_config(std::uint64_t seed) {
  exp::ExperimentConfig c;
  c.seed = seed;
  c.trace.num_vehicles = 4;
  c.params.initial_energy = Energy::from_units(200);
  c.episodes = 300;
  c.ppo.steps_per_trajectory = 20;
  c.task.hidden = {16};
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() /
           (name + "_" + std::to_string(std::random_device{}()) + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace mdfl::test
