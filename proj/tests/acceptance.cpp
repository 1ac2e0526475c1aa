// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Usage: mdfl_acceptance <path to mdfl CLI>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/core.h>

#include "mdfl/experiment.hpp"
#include "support.hpp"

using namespace mdfl;
using mdfl::test::Costs;
using mobility::VehicleId;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Counts individual checks and remembers the first failure.
struct Tally {
  int checks = 0;
  int failures = 0;
  std::string first;

  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok && failures++ == 0) first = what;
  }
  Outcome outcome(const std::string& summary) const {
    if (failures == 0) return {true, summary};
    return {false, fmt::format("{} ({} of {} checks failed; first: {})", summary, failures, checks, first)};
  }
};

bool near(double a, double b, double tol = 1e-9) { return std::abs(a - b) <= tol; }

Costs costs_of(const protocol::ProtocolParams& p) {
  Costs c;
  c.e_itr = p.compute.e_itr.to_double();
  c.e_edge = p.comm.e_edge.to_double();
  c.e_cloud = p.comm.e_cloud.to_double();
  c.t_itr = p.compute.t_itr.to_double();
  c.t_edge = p.comm.t_edge.to_double();
  c.t_cloud = p.comm.t_cloud.to_double();
  c.t_round = p.compute.t_round.to_double();
  c.r = p.comm.r;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- 1: closed-form examples ------------------------------------------------

Outcome equation_suite() {
  using namespace mobility;
  using namespace comms;
  Tally t;
  const VehicleKinematics o{1, 0, 0, 0, 0}, p34{2, 3, 4, 0, 0}, a100{3, 100, 0, 0, 0}, a300{4, 300, 0, 0, 0};
  t.expect(distance(o, p34) == 5.0, "distance 3-4-5");
  t.expect(distance(o, o) == 0.0, "distance identity");
  t.expect(distance(a100, a300) == 200.0, "distance axis");
  t.expect(direct_comm_indicator(200, 200) == 1.0, "indicator boundary");
  t.expect(direct_comm_indicator(200.001, 200) == 0.0, "indicator outside");
  t.expect(direct_comm_indicator(0, 200) == 1.0, "indicator zero");
  t.expect(predict_displacement(10, 0, 2) == 20.0, "displacement uniform");
  t.expect(predict_displacement(0, 2, 3) == 9.0, "displacement accel");
  t.expect(predict_displacement(17, 3, 0) == 0.0, "displacement t=0");
  const VehicleKinematics u{1, 1, 0, 0.5, 0}, v{2, 0, 0, 0, 0}, same_u{1, 4, 0, 12, 1}, same_v{2, 9, 0, 12, 1};
  t.expect(predict_distance(same_u, same_v, 5, 3) == 5.0, "forecast identical motion");
  t.expect(predict_distance(u, v, 1, 1) == 1.5, "forecast hand example");
  t.expect(predict_distance(u, v, 1, 0) == 1.0, "forecast t=0");

  CommParams cp;
  ComputeParams cmp;
  t.expect(follower_comm_energy(cp, 1) == Energy::from_units(2), "follower energy p=1");
  t.expect(follower_comm_energy(cp, 0) == Energy::from_units(5), "follower energy p=0");
  t.expect(follower_comm_energy(cp, 0.5) == Energy::from_double(3.5), "follower energy p=0.5");
  const std::vector<double> three_direct{1, 1, 1}, mixed{1, 1, 0}, none{}, pair{1, 0}, one_indirect{0};
  t.expect(leader_comm_energy(cp, three_direct) == Energy::from_units(6), "leader energy direct");
  t.expect(leader_comm_energy(cp, mixed) == Energy::from_units(9), "leader energy mixed");
  t.expect(leader_comm_energy(cp, none) == Energy::from_units(0), "leader energy empty");
  t.expect(follower_comm_time(cp, 1) == Duration::from_units(1), "follower time p=1");
  t.expect(follower_comm_time(cp, 0) == Duration::from_units(2), "follower time p=0");
  t.expect(follower_comm_time(cp, 0.5) == Duration::from_double(1.5), "follower time p=0.5");
  t.expect(leader_comm_time(cp, pair) == Duration::from_units(2), "leader time max");
  t.expect(leader_comm_time(cp, three_direct) == Duration::from_units(1), "leader time direct");
  t.expect(leader_comm_time(cp, one_indirect) == Duration::from_units(2), "leader time indirect");
  t.expect(round_energy(cmp, 3, Energy::from_units(2)) == Energy::from_units(21), "round energy l=3");
  t.expect(round_energy(cmp, 1, Energy::from_units(5)) == Energy::from_units(20), "round energy indirect");
  t.expect(round_energy(cmp, 7, Energy::from_units(2)) == Energy::from_units(41), "round energy l=7");
  t.expect(round_time(cmp, 7, Duration::from_units(1)) == Duration::from_units(10), "round time l=7");
  t.expect(round_time(cmp, 8, Duration::from_units(1)) == Duration::from_units(11), "round time l=8");
  t.expect(round_time(cmp, 1, Duration::from_units(2)) == Duration::from_units(7), "round time indirect");
  const auto pred = predicted_comm_energies(cp, 1, {{2, 1.0}, {3, 1.0}});
  t.expect(pred.at(1) == Energy::from_units(4) && pred.at(2) == Energy::from_units(2) &&
               pred.at(3) == Energy::from_units(2),
           "predicted energies direct");
  const auto cloud = predicted_comm_energies(cp, 1, {{2, 0.0}, {3, 0.0}, {4, 0.0}});
  t.expect(cloud.at(1) == Energy::from_units(15), "predicted energies cloud");
  t.expect(predicted_comm_energies(cp, 1, {}).at(1) == Energy::from_units(0), "predicted energies alone");

  EnergyLedger ledger({{1, Energy::from_units(1000)}});
  t.expect(ledger.residual(1) == Energy::from_units(1000), "ledger untouched");
  const RoundCharge c21{1, Energy::from_units(15), Energy::from_units(6), Energy::from_units(21)};
  const RoundCharge c41{1, Energy::from_units(35), Energy::from_units(6), Energy::from_units(41)};
  ledger.commit_round(1, std::span(&c21, 1));
  t.expect(ledger.residual(1) == Energy::from_units(979), "ledger 979");
  ledger.commit_round(2, std::span(&c41, 1));
  t.expect(ledger.residual(1) == Energy::from_units(938), "ledger 938");

  const std::map<VehicleId, double> res{{1, 100}, {2, 300}, {3, 600}};
  t.expect(near(protocol::energy_ratio(res, 3), 0.6), "W 0.6");
  t.expect(protocol::energy_ratio({{1, 5}, {2, 5}, {3, 5}, {4, 5}}, 2) == 0.25, "W symmetric");
  t.expect(protocol::energy_ratio({{1, 5}}, 1) == 1.0, "W single");
  t.expect(protocol::participation_ratio(5, 5) == 1.0, "G peak");
  t.expect(near(protocol::participation_ratio(3, 5), std::exp(-2.0)), "G h=3");
  t.expect(protocol::participation_ratio(7, 5) == protocol::participation_ratio(3, 5), "G symmetry");
  protocol::ParticipationTracker at_peak(5);
  for (int i = 0; i < 5; ++i) at_peak.increment({3});
  t.expect(near(protocol::leader_score(3, res, at_peak, 1.0), 1.6), "score 1.6");
  t.expect(protocol::leader_score(3, res, at_peak, 0.0) == protocol::energy_ratio(res, 3), "score eps=0");
  protocol::ParticipationTracker fresh(5);
  t.expect(protocol::argmax_leader(res, fresh, 0.0) == VehicleId{3}, "argmax eps=0");
  t.expect(protocol::argmax_leader({{4, 10}, {9, 10}}, fresh, 1.0) == VehicleId{4}, "argmax tie");

  const std::vector<double> one_r{1.0}, one_v{0.5};
  const std::vector<std::uint8_t> one_d{0};
  t.expect(near(marl::gae(one_r, one_v, 0.0, 0.99, 0.95, one_d)[0], 0.5), "GAE single step");
  const std::vector<double> ones{1, 1, 1}, zeros{0, 0, 0}, rs{0.3, -2, 5};
  const auto ret = marl::discounted_returns(ones, 0.5);
  t.expect(ret == std::vector<double>{1.75, 1.5, 1.0}, "returns geometric");
  t.expect(marl::discounted_returns(rs, 0.0) == rs, "returns gamma=0");
  t.expect(marl::discounted_returns(zeros, 0.9) == zeros, "returns zero");
  const auto same = marl::clipped_surrogate(1.0, 0.7, 0.2);
  t.expect(same.objective == 0.7 && !same.clipped_branch, "clip identity ratio");
  const auto high = marl::clipped_surrogate(1.5, 1.0, 0.2);
  t.expect(near(high.factor, 1.2) && high.clipped_branch, "clip factor 1.2");
  t.expect(marl::clipped_value_loss(2.5, 2.5, 2.5, 0.2) == 0.0, "value loss zero");
  return t.outcome(fmt::format("{} closed-form examples", t.checks));
}

// ---- 2 and 3: randomized runs -----------------------------------------------

exp::ExperimentConfig random_config(std::mt19937_64& rng, int vehicles) {
  auto c = mdfl::test::desk_config(rng());
  c.trace.num_vehicles = vehicles;
  c.task.blobs.samples = 200;
  c.params.initial_energy = Energy::from_units(std::uniform_int_distribution<int>(30, 600)(rng));
  c.params.comm.r = std::uniform_real_distribution<double>(100, 400)(rng);
  c.params.comm.e_cloud = Energy::from_units(std::uniform_int_distribution<int>(3, 8)(rng));
  const double eps[] = {0, 0.01, 0.1, 1, 10};
  c.params.epsilon = eps[rng() % 5];
  return c;
}

std::unique_ptr<marl::MappoTrainer> quick_policy() {
  auto c = mdfl::test::desk_config(100);
  c.episodes = 30;
  return exp::train_policy(c).policy;
}

exp::RunResult run_with(const exp::ExperimentConfig& c, exp::Scheduler s, const marl::MappoTrainer* policy) {
  return exp::run_experiment(c, s, s == exp::Scheduler::kMappo ? policy : nullptr);
}

Outcome conservation(const marl::MappoTrainer& policy) {
  std::mt19937_64 rng(2);
  Tally t;
  int runs = 0, committed = 0;
  for (; runs < 120; ++runs) {
    const auto s = static_cast<exp::Scheduler>(runs % 3);
    const int n = s == exp::Scheduler::kMappo ? 4 : 2 + static_cast<int>(rng() % 9);
    const auto c = random_config(rng, n);
    const auto r = run_with(c, s, &policy);
    Energy drawn, rows;
    for (const auto& [id, e0] : r.ledger.initial_energies()) drawn = drawn + (e0 - r.ledger.residual(id));
    for (const auto& row : r.ledger.rows()) rows = rows + row.e_sum;
    t.expect(drawn == rows, fmt::format("run {}: drawn {} vs rows {}", runs, drawn.to_string(), rows.to_string()));
    committed += r.rounds_committed;
  }
  return t.outcome(fmt::format("{} runs, {} committed rounds, exact equality", runs, committed));
}

// Replays every attempted round from the raw trace and the cost formulas.
void replay_run(const exp::ExperimentConfig& c, exp::Scheduler s, const exp::RunResult& r, Tally& t, int& rounds) {
  const auto trace = exp::make_trace(c);
  const Costs k = costs_of(c.params);
  const auto& roi = c.params.roi;
  const double floor = k.e_itr + 3 * k.e_edge;
  const int L = static_cast<int>(std::floor((k.t_round - 3 * k.t_edge) / k.t_itr));
  const int l_dfl = static_cast<int>(std::floor((k.t_round - 2 * k.t_edge) / k.t_itr));

  std::map<VehicleId, double> residual;
  for (auto id : trace->vehicle_ids()) residual[id] = c.params.initial_energy.to_double();
  std::map<VehicleId, int> h;
  std::map<int, std::vector<const comms::EnergyRow*>> rows_by_round;
  for (const auto& row : r.ledger.rows()) rows_by_round[row.round].push_back(&row);
  const std::string tag = fmt::format("{} seed {}", exp::scheduler_name(s), c.seed);

  for (const auto& rec : r.rounds) {
    const auto& snap = trace->at(rec.round);
    std::vector<VehicleId> expect_members;
    for (const auto& v : snap.vehicles) {
      const bool inside = v.x >= roi.x_min && v.x <= roi.x_max && v.y >= roi.y_min && v.y <= roi.y_max;
      if (inside && residual.at(v.vehicle_id) >= floor) expect_members.push_back(v.vehicle_id);
    }
    t.expect(rec.members == expect_members, tag + fmt::format(" round {}: member set", rec.round));
    const auto rows = rows_by_round[rec.round];
    if (!rec.feasible) {
      t.expect(rows.empty(), tag + " rejected round charged energy");
      continue;
    }
    ++rounds;
    std::map<VehicleId, int> iters;
    for (std::size_t i = 0; i < rec.members.size(); ++i) iters[rec.members[i]] = rec.iterations[i];
    for (const auto& [id, l] : iters) {
      if (s == exp::Scheduler::kDfl) t.expect(l == l_dfl, tag + " dfl iteration count");
      else t.expect(l >= 1 && l <= L, tag + " iteration count out of range");
    }
    t.expect(s == exp::Scheduler::kDfl ? !rec.leader.has_value() : rec.leader.has_value(), tag + " leader presence");
    if (s == exp::Scheduler::kMappo && rec.leader) {
      std::map<VehicleId, double> res;
      double total = 0;
      for (auto id : rec.members) total += (res[id] = residual.at(id));
      auto score = [&](VehicleId id) {
        const double g = std::exp(-0.5 * (h[id] - c.params.rho) * (h[id] - c.params.rho));
        return res.at(id) / total + c.params.epsilon * g;
      };
      double best = -1e300;
      for (auto id : rec.members) best = std::max(best, score(id));
      t.expect(score(*rec.leader) >= best - 1e-12 * std::max(1.0, std::abs(best)), tag + " leader rule");
    }
    const auto replay = mdfl::test::replay_round(snap, rec.leader, iters, k);
    t.expect(rows.size() == iters.size(), tag + " one ledger row per member");
    double t_max = 0;
    for (const auto* row : rows) {
      const auto& o = replay.at(row->vehicle_id);
      const double before = residual.at(row->vehicle_id);
      t.expect(near(row->e_sum.to_double(), o.e_sum), tag + fmt::format(" round {} vehicle {}: e_sum {} vs {}",
                                                                        rec.round, row->vehicle_id,
                                                                        row->e_sum.to_double(), o.e_sum));
      t.expect(near(row->e_cmp.to_double(), k.e_itr * iters.at(row->vehicle_id)), tag + " e_cmp");
      t.expect(near(row->e_cmp.to_double() + row->e_com.to_double(), o.e_sum), tag + " e_cmp + e_com");
      t.expect(o.e_sum <= before + 1e-9, tag + " realized energy exceeds residual");
      t.expect(o.t_sum <= k.t_round + 1e-9, tag + " round time exceeds t_round");
      t.expect(near(row->e_res.to_double(), before - o.e_sum), tag + " residual after row");
      t_max = std::max(t_max, o.t_sum);
    }
    t.expect(near(rec.t_max.to_double(), t_max), tag + " t_max");
    for (const auto* row : rows) residual[row->vehicle_id] -= row->e_sum.to_double();
    for (auto id : rec.members) h[id] += 1;
  }
}

Outcome constraint_replay(const marl::MappoTrainer& policy) {
  std::mt19937_64 rng(3);
  Tally t;
  int runs = 0, rounds = 0;
  std::map<exp::Scheduler, int> per;
  for (int i = 0; i < 35; ++i) {
    for (auto s : {exp::Scheduler::kMappo, exp::Scheduler::kRandom, exp::Scheduler::kDfl}) {
      const int n = s == exp::Scheduler::kMappo ? 4 : 2 + static_cast<int>(rng() % 9);
      const auto c = random_config(rng, n);
      const auto r = run_with(c, s, &policy);
      const int before = rounds;
      replay_run(c, s, r, t, rounds);
      per[s] += rounds - before;
      ++runs;
    }
  }
  t.expect(per[exp::Scheduler::kMappo] > 0 && per[exp::Scheduler::kRandom] > 0 && per[exp::Scheduler::kDfl] > 0,
           "every scheduler committed at least one round");
  return t.outcome(fmt::format("{} runs, {} committed rounds replayed (mappo {}, random {}, dfl {})", runs, rounds,
                               per[exp::Scheduler::kMappo], per[exp::Scheduler::kRandom], per[exp::Scheduler::kDfl]));
}

// ---- 4: leader oracle ---------------------------------------------------------

Outcome leader_oracle() {
  std::mt19937_64 rng(4);
  Tally t;
  const double eps[] = {0, 0.01, 0.1, 1, 10};
  for (int i = 0; i < 1000; ++i) {
    const double e = eps[i % 5];
    const int n = 2 + static_cast<int>(rng() % 19);
    std::map<VehicleId, double> res;
    std::map<VehicleId, int> h;
    protocol::ParticipationTracker tracker(5.0);
    for (VehicleId id = 1; id <= n; ++id) {
      res[id] = std::uniform_real_distribution<double>(1, 1000)(rng);
      h[id] = static_cast<int>(rng() % 13);
      for (int j = 0; j < h[id]; ++j) tracker.increment({id});
    }
    const auto got = protocol::argmax_leader(res, tracker, e);
    t.expect(got == mdfl::test::brute_force_leader(res, h, 5.0, e), fmt::format("instance {}", i));
    if (e == 0.0) {
      const auto max_res = std::max_element(res.begin(), res.end(), [](auto& a, auto& b) { return a.second < b.second; });
      t.expect(got == max_res->first, fmt::format("instance {}: max residual", i));
    }
  }
  return t.outcome("1000 instances, N in 2..20, 5 epsilon values");
}

// ---- 5: gradients -------------------------------------------------------------

double half_sq(const nn::NetSpec& spec, const nn::ParamVector& p, const std::vector<double>& x,
               const std::vector<double>& y) {
  const auto out = nn::forward(spec, p, x).output;
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += 0.5 * (out[i] - y[i]) * (out[i] - y[i]);
  return s;
}

Outcome gradient_check() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  double worst = 0;
  std::size_t largest = 0;
  for (int net = 0; net < 50; ++net) {
    nn::NetSpec spec;
    do {
      const std::size_t depth = 1 + rng() % 3;
      spec.layer_sizes = {1 + rng() % 6};
      for (std::size_t d = 0; d < depth; ++d) spec.layer_sizes.push_back(1 + rng() % 10);
      spec.layer_sizes.push_back(1 + rng() % 5);
      spec.hidden = net % 2 ? nn::Activation::kTanh : nn::Activation::kRelu;
      spec.head = net % 3 ? nn::Head::kLinear : nn::Head::kSoftmax;
    } while (spec.num_params() > 200);
    largest = std::max(largest, spec.num_params());
    nn::Rng init(static_cast<std::uint64_t>(net));
    auto p = nn::init_params(spec, init);
    for (auto& v : p) v += 0.1 * u(rng);
    std::vector<double> x(spec.layer_sizes.front()), y(spec.layer_sizes.back());
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const auto cache = nn::forward(spec, p, x);
    std::vector<double> g_out(y.size()), grad(p.size(), 0.0);
    for (std::size_t i = 0; i < y.size(); ++i) g_out[i] = cache.output[i] - y[i];
    nn::backward(spec, p, cache, g_out, grad);
    constexpr double h = 1e-5;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = half_sq(spec, p, x, y);
      p[i] = saved - h;
      const double down = half_sq(spec, p, x, y);
      p[i] = saved;
      const double fd = (up - down) / (2 * h);
      // floor keeps exactly-zero gradients from dividing by zero
      worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i])));
    }
  }
  const std::string detail = fmt::format("50 nets up to {} params, max relative error {:.2e}", largest, worst);
  return {worst < 1e-4, detail};
}

// ---- 6: GAE identities --------------------------------------------------------

Outcome gae_identities() {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-3, 3);
  double worst = 0;
  for (int seq = 0; seq < 100; ++seq) {
    const std::size_t T = 1 + rng() % 40;
    std::vector<double> r(T), v(T);
    for (auto& x : r) x = u(rng);
    for (auto& x : v) x = u(rng);
    const double boot = u(rng);
    const double gamma = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
    const std::vector<std::uint8_t> d(T, 0);
    const auto delta = marl::td_errors(r, v, boot, gamma, d);
    const auto a0 = marl::gae(r, v, boot, gamma, 0.0, d);
    const auto a1 = marl::gae(r, v, boot, gamma, 1.0, d);
    const auto ret = marl::discounted_returns(r, gamma);
    for (std::size_t i = 0; i < T; ++i) {
      // independent one-step TD error
      const double next = i + 1 < T ? v[i + 1] : boot;
      worst = std::max(worst, std::abs(delta[i] - (r[i] + gamma * next - v[i])));
      worst = std::max(worst, std::abs(a0[i] - delta[i]));
      const double tail = std::pow(gamma, static_cast<double>(T - i)) * boot;
      worst = std::max(worst, std::abs(a1[i] + v[i] - (ret[i] + tail)));
    }
  }
  return {worst <= 1e-10, fmt::format("100 sequences, max deviation {:.2e}", worst)};
}

// ---- 7: aggregation -----------------------------------------------------------

Outcome aggregation_equivalences() {
  using namespace fl;
  Tally t;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  AggregationStrategy avg, nova;
  nova.kind = StrategyKind::kFedNova;
  double nova_gap = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 20, clients = 1 + rng() % 8;
    const int l = 1 + static_cast<int>(rng() % 8);
    ParamVector start(n);
    for (auto& x : start) x = u(rng);
    std::vector<ClientUpdate> ups;
    for (std::size_t c = 0; c < clients; ++c) {
      ParamVector m(n);
      for (auto& x : m) x = u(rng);
      ups.push_back({static_cast<VehicleId>(c + 1), m, l, 1 + rng() % 50, std::nullopt});
    }
    const auto w = sample_weights(ups);
    const auto a = aggregate(ups, w, start, avg);
    const auto b = aggregate(ups, w, start, nova);
    for (std::size_t i = 0; i < n; ++i) nova_gap = std::max(nova_gap, std::abs(a[i] - b[i]));
  }
  t.expect(nova_gap <= 1e-12, fmt::format("FedNova gap {:.2e}", nova_gap));

  const auto spec = mdfl::test::task_spec();
  AggregationStrategy prox;
  prox.kind = StrategyKind::kFedProx;
  prox.mu = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    nn::Rng init(seed);
    const auto start = nn::init_params(spec, init);
    const auto client = mdfl::test::blob_client(seed);
    const int l = 1 + static_cast<int>(seed % 7);
    t.expect(local_train(spec, start, client, l, 0.05, prox, 1).model ==
                 local_train(spec, start, client, l, 0.05, avg, 1).model,
             "FedProx(0) is not bitwise FedAvg");
  }

  // Single client: control variates stay in sync, so Scaffold local steps are
  // plain SGD and the new control is (x - y) / (l * eta).
  {
    AggregationStrategy sc;
    sc.kind = StrategyKind::kScaffold;
    sc.total_clients = 1;
    nn::Rng init(9);
    auto global = nn::init_params(spec, init);
    const auto client = mdfl::test::blob_client(9);
    const double eta = 0.1;
    for (int round = 0; round < 5; ++round) {
      const int l = 1 + round;
      const auto c_server = sc.server_control_or_zero(global.size());
      const auto c_client = sc.client_control_or_zero(3, global.size());
      const auto local = local_train(spec, global, client, l, eta, sc, 3);
      const auto plain = local_train(spec, global, client, l, eta, avg, 3);
      double drift = 0;
      for (std::size_t i = 0; i < global.size(); ++i) drift = std::max(drift, std::abs(local.model[i] - plain.model[i]));
      t.expect(drift <= 1e-12, fmt::format("Scaffold round {}: drift {:.2e} from SGD", round, drift));
      const std::vector<ClientUpdate> ups{{3, local.model, l, client.train.size(), local.new_client_control}};
      for (std::size_t i = 0; i < global.size(); ++i) {
        const double expect = c_client[i] - c_server[i] + (global[i] - local.model[i]) / (l * eta);
        t.expect(near((*local.new_client_control)[i], expect, 1e-12), "Scaffold control update");
      }
      const auto next = aggregate(ups, std::vector<double>{1.0}, global, sc);
      t.expect(next == local.model, "Scaffold single-client aggregate");
      for (std::size_t i = 0; i < global.size(); ++i)
        t.expect(near(sc.server_control[i], sc.client_control.at(3)[i], 1e-12), "server control equals client control");
      global = next;
    }
  }

  for (auto kind : {StrategyKind::kFedAvg, StrategyKind::kFedNova, StrategyKind::kFedProx, StrategyKind::kScaffold}) {
    AggregationStrategy s;
    s.kind = kind;
    s.total_clients = 5;
    ParamVector m(12);
    for (auto& x : m) x = u(rng);
    std::vector<ClientUpdate> ups;
    for (VehicleId id = 1; id <= 5; ++id)
      ups.push_back({id, m, static_cast<int>(id), static_cast<std::size_t>(10 * id), ParamVector(12, 0.0)});
    const auto out = aggregate(ups, sample_weights(ups), m, s);
    double gap = 0;
    for (std::size_t i = 0; i < m.size(); ++i) gap = std::max(gap, std::abs(out[i] - m[i]));
    t.expect(gap <= 1e-15, fmt::format("{} fixed point moved by {:.2e}", static_cast<int>(kind), gap));
  }
  return t.outcome(fmt::format("FedNova vs FedAvg max gap {:.2e}; FedProx(0) bitwise; Scaffold identity; fixed points",
                               nova_gap));
}

// ---- 8: bandit -----------------------------------------------------------------

Outcome bandit() {
  Tally t;
  std::vector<std::string> used;
  for (std::uint64_t seed : {1, 2, 3}) {
    marl::BanditEnv env(1.0, 0.2);
    marl::PpoConfig cfg;
    cfg.steps_per_trajectory = 8;
    cfg.hidden = {16};
    cfg.learning_rate = 0.01;
    marl::MappoTrainer trainer(env.groups(), cfg, seed);
    const auto view = env.reset().views[0][0];
    double p = trainer.action_probs(0, view)[0];
    int updates = 0;
    while (updates < 500 && p < 0.95) {
      trainer.train_episode(env);
      ++updates;
      p = trainer.action_probs(0, view)[0];
    }
    t.expect(p >= 0.95, fmt::format("seed {}: p = {:.3f} after 500 updates", seed, p));
    used.push_back(fmt::format("seed {}: {} updates", seed, updates));
  }
  std::string joined;
  for (const auto& s : used) joined += (joined.empty() ? "" : ", ") + s;
  return t.outcome(joined);
}

// ---- 9 and 10: desk-scale ordering and learning curve ----------------------------

struct DeskResult {
  double acc_mappo = 0, acc_dfl = 0, acc_random = 0;
  double ecr_mappo = 0, ecr_dfl = 0;
  double q1 = 0, q4 = 0;
  int seeds_rising = 0;
};

DeskResult desk_runs() {
  DeskResult d;
  constexpr int kSeeds = 5;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const auto c = mdfl::test::desk_config(seed);
    const auto trained = exp::train_policy(c);
    const auto m = exp::run_experiment(c, exp::Scheduler::kMappo, trained.policy.get());
    const auto f = exp::run_experiment(c, exp::Scheduler::kDfl, nullptr);
    const auto r = exp::run_experiment(c, exp::Scheduler::kRandom, nullptr);
    d.acc_mappo += m.f_acc / kSeeds;
    d.acc_dfl += f.f_acc / kSeeds;
    d.acc_random += r.f_acc / kSeeds;
    d.ecr_mappo += m.ecr / kSeeds;
    d.ecr_dfl += f.ecr / kSeeds;
    const auto& curve = trained.curve;
    const std::size_t q = curve.size() / 4;
    double first = 0, last = 0;
    for (std::size_t i = 0; i < q; ++i) {
      first += curve[i].accumulated_reward / static_cast<double>(q);
      last += curve[curve.size() - q + i].accumulated_reward / static_cast<double>(q);
    }
    d.q1 += first / kSeeds;
    d.q4 += last / kSeeds;
    if (last > first) ++d.seeds_rising;
  }
  return d;
}

// ---- 11: participation ratio shape ---------------------------------------------

Outcome unimodal() {
  protocol::ParticipationTracker tracker(5.0);
  std::vector<double> g;
  for (int h = 0; h <= 12; ++h) {
    g.push_back(protocol::participation_ratio(tracker.count(7), tracker.rho()));
    tracker.increment({7});
  }
  bool ok = std::max_element(g.begin(), g.end()) - g.begin() == 5 && g[5] == 1.0;
  for (int h = 1; h <= 12; ++h) ok = ok && (h <= 5 ? g[h] > g[h - 1] : g[h] < g[h - 1]);
  return {ok, fmt::format("G(0..12) peaks at h = {} with value {}", std::max_element(g.begin(), g.end()) - g.begin(),
                          g[5])};
}

// ---- 12: determinism through the CLI ---------------------------------------------

Outcome determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no CLI path given"};
  mdfl::test::TempDir dir("mdfl_acceptance");
  const auto ini = dir.path / "det.ini";
  std::ofstream(ini) << "[run]\nvehicles = 4\n[resources]\ninitial_energy = 200\n[fl]\nsamples = 400\n"
                        "[marl]\nepisodes = 20\nsteps_per_trajectory = 10\n";
  auto sh = [&](const std::string& args) {
    const std::string cmd = fmt::format("\"{}\" {} --config \"{}\" --seed 3 >/dev/null 2>&1", cli, args, ini.string());
    return std::system(cmd.c_str()) == 0;
  };
  Tally t;
  for (const char* rep : {"a", "b"}) {
    const auto base = dir.path / rep;
    t.expect(sh(fmt::format("train --out \"{}\"", (base / "train").string())), "train failed");
    for (const char* s : {"random", "dfl"})
      t.expect(sh(fmt::format("run --scheduler {} --out \"{}\"", s, (base / s).string())), "run failed");
    t.expect(sh(fmt::format("run --scheduler mappo --policy \"{}\" --out \"{}\"", (base / "train" / "policy.bin").string(),
                            (base / "mappo").string())),
             "mappo run failed");
  }
  int compared = 0;
  for (const char* sub : {"train", "random", "dfl", "mappo"}) {
    for (const auto& e : std::filesystem::directory_iterator(dir.path / "a" / sub)) {
      if (e.path().extension() != ".csv") continue;
      const auto other = dir.path / "b" / sub / e.path().filename();
      t.expect(std::filesystem::exists(other) && slurp(e.path()) == slurp(other),
               fmt::format("{}/{} differs", sub, e.path().filename().string()));
      ++compared;
    }
  }
  t.expect(compared >= 13, fmt::format("only {} CSV files produced", compared));
  return t.outcome(fmt::format("{} CSV files byte-identical across two executions", compared));
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  int failed = 0;
  auto report = [&](int id, const std::string& name, double limit_s, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0 && secs >= limit_s) {
      o.pass = false;
      o.detail += fmt::format("; exceeded {} s", limit_s);
    }
    if (!o.pass) ++failed;
    std::cout << fmt::format("{} criterion {:>2} {}: {} [{:.2f} s]", o.pass ? "PASS" : "FAIL", id, name, o.detail,
                             secs)
              << std::endl;
  };

  report(1, "equation unit suite", 1.0, equation_suite);
  std::unique_ptr<marl::MappoTrainer> policy;
  try {
    policy = quick_policy();
  } catch (const std::exception& e) {
    std::cerr << "policy training failed: " << e.what() << "\n";
  }
  auto with_policy = [&](Outcome (*f)(const marl::MappoTrainer&)) {
    return [&, f] { return policy ? f(*policy) : Outcome{false, "no policy"}; };
  };
  report(2, "energy conservation", 10.0, with_policy(conservation));
  report(3, "constraint replay", 0, with_policy(constraint_replay));
  report(4, "leader selection oracle", 5.0, leader_oracle);
  report(5, "gradient check", 10.0, gradient_check);
  report(6, "GAE identities", 0, gae_identities);
  report(7, "aggregation equivalences", 0, aggregation_equivalences);
  report(8, "PPO bandit sanity", 60.0, bandit);

  DeskResult desk;
  std::string desk_error;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    desk = desk_runs();
  } catch (const std::exception& e) {
    desk_error = e.what();
  }
  const double desk_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(9, "desk-scale ordering", 0, [&] {
    if (!desk_error.empty()) return Outcome{false, "exception: " + desk_error};
    const bool ok = desk.acc_mappo >= desk.acc_random && desk.acc_mappo >= desk.acc_dfl && desk.ecr_mappo >= desk.ecr_dfl &&
                    desk_secs < 900;
    return Outcome{ok, fmt::format("5-seed means: F_acc mappo {:.4f}, random {:.4f}, dfl {:.4f}; ECR mappo {:.4f}, "
                                   "dfl {:.4f}; training and runs took {:.0f} s",
                                   desk.acc_mappo, desk.acc_random, desk.acc_dfl, desk.ecr_mappo, desk.ecr_dfl,
                                   desk_secs)};
  });
  report(10, "learning curve", 0, [&] {
    if (!desk_error.empty()) return Outcome{false, "exception: " + desk_error};
    return Outcome{desk.q4 > desk.q1, fmt::format("mean accumulated reward first quartile {:.3f}, last quartile {:.3f} "
                                                  "({} of 5 seeds rising)",
                                                  desk.q1, desk.q4, desk.seeds_rising)};
  });
  report(11, "participation unimodality", 0, unimodal);
  report(12, "determinism", 0, [&] { return determinism(cli); });

  std::cout << (failed == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failed)) << std::endl;
  return failed == 0 ? 0 : 1;
}
