#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <fstream>
#include <sstream>

#include "mdfl/error.hpp"
#include "mdfl/experiment.hpp"

namespace mdfl::exp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(out))
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, v));
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  const auto s = trim(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, v));
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    const auto n = to_int<std::size_t>(key, item);
    if (n == 0) throw ConfigError(fmt::format("{}: layer sizes must be positive", key));
    out.push_back(n);
  }
  return out;
}

std::string sizes_str(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

double positive(const std::string& key, double x) {
  if (!(x > 0.0)) throw ConfigError(fmt::format("{}: must be positive, got {}", key, x));
  return x;
}

double non_negative(const std::string& key, double x) {
  if (!(x >= 0.0)) throw ConfigError(fmt::format("{}: must be non-negative, got {}", key, x));
  return x;
}

int at_least(const std::string& key, int x, int lo) {
  if (x < lo) throw ConfigError(fmt::format("{}: must be >= {}, got {}", key, lo, x));
  return x;
}

Quantity positive_quantity(const std::string& key, const std::string& v) {
  return Quantity::from_double(positive(key, to_double(key, v)));
}

std::string num(double x) { return fmt::format("{}", x); }

struct Field {
  const char* path;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = std::string;
  static const std::vector<Field> table = {
      {"run.seed", [](C& c, const S& k, const S& v) { c.seed = to_int<std::uint64_t>(k, v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"run.scheduler",
       [](C& c, const S& k, const S& v) {
         try {
           c.scheduler = parse_scheduler(trim(v));
         } catch (const ConfigError& e) {
           throw ConfigError(fmt::format("{}: {}", k, e.what()));
         }
       },
       [](const C& c) { return scheduler_name(c.scheduler); }},
      {"run.max_rounds", [](C& c, const S& k, const S& v) { c.max_rounds = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.max_rounds); }},
      {"run.vehicles", [](C& c, const S& k, const S& v) { c.trace.num_vehicles = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.trace.num_vehicles); }},
      {"run.ecr",
       [](C& c, const S& k, const S& v) {
         const auto s = trim(v);
         if (s == "ratio") c.ecr_per_vehicle = false;
         else if (s == "per_vehicle") c.ecr_per_vehicle = true;
         else throw ConfigError(fmt::format("{}: expected ratio or per_vehicle, got '{}'", k, v));
       },
       [](const C& c) { return S(c.ecr_per_vehicle ? "per_vehicle" : "ratio"); }},

      {"trace.file", [](C& c, const S&, const S& v) {
         const auto s = trim(v);
         if (s.empty()) c.trace_file.reset();
         else c.trace_file = s;
       },
       [](const C& c) { return c.trace_file ? c.trace_file->string() : S(); }},
      {"trace.rounds", [](C& c, const S& k, const S& v) { c.trace.num_rounds = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.trace.num_rounds); }},
      {"trace.entry_window",
       [](C& c, const S& k, const S& v) { c.trace.entry_window = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.trace.entry_window); }},
      {"trace.speed_min", [](C& c, const S& k, const S& v) { c.trace.speed_min = non_negative(k, to_double(k, v)); },
       [](const C& c) { return num(c.trace.speed_min); }},
      {"trace.speed_max", [](C& c, const S& k, const S& v) { c.trace.speed_max = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.trace.speed_max); }},
      {"trace.accel_min", [](C& c, const S& k, const S& v) { c.trace.accel_min = to_double(k, v); },
       [](const C& c) { return num(c.trace.accel_min); }},
      {"trace.accel_max", [](C& c, const S& k, const S& v) { c.trace.accel_max = to_double(k, v); },
       [](const C& c) { return num(c.trace.accel_max); }},

      {"resources.initial_energy",
       [](C& c, const S& k, const S& v) { c.params.initial_energy = positive_quantity(k, v); },
       [](const C& c) { return c.params.initial_energy.to_string(); }},
      {"resources.e_itr", [](C& c, const S& k, const S& v) { c.params.compute.e_itr = positive_quantity(k, v); },
       [](const C& c) { return c.params.compute.e_itr.to_string(); }},
      {"resources.e_edge", [](C& c, const S& k, const S& v) { c.params.comm.e_edge = positive_quantity(k, v); },
       [](const C& c) { return c.params.comm.e_edge.to_string(); }},
      {"resources.e_cloud", [](C& c, const S& k, const S& v) { c.params.comm.e_cloud = positive_quantity(k, v); },
       [](const C& c) { return c.params.comm.e_cloud.to_string(); }},
      {"resources.t_round", [](C& c, const S& k, const S& v) { c.params.compute.t_round = positive_quantity(k, v); },
       [](const C& c) { return c.params.compute.t_round.to_string(); }},
      {"resources.t_itr", [](C& c, const S& k, const S& v) { c.params.compute.t_itr = positive_quantity(k, v); },
       [](const C& c) { return c.params.compute.t_itr.to_string(); }},
      {"resources.t_edge", [](C& c, const S& k, const S& v) { c.params.comm.t_edge = positive_quantity(k, v); },
       [](const C& c) { return c.params.comm.t_edge.to_string(); }},
      {"resources.t_cloud", [](C& c, const S& k, const S& v) { c.params.comm.t_cloud = positive_quantity(k, v); },
       [](const C& c) { return c.params.comm.t_cloud.to_string(); }},
      {"resources.radius", [](C& c, const S& k, const S& v) { c.params.comm.r = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.params.comm.r); }},

      {"leader.epsilon", [](C& c, const S& k, const S& v) { c.params.epsilon = non_negative(k, to_double(k, v)); },
       [](const C& c) { return num(c.params.epsilon); }},
      {"leader.rho", [](C& c, const S& k, const S& v) { c.params.rho = non_negative(k, to_double(k, v)); },
       [](const C& c) { return num(c.params.rho); }},

      {"fl.learning_rate",
       [](C& c, const S& k, const S& v) { c.params.learning_rate = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.params.learning_rate); }},
      {"fl.aggregation",
       [](C& c, const S& k, const S& v) {
         const auto s = trim(v);
         if (s == "fedavg") c.aggregation = fl::StrategyKind::kFedAvg;
         else if (s == "fednova") c.aggregation = fl::StrategyKind::kFedNova;
         else if (s == "fedprox") c.aggregation = fl::StrategyKind::kFedProx;
         else if (s == "scaffold") c.aggregation = fl::StrategyKind::kScaffold;
         else throw ConfigError(fmt::format("{}: expected fedavg, fednova, fedprox or scaffold, got '{}'", k, v));
       },
       [](const C& c) {
         switch (c.aggregation) {
           case fl::StrategyKind::kFedAvg: return S("fedavg");
           case fl::StrategyKind::kFedNova: return S("fednova");
           case fl::StrategyKind::kFedProx: return S("fedprox");
           case fl::StrategyKind::kScaffold: return S("scaffold");
         }
         return S();
       }},
      {"fl.mu", [](C& c, const S& k, const S& v) { c.mu = non_negative(k, to_double(k, v)); },
       [](const C& c) { return num(c.mu); }},
      {"fl.partition",
       [](C& c, const S& k, const S& v) {
         const auto s = trim(v);
         if (s == "iid") c.task.partition = fl::PartitionMode::kIid;
         else if (s == "pathological") c.task.partition = fl::PartitionMode::kPathological;
         else if (s == "dirichlet") c.task.partition = fl::PartitionMode::kDirichlet;
         else throw ConfigError(fmt::format("{}: expected iid, pathological or dirichlet, got '{}'", k, v));
       },
       [](const C& c) {
         switch (c.task.partition) {
           case fl::PartitionMode::kIid: return S("iid");
           case fl::PartitionMode::kPathological: return S("pathological");
           case fl::PartitionMode::kDirichlet: return S("dirichlet");
         }
         return S();
       }},
      {"fl.alpha", [](C& c, const S& k, const S& v) { c.task.alpha = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.task.alpha); }},
      {"fl.val_fraction",
       [](C& c, const S& k, const S& v) {
         const double x = to_double(k, v);
         if (!(x > 0.0 && x < 1.0)) throw ConfigError(fmt::format("{}: must be in (0, 1), got {}", k, x));
         c.task.val_fraction = x;
       },
       [](const C& c) { return num(c.task.val_fraction); }},
      {"fl.task",
       [](C& c, const S& k, const S& v) {
         const auto s = trim(v);
         if (s == "blobs") c.task.kind = TaskKind::kBlobs;
         else if (s == "idx") c.task.kind = TaskKind::kIdx;
         else throw ConfigError(fmt::format("{}: expected blobs or idx, got '{}'", k, v));
       },
       [](const C& c) { return S(c.task.kind == TaskKind::kBlobs ? "blobs" : "idx"); }},
      {"fl.hidden", [](C& c, const S& k, const S& v) { c.task.hidden = to_sizes(k, v); },
       [](const C& c) { return sizes_str(c.task.hidden); }},
      {"fl.dim", [](C& c, const S& k, const S& v) { c.task.blobs.dim = static_cast<std::size_t>(at_least(k, to_int<int>(k, v), 2)); },
       [](const C& c) { return std::to_string(c.task.blobs.dim); }},
      {"fl.classes", [](C& c, const S& k, const S& v) { c.task.blobs.classes = at_least(k, to_int<int>(k, v), 2); },
       [](const C& c) { return std::to_string(c.task.blobs.classes); }},
      {"fl.samples",
       [](C& c, const S& k, const S& v) { c.task.blobs.samples = static_cast<std::size_t>(at_least(k, to_int<int>(k, v), 1)); },
       [](const C& c) { return std::to_string(c.task.blobs.samples); }},
      {"fl.separation",
       [](C& c, const S& k, const S& v) { c.task.blobs.separation = non_negative(k, to_double(k, v)); },
       [](const C& c) { return num(c.task.blobs.separation); }},
      {"fl.noise", [](C& c, const S& k, const S& v) { c.task.blobs.noise = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.task.blobs.noise); }},
      {"fl.images", [](C& c, const S&, const S& v) { c.task.images = trim(v); },
       [](const C& c) { return c.task.images.string(); }},
      {"fl.labels", [](C& c, const S&, const S& v) { c.task.labels = trim(v); },
       [](const C& c) { return c.task.labels.string(); }},
      {"fl.idx_classes", [](C& c, const S& k, const S& v) { c.task.idx_classes = at_least(k, to_int<int>(k, v), 2); },
       [](const C& c) { return std::to_string(c.task.idx_classes); }},

      {"marl.episodes", [](C& c, const S& k, const S& v) { c.episodes = at_least(k, to_int<int>(k, v), 0); },
       [](const C& c) { return std::to_string(c.episodes); }},
      {"marl.steps_per_trajectory",
       [](C& c, const S& k, const S& v) { c.ppo.steps_per_trajectory = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.ppo.steps_per_trajectory); }},
      {"marl.batch",
       [](C& c, const S& k, const S& v) { c.ppo.batch_trajectories = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.ppo.batch_trajectories); }},
      {"marl.epochs", [](C& c, const S& k, const S& v) { c.ppo.epochs = at_least(k, to_int<int>(k, v), 1); },
       [](const C& c) { return std::to_string(c.ppo.epochs); }},
      {"marl.gamma",
       [](C& c, const S& k, const S& v) {
         const double x = to_double(k, v);
         if (!(x > 0.0 && x <= 1.0)) throw ConfigError(fmt::format("{}: must be in (0, 1], got {}", k, x));
         c.ppo.gamma = x;
       },
       [](const C& c) { return num(c.ppo.gamma); }},
      {"marl.gae_lambda",
       [](C& c, const S& k, const S& v) {
         const double x = to_double(k, v);
         if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(fmt::format("{}: must be in [0, 1], got {}", k, x));
         c.ppo.gae_lambda = x;
       },
       [](const C& c) { return num(c.ppo.gae_lambda); }},
      {"marl.clip", [](C& c, const S& k, const S& v) { c.ppo.clip = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.ppo.clip); }},
      {"marl.entropy", [](C& c, const S& k, const S& v) { c.ppo.entropy_coef = non_negative(k, to_double(k, v)); },
       [](const C& c) { return num(c.ppo.entropy_coef); }},
      {"marl.learning_rate",
       [](C& c, const S& k, const S& v) { c.ppo.learning_rate = positive(k, to_double(k, v)); },
       [](const C& c) { return num(c.ppo.learning_rate); }},
      {"marl.hidden", [](C& c, const S& k, const S& v) { c.ppo.hidden = to_sizes(k, v); },
       [](const C& c) { return sizes_str(c.ppo.hidden); }},
      {"marl.reward_committed_only",
       [](C& c, const S& k, const S& v) { c.reward_committed_only = to_bool(k, v); },
       [](const C& c) { return S(c.reward_committed_only ? "true" : "false"); }},
      {"marl.normalize_advantages",
       [](C& c, const S& k, const S& v) { c.ppo.normalize_advantages = to_bool(k, v); },
       [](const C& c) { return S(c.ppo.normalize_advantages ? "true" : "false"); }},
  };
  return table;
}

const Field* find_field(const std::string& path) {
  for (const auto& f : fields())
    if (path == f.path) return &f;
  return nullptr;
}

}  // namespace

Scheduler parse_scheduler(const std::string& name) {
  if (name == "mappo") return Scheduler::kMappo;
  if (name == "random") return Scheduler::kRandom;
  if (name == "dfl") return Scheduler::kDfl;
  throw ConfigError(fmt::format("unknown scheduler '{}' (expected mappo, random or dfl)", name));
}

std::string scheduler_name(Scheduler s) {
  switch (s) {
    case Scheduler::kMappo: return "mappo";
    case Scheduler::kRandom: return "random";
    case Scheduler::kDfl: return "dfl";
  }
  return "?";
}

void ExperimentConfig::validate() const {
  auto wrap = [](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: {}", key, e.what()));
    }
  };
  wrap("resources", [&] { params.validate(); });
  wrap("trace", [&] { trace.validate(); });
  wrap("marl", [&] { ppo.validate(); });
  if (trace.speed_min > trace.speed_max) throw ConfigError("trace.speed_min: exceeds trace.speed_max");
  if (trace.accel_min > trace.accel_max) throw ConfigError("trace.accel_min: exceeds trace.accel_max");
  if (trace.num_vehicles < 2) throw ConfigError("run.vehicles: at least two vehicles are needed");
  if (task.kind == TaskKind::kIdx && (task.images.empty() || task.labels.empty()))
    throw ConfigError("fl.images: idx tasks need both fl.images and fl.labels");
  if (task.partition == fl::PartitionMode::kPathological) {
    const int classes = task.kind == TaskKind::kBlobs ? task.blobs.classes : task.idx_classes;
    if ((2 * trace.num_vehicles) % classes != 0)
      throw ConfigError(fmt::format("fl.partition: pathological split needs 2*N ({}) divisible by the class count {}",
                                    2 * trace.num_vehicles, classes));
  }
}

ExperimentConfig parse_config_string(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("line {}: {}", e.line(), e.message()));
  }
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      static const std::set<std::string> kSections = {"run", "trace", "resources", "leader", "fl", "marl"};
      if (kSections.count(section) == 0) throw ConfigError(fmt::format("{}: unknown key", section));
      continue;
    }
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      const auto* f = find_field(path);
      if (f == nullptr) throw ConfigError(fmt::format("{}: unknown key", path));
      f->set(c, path, value.data());
    }
  }
  c.trace.round_duration = c.params.compute.t_round.to_double();
  c.trace.roi = c.params.roi;
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("{}: cannot open config file", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str());
}

void set_config_value(ExperimentConfig& config, const std::string& path, const std::string& value) {
  const auto* f = find_field(path);
  if (f == nullptr) throw ConfigError(fmt::format("{}: unknown key", path));
  ExperimentConfig next = config;
  f->set(next, path, value);
  next.trace.round_duration = next.params.compute.t_round.to_double();
  next.validate();
  config = std::move(next);
}

std::string get_config_value(const ExperimentConfig& config, const std::string& path) {
  const auto* f = find_field(path);
  if (f == nullptr) throw ConfigError(fmt::format("{}: unknown key", path));
  return f->get(config);
}

std::string to_ini(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string path = f.path;
    const auto dot = path.find('.');
    const auto sec = path.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + fmt::format("[{}]\n", sec);
      section = sec;
    }
    out += fmt::format("{} = {}\n", path.substr(dot + 1), f.get(config));
  }
  return out;
}

}  // namespace mdfl::exp
