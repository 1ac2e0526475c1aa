#include "mdfl/flcore.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "mdfl/error.hpp"

namespace mdfl::fl {

void BlobSpec::validate() const {
  if (dim < 2) throw ConfigError("blob dimensionality must be >= 2");
  if (classes < 2) throw ConfigError("blob task needs >= 2 classes");
  if (samples == 0) throw ConfigError("blob sample count must be positive");
  if (!(noise > 0.0) || !(separation >= 0.0)) throw ConfigError("blob noise must be positive, separation >= 0");
}

Dataset make_blobs(const BlobSpec& spec, nn::Rng& rng) {
  spec.validate();
  Dataset data;
  data.feature_dim = spec.dim;
  data.num_classes = spec.classes;
  std::normal_distribution<double> noise(0.0, spec.noise);
  data.examples.reserve(spec.samples);
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    const double angle = 2.0 * std::numbers::pi * c / spec.classes;
    Example ex;
    ex.label = c;
    ex.features.assign(spec.dim, spec.offset);
    ex.features[0] += spec.separation * std::cos(angle);
    ex.features[1] += spec.separation * std::sin(angle);
    for (auto& f : ex.features) f += noise(rng);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

void PartitionSpec::validate() const {
  if (num_clients < 2) throw ConfigError("partition needs >= 2 clients");
  if (mode == PartitionMode::kDirichlet && !(alpha > 0.0)) throw ConfigError("Dirichlet alpha must be > 0");
}

namespace {

std::vector<std::vector<std::size_t>> partition_iid(std::size_t n, int clients, nn::Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(clients));
  const std::size_t base = n / static_cast<std::size_t>(clients);
  const std::size_t extra = n % static_cast<std::size_t>(clients);
  std::size_t pos = 0;
  for (std::size_t c = 0; c < out.size(); ++c) {
    const std::size_t take = base + (c < extra ? 1 : 0);
    out[c].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos), idx.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }
  return out;
}

std::vector<std::vector<std::size_t>> by_class(const Dataset& data) {
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const int label = data.examples[i].label;
    if (label < 0 || label >= data.num_classes) throw ValidationError(fmt::format("label {} out of range", label));
    groups[static_cast<std::size_t>(label)].push_back(i);
  }
  return groups;
}

// Each class is cut into equal shards; client i receives shards i and
// i + clients of the class-major shard list, which always come from two
// different classes.
std::vector<std::vector<std::size_t>> partition_pathological(const Dataset& data, int clients, nn::Rng& rng) {
  const int shards = 2 * clients;
  if (data.num_classes < 2 || shards % data.num_classes != 0) {
    throw ConfigError(fmt::format("pathological split needs 2*clients ({}) divisible by the class count ({})", shards,
                                  data.num_classes));
  }
  const std::size_t per_class = static_cast<std::size_t>(shards / data.num_classes);
  auto groups = by_class(data);
  std::vector<std::size_t> class_order(groups.size());
  std::iota(class_order.begin(), class_order.end(), 0);
  std::shuffle(class_order.begin(), class_order.end(), rng);

  std::vector<std::vector<std::size_t>> shard_list;
  for (std::size_t c : class_order) {
    auto& g = groups[c];
    if (g.size() < per_class) {
      throw ConfigError(fmt::format("class {} has {} examples, cannot cut {} shards", c, g.size(), per_class));
    }
    std::shuffle(g.begin(), g.end(), rng);
    const std::size_t base = g.size() / per_class;
    const std::size_t extra = g.size() % per_class;
    std::size_t pos = 0;
    for (std::size_t s = 0; s < per_class; ++s) {
      const std::size_t take = base + (s < extra ? 1 : 0);
      shard_list.emplace_back(g.begin() + static_cast<std::ptrdiff_t>(pos),
                              g.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }
  std::vector<std::size_t> client_order(static_cast<std::size_t>(clients));
  std::iota(client_order.begin(), client_order.end(), 0);
  std::shuffle(client_order.begin(), client_order.end(), rng);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(clients));
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& dst = out[client_order[i]];
    dst = shard_list[i];
    dst.insert(dst.end(), shard_list[i + out.size()].begin(), shard_list[i + out.size()].end());
  }
  return out;
}

std::vector<std::vector<std::size_t>> partition_dirichlet(const Dataset& data, int clients, double alpha,
                                                          nn::Rng& rng) {
  const auto groups = by_class(data);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  constexpr int kMaxAttempts = 1000;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(clients));
    for (const auto& g0 : groups) {
      auto g = g0;
      std::shuffle(g.begin(), g.end(), rng);
      std::vector<double> q(static_cast<std::size_t>(clients));
      double sum = 0.0;
      for (auto& v : q) {
        v = gamma(rng);
        sum += v;
      }
      if (!(sum > 0.0)) {
        // Every draw underflowed (tiny alpha); give the class to one client.
        std::fill(q.begin(), q.end(), 0.0);
        q[std::uniform_int_distribution<std::size_t>(0, q.size() - 1)(rng)] = 1.0;
        sum = 1.0;
      }
      double cum = 0.0;
      std::size_t start = 0;
      for (std::size_t c = 0; c < q.size(); ++c) {
        cum += q[c] / sum;
        const std::size_t end =
            c + 1 == q.size() ? g.size() : std::min(g.size(), static_cast<std::size_t>(std::llround(cum * static_cast<double>(g.size()))));
        for (std::size_t i = start; i < std::max(start, end); ++i) out[c].push_back(g[i]);
        start = std::max(start, end);
      }
    }
    if (std::all_of(out.begin(), out.end(), [](const auto& v) { return !v.empty(); })) return out;
  }
  throw ConfigError("Dirichlet partition left a client empty after repeated resampling");
}

}  // namespace

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& data, const PartitionSpec& spec) {
  spec.validate();
  if (data.examples.empty()) throw PreconditionError("cannot partition an empty dataset");
  if (data.examples.size() < static_cast<std::size_t>(spec.num_clients)) {
    throw ConfigError("fewer examples than clients");
  }
  nn::Rng rng(spec.seed);
  std::vector<std::vector<std::size_t>> out;
  switch (spec.mode) {
    case PartitionMode::kIid:
      out = partition_iid(data.examples.size(), spec.num_clients, rng);
      break;
    case PartitionMode::kPathological:
      out = partition_pathological(data, spec.num_clients, rng);
      break;
    case PartitionMode::kDirichlet:
      out = partition_dirichlet(data, spec.num_clients, spec.alpha, rng);
      break;
  }
  return out;
}

std::vector<ClientDataset> partition(const Dataset& data, const PartitionSpec& spec, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("validation fraction must lie in [0, 1)");
  auto shares = partition_indices(data, spec);
  nn::Rng rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<ClientDataset> out;
  out.reserve(shares.size());
  for (auto& share : shares) {
    std::shuffle(share.begin(), share.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(share.size())));
    n_val = std::min(n_val, share.size() - 1);
    ClientDataset client;
    for (std::size_t i = 0; i < share.size(); ++i) {
      (i < n_val ? client.val : client.train).push_back(data.examples[share[i]]);
    }
    out.push_back(std::move(client));
  }
  return out;
}

void AggregationStrategy::validate() const {
  if (!(mu >= 0.0)) throw ConfigError("FedProx mu must be >= 0");
  if (total_clients < 1) throw ConfigError("strategy needs at least one client");
}

ParamVector AggregationStrategy::client_control_or_zero(VehicleId id, std::size_t n) const {
  auto it = client_control.find(id);
  return it == client_control.end() ? ParamVector(n, 0.0) : it->second;
}

ParamVector AggregationStrategy::server_control_or_zero(std::size_t n) const {
  return server_control.empty() ? ParamVector(n, 0.0) : server_control;
}

double loss_and_gradient(const nn::NetSpec& spec, std::span<const double> params, std::span<const Example> data,
                         std::span<double> grad) {
  if (data.empty()) throw PreconditionError("loss over an empty dataset");
  std::fill(grad.begin(), grad.end(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(data.size());
  double loss = 0.0;
  std::vector<double> g_logits(spec.output_size());
  for (const auto& ex : data) {
    const auto cache = nn::forward(spec, params, ex.features);
    const auto probs = nn::softmax(cache.logits());
    const auto y = static_cast<std::size_t>(ex.label);
    if (y >= probs.size()) throw ValidationError(fmt::format("label {} exceeds network outputs", ex.label));
    loss -= std::log(std::max(probs[y], 1e-300)) * inv_n;
    for (std::size_t k = 0; k < probs.size(); ++k) g_logits[k] = (probs[k] - (k == y ? 1.0 : 0.0)) * inv_n;
    nn::backward_logits(spec, params, cache, g_logits, grad);
  }
  return loss;
}

LocalResult local_train(const nn::NetSpec& spec, const ParamVector& start, const ClientDataset& client, int l,
                        double eta, const AggregationStrategy& strategy, VehicleId client_id) {
  if (l < 1) throw PreconditionError("local training needs l >= 1");
  if (client.train.empty()) throw PreconditionError("client has no training data");
  LocalResult out;
  out.model = start;
  out.iterations = l;
  const std::size_t n = start.size();
  ParamVector correction;
  ParamVector c_server;
  ParamVector c_client;
  if (strategy.kind == StrategyKind::kScaffold) {
    c_server = strategy.server_control_or_zero(n);
    c_client = strategy.client_control_or_zero(client_id, n);
    correction.resize(n);
    for (std::size_t i = 0; i < n; ++i) correction[i] = c_server[i] - c_client[i];
  }
  ParamVector grad(n);
  for (int step = 0; step < l; ++step) {
    const double loss = loss_and_gradient(spec, out.model, client.train, grad);
    if (!std::isfinite(loss)) throw InvariantError(fmt::format("non-finite local loss at step {}", step));
    if (strategy.kind == StrategyKind::kFedProx && strategy.mu != 0.0) {
      for (std::size_t i = 0; i < n; ++i) grad[i] += strategy.mu * (out.model[i] - start[i]);
    }
    if (!correction.empty()) {
      for (std::size_t i = 0; i < n; ++i) grad[i] += correction[i];
    }
    nn::sgd_step(out.model, grad, eta);
  }
  if (strategy.kind == StrategyKind::kScaffold) {
    ParamVector c_new(n);
    const double scale = eta != 0.0 ? 1.0 / (static_cast<double>(l) * eta) : 0.0;
    for (std::size_t i = 0; i < n; ++i) c_new[i] = c_client[i] - c_server[i] + (start[i] - out.model[i]) * scale;
    out.new_client_control = std::move(c_new);
  }
  return out;
}

std::vector<double> sample_weights(std::span<const ClientUpdate> updates) {
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.samples);
  if (!(total > 0.0)) throw PreconditionError("sample weights need a positive total sample count");
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto& u : updates) w.push_back(static_cast<double>(u.samples) / total);
  return w;
}

ParamVector aggregate(std::span<const ClientUpdate> updates, std::span<const double> weights,
                      const ParamVector& global_start, AggregationStrategy& strategy) {
  if (updates.empty()) throw PreconditionError("aggregate needs at least one model");
  if (weights.size() != updates.size()) throw PreconditionError("one weight per model is required");
  const std::size_t n = global_start.size();
  double wsum = 0.0;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    if (updates[k].model.size() != n) throw PreconditionError("aggregate: model shapes differ");
    if (!(weights[k] >= 0.0)) throw PreconditionError("aggregate: negative weight");
    wsum += weights[k];
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw PreconditionError(fmt::format("aggregate: weights sum to {}, not 1", wsum));

  ParamVector out(n, 0.0);
  if (strategy.kind == StrategyKind::kFedNova) {
    // Normalized averaging: tau_eff * sum(beta * d_v / tau_v).
    double tau_eff = 0.0;
    for (std::size_t k = 0; k < updates.size(); ++k) tau_eff += weights[k] * updates[k].iterations;
    ParamVector direction(n, 0.0);
    for (std::size_t k = 0; k < updates.size(); ++k) {
      if (updates[k].iterations < 1) throw PreconditionError("FedNova needs iterations >= 1");
      const double s = weights[k] / static_cast<double>(updates[k].iterations);
      for (std::size_t i = 0; i < n; ++i) direction[i] += s * (global_start[i] - updates[k].model[i]);
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = global_start[i] - tau_eff * direction[i];
    return out;
  }

  for (std::size_t k = 0; k < updates.size(); ++k) {
    for (std::size_t i = 0; i < n; ++i) out[i] += weights[k] * updates[k].model[i];
  }

  if (strategy.kind == StrategyKind::kScaffold) {
    ParamVector c = strategy.server_control_or_zero(n);
    const double inv_total = 1.0 / static_cast<double>(strategy.total_clients);
    for (const auto& u : updates) {
      if (!u.new_client_control || u.new_client_control->size() != n) {
        throw PreconditionError("Scaffold aggregation needs each client's new control variate");
      }
      const ParamVector old = strategy.client_control_or_zero(u.id, n);
      for (std::size_t i = 0; i < n; ++i) c[i] += inv_total * ((*u.new_client_control)[i] - old[i]);
    }
    for (const auto& u : updates) strategy.client_control[u.id] = *u.new_client_control;
    strategy.server_control = std::move(c);
  }
  return out;
}

double evaluate(const nn::NetSpec& spec, std::span<const double> model, std::span<const Example> val) {
  if (val.empty()) throw PreconditionError("evaluation needs a non-empty validation set");
  std::size_t correct = 0;
  for (const auto& ex : val) {
    const auto cache = nn::forward(spec, model, ex.features);
    if (nn::argmax(cache.logits()) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val.size());
}

double f_acc(std::span<const double> accuracies) {
  if (accuracies.empty()) throw PreconditionError("F_acc over an empty member set");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  return sum / static_cast<double>(accuracies.size());
}

double ecr(const comms::EnergyLedger& ledger) {
  return ledger.total_compute().to_double() / (ledger.total_spent().to_double() + kZeta);
}

double ecr_per_vehicle_mean(const comms::EnergyLedger& ledger) {
  std::map<VehicleId, std::pair<Energy, Energy>> per;
  for (const auto& row : ledger.rows()) {
    auto& [cmp, sum] = per[row.vehicle_id];
    cmp += row.e_cmp;
    sum += row.e_sum;
  }
  if (per.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [id, p] : per) total += p.first.to_double() / (p.second.to_double() + kZeta);
  return total / static_cast<double>(per.size());
}

Energy e_total(const comms::EnergyLedger& ledger, int round) {
  Energy total;
  for (const auto& row : ledger.rows()) {
    if (row.round <= round) total += row.e_sum;
  }
  return total;
}

namespace {

std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(fmt::format("IDX: truncated header ({})", what));
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Dataset ingest_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw IoError(fmt::format("cannot open IDX images '{}'", images.string()));
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw IoError(fmt::format("cannot open IDX labels '{}'", labels.string()));

  if (read_be32(img, "image magic") != 0x00000803u) throw ParseError("IDX images: bad magic (expected 0x00000803)");
  const std::uint32_t count = read_be32(img, "image count");
  const std::uint32_t rows = read_be32(img, "rows");
  const std::uint32_t cols = read_be32(img, "cols");
  if (read_be32(lab, "label magic") != 0x00000801u) throw ParseError("IDX labels: bad magic (expected 0x00000801)");
  const std::uint32_t label_count = read_be32(lab, "label count");
  if (label_count != count) {
    throw ParseError(fmt::format("IDX: {} images but {} labels", count, label_count));
  }
  const std::size_t pixels = std::size_t{rows} * cols;
  if (pixels == 0) throw ParseError("IDX images: zero-sized image");

  Dataset data;
  data.feature_dim = pixels;
  data.num_classes = num_classes;
  data.examples.reserve(count);
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!img) throw ParseError(fmt::format("IDX images: truncated payload at image {}", i));
    const int c = lab.get();
    if (c == std::char_traits<char>::eof()) throw ParseError(fmt::format("IDX labels: truncated payload at label {}", i));
    if (c >= num_classes) throw ValidationError(fmt::format("IDX label {} at index {} exceeds {} classes", c, i, num_classes));
    Example ex;
    ex.label = c;
    ex.features.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) ex.features[p] = buf[p] / 255.0;
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace mdfl::fl
