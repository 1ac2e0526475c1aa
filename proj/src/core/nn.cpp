#include "mdfl/nn.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "mdfl/error.hpp"

namespace mdfl::nn {

void NetSpec::validate() const {
  if (layer_sizes.size() < 2) throw PreconditionError("network needs at least an input and an output layer");
  for (auto n : layer_sizes) {
    if (n == 0) throw PreconditionError("layer sizes must be positive");
  }
  if (head == Head::kSoftmax && output_size() < 2) {
    throw PreconditionError("softmax head needs at least two outputs");
  }
}

std::size_t NetSpec::num_params() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) n += (layer_sizes[i] + 1) * layer_sizes[i + 1];
  return n;
}

std::size_t NetSpec::weight_offset(std::size_t layer) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < layer; ++i) n += (layer_sizes[i] + 1) * layer_sizes[i + 1];
  return n;
}

std::size_t NetSpec::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + layer_sizes[layer] * layer_sizes[layer + 1];
}

ParamVector init_params(const NetSpec& spec, Rng& rng) {
  spec.validate();
  ParamVector p(spec.num_params(), 0.0);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t fan_in = spec.layer_sizes[l];
    const std::size_t fan_out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const std::size_t w = spec.weight_offset(l);
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) p[w + i] = dist(rng);
  }
  return p;
}

namespace {

double activate(Activation a, double z) { return a == Activation::kRelu ? std::max(0.0, z) : std::tanh(z); }

// Derivative expressed through the activation output.
double activation_grad(Activation a, double out) {
  return a == Activation::kRelu ? (out > 0.0 ? 1.0 : 0.0) : 1.0 - out * out;
}

void check_params(const NetSpec& spec, std::span<const double> params) {
  if (params.size() != spec.num_params()) {
    throw PreconditionError(
        fmt::format("parameter vector has {} entries, network expects {}", params.size(), spec.num_params()));
  }
}

}  // namespace

ForwardCache forward(const NetSpec& spec, std::span<const double> params, std::span<const double> input) {
  check_params(spec, params);
  if (input.size() != spec.input_size()) {
    throw PreconditionError(fmt::format("input has {} entries, network expects {}", input.size(), spec.input_size()));
  }
  ForwardCache cache;
  cache.activations.reserve(spec.layer_sizes.size());
  cache.activations.emplace_back(input.begin(), input.end());
  const std::size_t layers = spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double* w = params.data() + spec.weight_offset(l);
    const double* b = params.data() + spec.bias_offset(l);
    const auto& prev = cache.activations.back();
    std::vector<double> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      double z = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) z += row[i] * prev[i];
      next[o] = (l + 1 < layers) ? activate(spec.hidden, z) : z;
    }
    cache.activations.push_back(std::move(next));
  }
  cache.output = spec.head == Head::kSoftmax ? softmax(cache.activations.back()) : cache.activations.back();
  return cache;
}

void backward_logits(const NetSpec& spec, std::span<const double> params, const ForwardCache& cache,
                     std::span<const double> grad_logits, std::span<double> grad) {
  check_params(spec, params);
  if (grad.size() != params.size()) throw PreconditionError("gradient buffer size mismatch");
  if (grad_logits.size() != spec.output_size()) throw PreconditionError("upstream gradient size mismatch");
  if (cache.activations.size() != spec.layer_sizes.size()) throw PreconditionError("forward cache does not match network");

  std::vector<double> delta(grad_logits.begin(), grad_logits.end());
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double* w = params.data() + spec.weight_offset(l);
    double* gw = grad.data() + spec.weight_offset(l);
    double* gb = grad.data() + spec.bias_offset(l);
    const auto& prev = cache.activations[l];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * prev[i];
    }
    if (l == 0) break;
    std::vector<double> next(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) next[i] += row[i] * d;
    }
    for (std::size_t i = 0; i < in; ++i) next[i] *= activation_grad(spec.hidden, prev[i]);
    delta = std::move(next);
  }
}

void backward(const NetSpec& spec, std::span<const double> params, const ForwardCache& cache,
              std::span<const double> grad_output, std::span<double> grad) {
  if (spec.head == Head::kLinear) {
    backward_logits(spec, params, cache, grad_output, grad);
    return;
  }
  if (grad_output.size() != cache.output.size()) throw PreconditionError("upstream gradient size mismatch");
  // Softmax Jacobian-vector product: dz = p * (g - <g, p>).
  const auto& p = cache.output;
  double dot = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += grad_output[i] * p[i];
  std::vector<double> dz(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) dz[i] = p[i] * (grad_output[i] - dot);
  backward_logits(spec, params, cache, dz, grad);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double hi = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - hi);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::vector<double> masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask) {
  if (mask.size() != logits.size()) throw PreconditionError("mask size does not match logits");
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) hi = std::max(hi, logits[i]);
  }
  if (hi == -std::numeric_limits<double>::infinity()) throw PreconditionError("every action is masked");
  std::vector<double> p(logits.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    p[i] = std::exp(logits[i] - hi);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw PreconditionError("adam: parameter, gradient and moment sizes differ");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw InvariantError("adam: non-finite gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

void sgd_step(std::span<double> params, std::span<const double> grad, double eta) {
  if (grad.size() != params.size()) throw PreconditionError("sgd: parameter and gradient sizes differ");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * grad[i];
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

CategoricalSample sample_categorical(std::span<const double> probs, std::span<const std::uint8_t> mask, Rng& rng) {
  if (mask.size() != probs.size()) throw PreconditionError("mask size does not match probabilities");
  std::vector<double> p(probs.size(), 0.0);
  double total = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!mask[i]) continue;
    any = true;
    p[i] = probs[i];
    total += p[i];
  }
  if (!any) throw PreconditionError("every action is masked");
  if (!(total > 0.0)) {
    // All allowed entries underflowed; fall back to uniform over them.
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = mask[i] ? 1.0 : 0.0;
    total = 0.0;
    for (double v : p) total += v;
  }
  for (auto& v : p) v /= total;

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  double acc = 0.0;
  int chosen = -1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    chosen = static_cast<int>(i);
    acc += p[i];
    if (u < acc) break;
  }
  CategoricalSample s;
  s.action = chosen;
  s.log_prob = std::log(p[static_cast<std::size_t>(chosen)]);
  s.entropy = entropy(p);
  return s;
}

namespace {

constexpr char kMagic[8] = {'M', 'D', 'F', 'L', 'N', 'E', 'T', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::istream& in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw ParseError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

void write_networks(const std::filesystem::path& path, std::span<const Network> nets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nets.size()));
  for (const auto& net : nets) {
    net.spec.validate();
    check_params(net.spec, net.params);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.spec.layer_sizes.size()));
    for (auto n : net.spec.layer_sizes) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(n));
    put_le<std::uint8_t>(out, net.spec.hidden == Activation::kRelu ? 0 : 1);
    put_le<std::uint8_t>(out, net.spec.head == Head::kLinear ? 0 : 1);
    put_le<std::uint64_t>(out, net.params.size());
    for (double v : net.params) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw IoError(fmt::format("write to '{}' failed", path.string()));
}

std::vector<Network> read_networks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw ParseError(fmt::format("'{}' is not a network checkpoint", path.string()));
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<Network> nets;
  for (std::uint32_t k = 0; k < count; ++k) {
    Network net;
    const auto layers = get_le<std::uint32_t>(in);
    if (layers < 2 || layers > 64) throw ParseError("checkpoint: implausible layer count");
    for (std::uint32_t i = 0; i < layers; ++i) net.spec.layer_sizes.push_back(get_le<std::uint32_t>(in));
    const auto act = get_le<std::uint8_t>(in);
    const auto head = get_le<std::uint8_t>(in);
    if (act > 1 || head > 1) throw ParseError("checkpoint: unknown activation or head tag");
    net.spec.hidden = act == 0 ? Activation::kRelu : Activation::kTanh;
    net.spec.head = head == 0 ? Head::kLinear : Head::kSoftmax;
    net.spec.validate();
    const auto n = get_le<std::uint64_t>(in);
    if (n != net.spec.num_params()) throw ParseError("checkpoint: parameter count does not match layer sizes");
    net.params.resize(n);
    for (auto& v : net.params) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(in));
      if (!std::isfinite(v)) throw ParseError("checkpoint: non-finite parameter");
    }
    nets.push_back(std::move(net));
  }
  return nets;
}

}  // namespace mdfl::nn
