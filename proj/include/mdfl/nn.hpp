#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mdfl::nn {

using Rng = std::mt19937_64;

enum class Activation { kRelu, kTanh };
enum class Head { kLinear, kSoftmax };

// Fully connected network. Parameters are one flat vector; layer i owns a
// row-major (out x in) weight block followed by its bias block.
struct NetSpec {
  std::vector<std::size_t> layer_sizes;
  Activation hidden = Activation::kTanh;
  Head head = Head::kLinear;

  void validate() const;
  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_size() const { return layer_sizes.front(); }
  std::size_t output_size() const { return layer_sizes.back(); }
  std::size_t num_params() const;
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;

  friend bool operator==(const NetSpec&, const NetSpec&) = default;
};

using ParamVector = std::vector<double>;

// Glorot-uniform weights, zero biases.
ParamVector init_params(const NetSpec& spec, Rng& rng);

struct ForwardCache {
  // activations[0] is the input; activations[i] is the post-activation of
  // layer i (the last entry holds the raw logits of the output layer).
  std::vector<std::vector<double>> activations;
  std::vector<double> output;  // after the head

  std::span<const double> logits() const { return activations.back(); }
};

ForwardCache forward(const NetSpec& spec, std::span<const double> params, std::span<const double> input);

// Accumulates dLoss/dParams into `grad` given dLoss/dOutput (post-head).
void backward(const NetSpec& spec, std::span<const double> params, const ForwardCache& cache,
              std::span<const double> grad_output, std::span<double> grad);
// Same, but the upstream gradient is taken with respect to the pre-head
// logits. For a linear head the two entry points coincide.
void backward_logits(const NetSpec& spec, std::span<const double> params, const ForwardCache& cache,
                     std::span<const double> grad_logits, std::span<double> grad);

std::vector<double> softmax(std::span<const double> logits);
// Softmax restricted to entries where mask != 0; masked entries are 0.
// Throws PreconditionError if nothing is allowed.
std::vector<double> masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> mask);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double lr) : m(n, 0.0), v(n, 0.0), learning_rate(lr) {}
};

// Bias-corrected Adam. Throws PreconditionError on shape mismatch and
// InvariantError on a non-finite gradient (params untouched in both cases).
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad);

void sgd_step(std::span<double> params, std::span<const double> grad, double eta);

struct CategoricalSample {
  int action = 0;
  double log_prob = 0.0;
  double entropy = 0.0;
};

// Renormalizes `probs` over the allowed entries and draws one index.
CategoricalSample sample_categorical(std::span<const double> probs, std::span<const std::uint8_t> mask, Rng& rng);
double entropy(std::span<const double> probs);
int argmax(std::span<const double> values);

// Checkpoint file: magic "MDFLNET1", u32 network count, then per network
// u32 layer count, u32 sizes, u8 activation, u8 head, u64 parameter count
// and that many little-endian IEEE-754 doubles.
struct Network {
  NetSpec spec;
  ParamVector params;
};
void write_networks(const std::filesystem::path& path, std::span<const Network> nets);
std::vector<Network> read_networks(const std::filesystem::path& path);

}  // namespace mdfl::nn
