#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cfrl/rng.hpp"
#include "cfrl/tensor.hpp"

namespace cfrl::nn {

enum class LayerKind { Dense, LayerNorm, Relu, Tanh, SoftmaxGroup };

const char* to_string(LayerKind kind);

// Half-open column range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  // SoftmaxGroup only: disjoint ascending ranges, each normalised independently.
  // Columns outside every range pass through unchanged.
  std::vector<IndexRange> groups;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out, {}}; }
  static LayerSpec layer_norm(std::size_t dim) { return {LayerKind::LayerNorm, dim, dim, {}}; }
  static LayerSpec relu(std::size_t dim) { return {LayerKind::Relu, dim, dim, {}}; }
  static LayerSpec tanh(std::size_t dim) { return {LayerKind::Tanh, dim, dim, {}}; }
  static LayerSpec softmax_group(std::size_t dim, std::vector<IndexRange> groups) {
    return {LayerKind::SoftmaxGroup, dim, dim, std::move(groups)};
  }
};

// Dense: weights (in x out) and bias. LayerNorm: gain and shift. Others: empty.
struct LayerParams {
  Matrix weights;
  RowVector bias;
  RowVector gain;
  RowVector shift;
};

using ParameterSet = std::vector<LayerParams>;

inline constexpr double kLayerNormEpsilon = 1e-10;

// Intermediates recorded by Network::forward for a later backward pass.
struct ForwardCache {
  const void* owner = nullptr;
  std::uint64_t version = 0;
  std::vector<Matrix> activations;   // activations[i] is the input of layer i; back() is the output
  std::vector<Matrix> normalized;    // layer norm: (x - mean) * inv_std, per layer (empty otherwise)
  std::vector<ColVector> inv_std;    // layer norm: per-row 1/sqrt(var + eps), 0 for constant rows
  bool empty() const { return owner == nullptr; }
};

struct BackwardResult {
  ParameterSet gradients;
  Matrix input_gradient;
};

// A feed-forward stack of LayerSpecs with its parameters.
class Network {
 public:
  Network() = default;
  // Dense weights and biases ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)]; layer norm gain 1, shift 0.
  Network(std::vector<LayerSpec> layers, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const ParameterSet& parameters() const { return params_; }

  // Mutable access invalidates every outstanding ForwardCache.
  ParameterSet& mutable_parameters() {
    ++version_;
    return params_;
  }
  void set_parameters(ParameterSet params);

  Matrix forward(const Matrix& input, ForwardCache& cache) const;
  Matrix infer(const Matrix& input) const;

  BackwardResult backward(const ForwardCache& cache, const Matrix& output_gradient) const;
  // Parameter gradients only; the input gradient is not formed.
  ParameterSet parameter_gradients(const ForwardCache& cache, const Matrix& output_gradient) const;
  // Input gradient for input columns [first_column, input_dim) only; parameter gradients are skipped.
  Matrix input_gradient(const ForwardCache& cache, const Matrix& output_gradient, std::size_t first_column = 0) const;

  ParameterSet zero_like() const;

  std::vector<NamedTensor> export_tensors(const std::string& prefix) const;
  void import_tensors(const std::string& prefix, const TensorMap& tensors);

 private:
  Matrix run(const Matrix& input, ForwardCache* cache) const;
  // first_column == input_dim() skips the input gradient entirely.
  Matrix back(const ForwardCache& cache, const Matrix& output_gradient, ParameterSet* grads,
              std::size_t first_column) const;
  ParameterSet gradient_buffers() const;
  void check_cache(const ForwardCache& cache) const;

  std::vector<LayerSpec> layers_;
  ParameterSet params_;
  std::uint64_t version_ = 0;
};

void validate_layers(const std::vector<LayerSpec>& layers);

// Visit every non-empty tensor of a parameter set as (name, data, size).
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const std::string base = "layer" + std::to_string(i);
    if (p.weights.size() > 0) fn(base + ".weight", p.weights.data(), static_cast<std::size_t>(p.weights.size()));
    if (p.bias.size() > 0) fn(base + ".bias", p.bias.data(), static_cast<std::size_t>(p.bias.size()));
    if (p.gain.size() > 0) fn(base + ".gain", p.gain.data(), static_cast<std::size_t>(p.gain.size()));
    if (p.shift.size() > 0) fn(base + ".shift", p.shift.data(), static_cast<std::size_t>(p.shift.size()));
  }
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam moments, shaped like the parameters they track.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;

  AdamState() = default;
  AdamState(const ParameterSet& like, AdamConfig cfg);
};

// Throws NumericError naming the first non-finite gradient tensor; parameters are untouched then.
void adam_update(ParameterSet& params, const ParameterSet& grads, AdamState& state);
void adam_update(Network& net, const ParameterSet& grads, AdamState& state);

// Keeps large activation buffers in the heap instead of mapping fresh pages per batch (glibc only).
void tune_allocator();

// Softmax over each range of every row (max-subtracted).
void apply_softmax_groups(Matrix& values, const std::vector<IndexRange>& groups);

}  // namespace cfrl::nn
