#include "cfrl/nn.hpp"

#include <algorithm>
#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <limits>

#include "cfrl/errors.hpp"

namespace cfrl::nn {
namespace {

// Largest double strictly below 1; keeps tanh outputs inside the open interval.
const double kTanhBound = std::nextafter(1.0, 0.0);

std::string layer_label(std::size_t i, LayerKind kind) {
  return "layer " + std::to_string(i) + " (" + to_string(kind) + ")";
}

// tanh through the vectorized exp: sign(x) (1 - e) / (1 + e) with e = exp(-2|x|),
// and a Taylor polynomial below 0.1 where that form cancels.
Matrix vector_tanh(const Matrix& x) {
  const Eigen::ArrayXXd a = x.array().abs();
  const Eigen::ArrayXXd e = (-2.0 * a).exp();
  const Eigen::ArrayXXd big = ((1.0 - e) / (1.0 + e)).min(kTanhBound);
  const Eigen::ArrayXXd s = a.square();
  const Eigen::ArrayXXd small =
      a * (1.0 + s * (-1.0 / 3 + s * (2.0 / 15 + s * (-17.0 / 315 + s * (62.0 / 2835 +
          s * (-1382.0 / 155925 + s * (21844.0 / 6081075)))))));
  const Eigen::ArrayXXd t = (a < 0.1).select(small, big);
  Matrix out = (x.array() < 0.0).select(-t, t).matrix();
  return out;
}

}  // namespace

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::LayerNorm: return "layer_norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::SoftmaxGroup: return "softmax_group";
  }
  return "?";
}

void validate_layers(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw ConfigError("network needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in_dim == 0 || l.out_dim == 0) throw ConfigError(layer_label(i, l.kind) + " has a zero dimension");
    if (l.kind != LayerKind::Dense && l.in_dim != l.out_dim)
      throw ConfigError(layer_label(i, l.kind) + " must preserve width");
    if (l.kind == LayerKind::SoftmaxGroup) {
      std::size_t prev_end = 0;
      for (const auto& g : l.groups) {
        if (g.begin >= g.end || g.begin < prev_end || g.end > l.out_dim)
          throw ConfigError(layer_label(i, l.kind) + " has an invalid group range");
        prev_end = g.end;
      }
    } else if (!l.groups.empty()) {
      throw ConfigError(layer_label(i, l.kind) + " does not take groups");
    }
    if (i > 0 && layers[i - 1].out_dim != l.in_dim)
      throw DimensionError(layer_label(i, l.kind) + " expects width " + std::to_string(l.in_dim) +
                           " but previous layer emits " + std::to_string(layers[i - 1].out_dim));
  }
}

Network::Network(std::vector<LayerSpec> layers, Rng& rng) : layers_(std::move(layers)) {
  validate_layers(layers_);
  params_.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    auto& p = params_[i];
    if (l.kind == LayerKind::Dense) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
      p.weights.resize(static_cast<Eigen::Index>(l.in_dim), static_cast<Eigen::Index>(l.out_dim));
      for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = rng.uniform(-bound, bound);
      p.bias.resize(static_cast<Eigen::Index>(l.out_dim));
      for (Eigen::Index k = 0; k < p.bias.size(); ++k) p.bias[k] = rng.uniform(-bound, bound);
    } else if (l.kind == LayerKind::LayerNorm) {
      p.gain = RowVector::Ones(static_cast<Eigen::Index>(l.out_dim));
      p.shift = RowVector::Zero(static_cast<Eigen::Index>(l.out_dim));
    }
  }
}

std::size_t Network::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim; }
std::size_t Network::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim; }

void Network::set_parameters(ParameterSet params) {
  if (params.size() != layers_.size()) throw DimensionError("parameter set has the wrong number of layers");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = params[i];
    const auto& b = params_[i];
    if (a.weights.rows() != b.weights.rows() || a.weights.cols() != b.weights.cols() ||
        a.bias.size() != b.bias.size() || a.gain.size() != b.gain.size() || a.shift.size() != b.shift.size())
      throw DimensionError("parameter shapes do not match " + layer_label(i, layers_[i].kind));
  }
  params_ = std::move(params);
  ++version_;
}

ParameterSet Network::zero_like() const {
  ParameterSet z(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    z[i].weights = Matrix::Zero(params_[i].weights.rows(), params_[i].weights.cols());
    z[i].bias = RowVector::Zero(params_[i].bias.size());
    z[i].gain = RowVector::Zero(params_[i].gain.size());
    z[i].shift = RowVector::Zero(params_[i].shift.size());
  }
  return z;
}

Matrix Network::forward(const Matrix& input, ForwardCache& cache) const { return run(input, &cache); }

Matrix Network::infer(const Matrix& input) const { return run(input, nullptr); }

Matrix Network::run(const Matrix& input, ForwardCache* cache) const {
  if (static_cast<std::size_t>(input.cols()) != input_dim())
    throw DimensionError(layer_label(0, layers_.empty() ? LayerKind::Dense : layers_[0].kind) + " expects width " +
                         std::to_string(input_dim()) + ", got " + std::to_string(input.cols()));
  if (cache) {
    cache->owner = this;
    cache->version = version_;
    cache->activations.clear();
    cache->activations.reserve(layers_.size() + 1);
    cache->activations.push_back(input);
    cache->normalized.assign(layers_.size(), Matrix());
    cache->inv_std.assign(layers_.size(), ColVector());
  }
  Matrix scratch;
  const Matrix* cur = cache ? &cache->activations.back() : &input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const auto& p = params_[i];
    const Matrix& x = *cur;
    Matrix y;
    switch (l.kind) {
      case LayerKind::Dense:
        y = p.bias.replicate(x.rows(), 1);
        y.noalias() += x * p.weights;
        break;
      case LayerKind::LayerNorm: {
        const double n = static_cast<double>(l.in_dim);
        const ColVector mean = x.rowwise().sum() / n;
        Matrix hat = x.colwise() - mean;
        const ColVector var = hat.rowwise().squaredNorm() / n;
        const ColVector inv = (var.array() == 0.0).select(0.0, (var.array() + kLayerNormEpsilon).rsqrt());
        hat = inv.asDiagonal() * hat;
        y = hat.array().rowwise() * p.gain.array();
        y.rowwise() += p.shift;
        if (cache) {
          cache->normalized[i] = std::move(hat);
          cache->inv_std[i] = std::move(inv);
        }
        break;
      }
      case LayerKind::Relu:
        y = x.cwiseMax(0.0);
        break;
      case LayerKind::Tanh:
        y = vector_tanh(x);
        break;
      case LayerKind::SoftmaxGroup:
        y = x;
        apply_softmax_groups(y, l.groups);
        break;
    }
    if (cache) {
      cache->activations.push_back(std::move(y));
      cur = &cache->activations.back();
    } else {
      scratch = std::move(y);
      cur = &scratch;
    }
  }
  if (cache) return cache->activations.back();
  return scratch;
}

void Network::check_cache(const ForwardCache& cache) const {
  if (cache.empty()) throw UsageError("backward called without a forward cache");
  if (cache.owner != this || cache.version != version_)
    throw UsageError("forward cache is stale: parameters changed or cache belongs to another network");
  if (cache.activations.size() != layers_.size() + 1) throw UsageError("forward cache is incomplete");
}

ParameterSet Network::gradient_buffers() const {
  // Every gradient tensor is fully overwritten by back(), so shapes suffice.
  ParameterSet out(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    out[i].weights.resize(p.weights.rows(), p.weights.cols());
    out[i].bias.resize(p.bias.size());
    out[i].gain.resize(p.gain.size());
    out[i].shift.resize(p.shift.size());
  }
  return out;
}

BackwardResult Network::backward(const ForwardCache& cache, const Matrix& output_gradient) const {
  BackwardResult result;
  result.gradients = gradient_buffers();
  result.input_gradient = back(cache, output_gradient, &result.gradients, 0);
  return result;
}

ParameterSet Network::parameter_gradients(const ForwardCache& cache, const Matrix& output_gradient) const {
  ParameterSet grads = gradient_buffers();
  back(cache, output_gradient, &grads, input_dim());
  return grads;
}

Matrix Network::input_gradient(const ForwardCache& cache, const Matrix& output_gradient, std::size_t first_column) const {
  if (first_column > input_dim()) throw DimensionError("input gradient column range exceeds the input width");
  return back(cache, output_gradient, nullptr, first_column);
}

Matrix Network::back(const ForwardCache& cache, const Matrix& output_gradient, ParameterSet* grads,
                     std::size_t first_column) const {
  check_cache(cache);
  const Matrix& out = cache.activations.back();
  if (output_gradient.rows() != out.rows() || output_gradient.cols() != out.cols())
    throw DimensionError("output gradient shape does not match the cached forward output");

  Matrix g = output_gradient;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& l = layers_[li];
    const auto& p = params_[li];
    const Matrix& in = cache.activations[li];
    const Matrix& y = cache.activations[li + 1];
    switch (l.kind) {
      case LayerKind::Dense: {
        if (grads) {
          (*grads)[li].weights.noalias() = in.transpose() * g;
          (*grads)[li].bias = g.colwise().sum();
        }
        if (li == 0) {
          const auto keep = static_cast<Eigen::Index>(l.in_dim - first_column);
          if (keep == 0) return Matrix(g.rows(), 0);
          Matrix gi = g * p.weights.bottomRows(keep).transpose();
          return gi;
        }
        Matrix gi = g * p.weights.transpose();
        g = std::move(gi);
        break;
      }
      case LayerKind::LayerNorm: {
        const Matrix& hat = cache.normalized[li];
        const ColVector& inv = cache.inv_std[li];
        if (grads) {
          (*grads)[li].gain = (g.array() * hat.array()).colwise().sum();
          (*grads)[li].shift = g.colwise().sum();
        }
        const double n = static_cast<double>(l.in_dim);
        Matrix dhat = g.array().rowwise() * p.gain.array();
        const ColVector mean_d = dhat.rowwise().sum() / n;
        const ColVector mean_dh = (dhat.array() * hat.array()).rowwise().sum() / n;
        Matrix gi = (dhat.colwise() - mean_d) - mean_dh.asDiagonal() * hat;
        gi = inv.asDiagonal() * gi;
        g = std::move(gi);
        break;
      }
      case LayerKind::Relu:
        g = (in.array() > 0.0).select(g, 0.0);
        break;
      case LayerKind::Tanh:
        g = (g.array() * (1.0 - y.array().square())).matrix();
        break;
      case LayerKind::SoftmaxGroup: {
        Matrix gi = g;
        for (const auto& grp : l.groups) {
          const auto b = static_cast<Eigen::Index>(grp.begin);
          const auto w = static_cast<Eigen::Index>(grp.size());
          for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const auto s = y.row(r).segment(b, w);
            const auto gs = g.row(r).segment(b, w);
            const double dot = s.dot(gs);
            gi.row(r).segment(b, w) = (s.array() * (gs.array() - dot)).matrix();
          }
        }
        g = std::move(gi);
        break;
      }
    }
  }
  if (first_column == 0) return g;
  return g.rightCols(g.cols() - static_cast<Eigen::Index>(first_column));
}

std::vector<NamedTensor> Network::export_tensors(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  std::vector<double> shape;
  for (const auto& l : layers_) {
    shape.push_back(static_cast<double>(l.kind));
    shape.push_back(static_cast<double>(l.in_dim));
    shape.push_back(static_cast<double>(l.out_dim));
  }
  out.push_back(scalar_tensor(prefix + ".layers", shape));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    const std::string base = prefix + ".layer" + std::to_string(i);
    if (p.weights.size() > 0) out.push_back(tensor_from(base + ".weight", p.weights));
    if (p.bias.size() > 0) out.push_back(tensor_from(base + ".bias", p.bias));
    if (p.gain.size() > 0) out.push_back(tensor_from(base + ".gain", p.gain));
    if (p.shift.size() > 0) out.push_back(tensor_from(base + ".shift", p.shift));
  }
  return out;
}

void Network::import_tensors(const std::string& prefix, const TensorMap& tensors) {
  const auto& shape = require_tensor(tensors, prefix + ".layers");
  if (shape.data.size() != 3 * layers_.size()) throw DataError("checkpoint network '" + prefix + "' has a different depth");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (shape.data[3 * i] != static_cast<double>(layers_[i].kind) ||
        shape.data[3 * i + 1] != static_cast<double>(layers_[i].in_dim) ||
        shape.data[3 * i + 2] != static_cast<double>(layers_[i].out_dim))
      throw DataError("checkpoint network '" + prefix + "' differs at " + layer_label(i, layers_[i].kind));
  }
  ParameterSet params = params_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const std::string base = prefix + ".layer" + std::to_string(i);
    if (p.weights.size() > 0) p.weights = matrix_from(require_tensor(tensors, base + ".weight"));
    if (p.bias.size() > 0) p.bias = row_vector_from(require_tensor(tensors, base + ".bias"));
    if (p.gain.size() > 0) p.gain = row_vector_from(require_tensor(tensors, base + ".gain"));
    if (p.shift.size() > 0) p.shift = row_vector_from(require_tensor(tensors, base + ".shift"));
  }
  set_parameters(std::move(params));
}

void apply_softmax_groups(Matrix& values, const std::vector<IndexRange>& groups) {
  for (const auto& grp : groups) {
    const auto b = static_cast<Eigen::Index>(grp.begin);
    const auto w = static_cast<Eigen::Index>(grp.size());
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      auto seg = values.row(r).segment(b, w);
      const double mx = seg.maxCoeff();
      seg = (seg.array() - mx).exp().matrix();
      seg /= seg.sum();
    }
  }
}

AdamState::AdamState(const ParameterSet& like, AdamConfig cfg) : config(cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("Adam learning rate must be positive");
  first_moment.resize(like.size());
  for (std::size_t i = 0; i < like.size(); ++i) {
    first_moment[i].weights = Matrix::Zero(like[i].weights.rows(), like[i].weights.cols());
    first_moment[i].bias = RowVector::Zero(like[i].bias.size());
    first_moment[i].gain = RowVector::Zero(like[i].gain.size());
    first_moment[i].shift = RowVector::Zero(like[i].shift.size());
  }
  second_moment = first_moment;
}

void adam_update(ParameterSet& params, const ParameterSet& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size())
    throw DimensionError("Adam: gradient/moment layer count does not match parameters");

  std::vector<std::pair<double*, std::size_t>> p_views, g_views, m_views, v_views;
  std::vector<std::string> names;
  auto collect = [](auto& set, auto& views) {
    for_each_tensor(set, [&](const std::string&, auto* data, std::size_t n) { views.emplace_back(const_cast<double*>(data), n); });
  };
  for_each_tensor(params, [&](const std::string& name, double* data, std::size_t n) {
    names.push_back(name);
    p_views.emplace_back(data, n);
  });
  collect(grads, g_views);
  collect(state.first_moment, m_views);
  collect(state.second_moment, v_views);
  if (g_views.size() != p_views.size() || m_views.size() != p_views.size() || v_views.size() != p_views.size())
    throw DimensionError("Adam: gradient tensors do not mirror parameter tensors");
  for (std::size_t t = 0; t < p_views.size(); ++t) {
    if (g_views[t].second != p_views[t].second || m_views[t].second != p_views[t].second)
      throw DimensionError("Adam: shape mismatch in tensor " + names[t]);
    if (!Eigen::Map<const Eigen::ArrayXd>(g_views[t].first, static_cast<Eigen::Index>(g_views[t].second)).allFinite())
      throw NumericError("Adam: non-finite gradient in tensor " + names[t]);
  }

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  const double step_size = c.learning_rate / corr1;
  const double inv_corr2 = 1.0 / corr2;
  using Vec = Eigen::Map<Eigen::ArrayXd>;
  for (std::size_t ti = 0; ti < p_views.size(); ++ti) {
    const auto n = static_cast<Eigen::Index>(p_views[ti].second);
    Vec p(p_views[ti].first, n);
    const Eigen::Map<const Eigen::ArrayXd> g(g_views[ti].first, n);
    Vec m(m_views[ti].first, n);
    Vec v(v_views[ti].first, n);
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.square();
    p -= step_size * m / ((v * inv_corr2).sqrt() + c.epsilon);
  }
}

void adam_update(Network& net, const ParameterSet& grads, AdamState& state) {
  adam_update(net.mutable_parameters(), grads, state);
}

void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace cfrl::nn
