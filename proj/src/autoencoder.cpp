#include "cfrl/autoencoder.hpp"

#include <cmath>

#include "cfrl/errors.hpp"

namespace cfrl::ae {
namespace {

// Probabilities are clamped before the log so an underflowed head cannot produce inf.
constexpr double kMinProbability = 1e-300;

std::vector<nn::LayerSpec> encoder_layers(std::size_t in, std::size_t hidden, std::size_t latent) {
  using nn::LayerSpec;
  if (hidden == 0) return {LayerSpec::dense(in, latent), LayerSpec::tanh(latent)};
  return {LayerSpec::dense(in, hidden), LayerSpec::relu(hidden), LayerSpec::dense(hidden, latent),
          LayerSpec::tanh(latent)};
}

std::vector<nn::LayerSpec> decoder_layers(const data::TabularSchema& schema, std::size_t hidden, std::size_t latent) {
  using nn::LayerSpec;
  const std::size_t out = schema.encoded_width();
  std::vector<LayerSpec> layers;
  if (hidden == 0) {
    layers.push_back(LayerSpec::dense(latent, out));
  } else {
    layers.push_back(LayerSpec::dense(latent, hidden));
    layers.push_back(LayerSpec::relu(hidden));
    layers.push_back(LayerSpec::dense(hidden, out));
  }
  if (schema.categorical_count() > 0) layers.push_back(LayerSpec::softmax_group(out, schema.categorical_blocks()));
  return layers;
}

}  // namespace

TabularAutoencoder::TabularAutoencoder(const data::TabularSchema& schema, std::size_t latent_dim,
                                       std::size_t hidden_dim, Rng& rng)
    : latent_dim_(latent_dim), hidden_dim_(hidden_dim), fingerprint_(schema.fingerprint()) {
  if (latent_dim < 1) throw ConfigError("autoencoder latent_dim must be at least 1");
  encoder_ = nn::Network(encoder_layers(schema.encoded_width(), hidden_dim, latent_dim), rng);
  decoder_ = nn::Network(decoder_layers(schema, hidden_dim, latent_dim), rng);
}

Matrix TabularAutoencoder::encode(const Matrix& encoded_batch) const { return encoder_.infer(encoded_batch); }

Matrix TabularAutoencoder::decode(const Matrix& latent_batch) const { return decoder_.infer(latent_batch); }

void TabularAutoencoder::check_schema(const data::TabularSchema& schema) const {
  if (schema.fingerprint() != fingerprint_)
    throw ConfigError("autoencoder was trained on a different schema (fingerprint " + std::to_string(fingerprint_) +
                      ")");
}

std::vector<NamedTensor> TabularAutoencoder::export_tensors() const {
  auto out = encoder_.export_tensors("ae.encoder");
  auto dec = decoder_.export_tensors("ae.decoder");
  out.insert(out.end(), dec.begin(), dec.end());
  out.push_back(scalar_tensor("ae.config", {static_cast<double>(latent_dim_), static_cast<double>(hidden_dim_)}));
  return out;
}

TabularAutoencoder TabularAutoencoder::import_tensors(const TensorMap& tensors, const data::TabularSchema& schema) {
  const auto& cfg = require_tensor(tensors, "ae.config").data;
  if (cfg.size() != 2) throw DataError("ae.config is malformed");
  Rng rng(0);
  TabularAutoencoder ae(schema, static_cast<std::size_t>(cfg[0]), static_cast<std::size_t>(cfg[1]), rng);
  ae.encoder_.import_tensors("ae.encoder", tensors);
  ae.decoder_.import_tensors("ae.decoder", tensors);
  return ae;
}

double reconstruction_loss(const Matrix& decoded, const Matrix& target, const data::TabularSchema& schema,
                           const ReconstructionLoss& weights, Matrix* gradient) {
  if (decoded.rows() != target.rows() || decoded.cols() != target.cols() ||
      static_cast<std::size_t>(decoded.cols()) != schema.encoded_width())
    throw DimensionError("reconstruction loss: decoded/target shape mismatch");
  if (decoded.rows() == 0) throw UsageError("reconstruction loss of an empty batch");
  const double rows = static_cast<double>(decoded.rows());
  const auto nn_count = static_cast<Eigen::Index>(schema.numerical_count());
  const std::size_t nc_count = schema.categorical_count();
  if (gradient) *gradient = Matrix::Zero(decoded.rows(), decoded.cols());

  double se = 0.0;
  if (nn_count > 0) {
    const Matrix diff = decoded.leftCols(nn_count) - target.leftCols(nn_count);
    se = diff.squaredNorm() / (rows * static_cast<double>(nn_count));
    if (gradient) gradient->leftCols(nn_count) = weights.se_weight * 2.0 * diff / (rows * static_cast<double>(nn_count));
  }
  double ce = 0.0;
  if (nc_count > 0) {
    const double scale = 1.0 / (rows * static_cast<double>(nc_count));
    for (Eigen::Index r = 0; r < decoded.rows(); ++r) {
      for (std::size_t c = 0; c < nc_count; ++c) {
        const auto off = static_cast<Eigen::Index>(schema.category_offset(c));
        const auto k = static_cast<Eigen::Index>(schema.categorical(c).cardinality());
        for (Eigen::Index j = 0; j < k; ++j) {
          const double y = target(r, off + j);
          if (y == 0.0) continue;
          const double p = std::max(decoded(r, off + j), kMinProbability);
          ce -= y * std::log(p) * scale;
          if (gradient) (*gradient)(r, off + j) = -weights.ce_weight * y / p * scale;
        }
      }
    }
  }
  return weights.se_weight * se + weights.ce_weight * ce;
}

AutoencoderGradients autoencoder_loss(const TabularAutoencoder& ae, const Matrix& batch,
                                      const data::TabularSchema& schema, const ReconstructionLoss& weights) {
  nn::ForwardCache enc_cache, dec_cache;
  const Matrix z = ae.encoder().forward(batch, enc_cache);
  const Matrix decoded = ae.decoder().forward(z, dec_cache);
  Matrix grad;
  AutoencoderGradients out;
  out.loss = reconstruction_loss(decoded, batch, schema, weights, &grad);
  auto dec_back = ae.decoder().backward(dec_cache, grad);
  out.decoder = std::move(dec_back.gradients);
  out.encoder = ae.encoder().parameter_gradients(enc_cache, dec_back.input_gradient);
  return out;
}

TabularAutoencoder train_autoencoder(const Matrix& train, const data::TabularSchema& schema,
                                     const AutoencoderConfig& config, std::uint64_t seed, TrainingTrace* trace) {
  if (config.latent_dim < 1) throw ConfigError("autoencoder latent_dim must be at least 1");
  if (config.batch_size < 1) throw ConfigError("autoencoder batch size must be at least 1");
  if (train.rows() == 0) throw ConfigError("autoencoder needs training rows");
  if (static_cast<std::size_t>(train.cols()) != schema.encoded_width())
    throw DimensionError("autoencoder training data width does not match the schema");

  nn::tune_allocator();
  Rng rng(seed);
  TabularAutoencoder ae(schema, config.latent_dim, config.hidden_dim, rng);
  nn::AdamState enc_adam(ae.encoder().parameters(), nn::AdamConfig{config.learning_rate});
  nn::AdamState dec_adam(ae.decoder().parameters(), nn::AdamConfig{config.learning_rate});

  Matrix batch(static_cast<Eigen::Index>(config.batch_size), train.cols());
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (Eigen::Index r = 0; r < batch.rows(); ++r)
      batch.row(r) = train.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(train.rows()))));
    auto g = autoencoder_loss(ae, batch, schema);
    if (!std::isfinite(g.loss)) throw NumericError("autoencoder loss diverged at step " + std::to_string(step));
    if (trace) trace->loss.push_back(g.loss);
    nn::adam_update(ae.encoder(), g.encoder, enc_adam);
    nn::adam_update(ae.decoder(), g.decoder, dec_adam);
  }
  return ae;
}

double categorical_reconstruction_accuracy(const TabularAutoencoder& ae, const Matrix& batch,
                                           const data::TabularSchema& schema) {
  if (schema.categorical_count() == 0 || batch.rows() == 0) throw UsageError("no categorical features to score");
  const Matrix decoded = ae.decode(ae.encode(batch));
  std::size_t hit = 0;
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    for (std::size_t c = 0; c < schema.categorical_count(); ++c) {
      const auto off = static_cast<Eigen::Index>(schema.category_offset(c));
      const auto k = static_cast<Eigen::Index>(schema.categorical(c).cardinality());
      Eigen::Index pred = 0, truth = 0;
      decoded.row(r).segment(off, k).maxCoeff(&pred);
      batch.row(r).segment(off, k).maxCoeff(&truth);
      hit += pred == truth;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(static_cast<std::size_t>(batch.rows()) * schema.categorical_count());
}

}  // namespace cfrl::ae
