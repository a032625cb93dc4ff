#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cfrl/data.hpp"
#include "cfrl/nn.hpp"

namespace cfrl::ae {

struct AutoencoderConfig {
  std::size_t latent_dim = 15;
  std::size_t hidden_dim = 128;  // 0: single dense layer on each side (no hidden layer)
  std::size_t steps = 20000;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
};

struct ReconstructionLoss {
  double se_weight = 1.0;
  double ce_weight = 1.0;
};

// Encoder: dense -> relu -> dense -> tanh (or dense -> tanh without hidden layer).
// Decoder: [dense -> relu ->] dense -> softmax over each categorical head. The decoded
// row has the encoded layout: standardized numerical means then per-feature probabilities.
class TabularAutoencoder {
 public:
  TabularAutoencoder() = default;
  TabularAutoencoder(const data::TabularSchema& schema, std::size_t latent_dim, std::size_t hidden_dim, Rng& rng);

  Matrix encode(const Matrix& encoded_batch) const;
  Matrix decode(const Matrix& latent_batch) const;

  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::size_t input_dim() const { return encoder_.input_dim(); }
  std::uint64_t schema_fingerprint() const { return fingerprint_; }

  const nn::Network& encoder() const { return encoder_; }
  const nn::Network& decoder() const { return decoder_; }
  nn::Network& encoder() { return encoder_; }
  nn::Network& decoder() { return decoder_; }

  // Refuses schemas whose fingerprint differs from the one the model was built on.
  void check_schema(const data::TabularSchema& schema) const;

  std::vector<NamedTensor> export_tensors() const;
  static TabularAutoencoder import_tensors(const TensorMap& tensors, const data::TabularSchema& schema);

 private:
  nn::Network encoder_;
  nn::Network decoder_;
  std::size_t latent_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  std::uint64_t fingerprint_ = 0;
};

// Mean over numerical heads of squared error plus mean over categorical heads of
// cross-entropy, averaged over rows. Optionally returns d loss / d decoded output.
double reconstruction_loss(const Matrix& decoded, const Matrix& target, const data::TabularSchema& schema,
                           const ReconstructionLoss& weights, Matrix* gradient = nullptr);

struct AutoencoderGradients {
  double loss = 0.0;
  nn::ParameterSet encoder;
  nn::ParameterSet decoder;
};

// Full reconstruction objective of a batch and its parameter gradients.
AutoencoderGradients autoencoder_loss(const TabularAutoencoder& ae, const Matrix& batch,
                                      const data::TabularSchema& schema, const ReconstructionLoss& weights = {});

struct TrainingTrace {
  std::vector<double> loss;  // one entry per step
};

TabularAutoencoder train_autoencoder(const Matrix& train, const data::TabularSchema& schema,
                                     const AutoencoderConfig& config, std::uint64_t seed, TrainingTrace* trace = nullptr);

// Mean over categorical features of argmax(decode(encode(x))) == x, over rows.
double categorical_reconstruction_accuracy(const TabularAutoencoder& ae, const Matrix& batch,
                                           const data::TabularSchema& schema);

}  // namespace cfrl::ae
