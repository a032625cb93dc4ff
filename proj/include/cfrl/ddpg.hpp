#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cfrl/autoencoder.hpp"
#include "cfrl/blackbox.hpp"
#include "cfrl/conditioning.hpp"
#include "cfrl/data.hpp"
#include "cfrl/nn.hpp"

namespace cfrl::ddpg {

struct TrainConfig {
  double lambda_sparsity = 0.5;
  double lambda_consistency = 0.5;
  std::size_t steps = 15000;
  std::size_t batch_size = 128;
  double actor_learning_rate = 1e-3;
  double critic_learning_rate = 1e-3;
  std::size_t exploration_steps = 100;  // uniform actions before this step
  double noise_std = 0.1;
  std::size_t warmup_steps = 10;        // updates start once this many steps were stored
  std::size_t updates_per_step = 1;
  std::size_t hidden_dim = 256;
  std::size_t buffer_capacity = 128000;
  // Diagnostic: always train on y_T = y_M instead of uniform targets.
  bool identity_targets = false;

  void validate() const;
};

// Sizes of the actor/critic inputs. State = concat(z, one_hot(y_M), one_hot(y_T), c).
struct PolicyShape {
  std::size_t latent_dim = 0;
  std::size_t class_count = 0;
  std::size_t condition_width = 0;
  std::size_t hidden_dim = 256;

  std::size_t state_dim() const { return latent_dim + 2 * class_count + condition_width; }
};

// Actor: dense -> layer_norm -> relu -> dense -> layer_norm -> relu -> dense -> tanh.
nn::Network make_actor(const PolicyShape& shape, Rng& rng);
// Critic: same trunk over concat(state, action) with a scalar linear output.
nn::Network make_critic(const PolicyShape& shape, Rng& rng);

Matrix build_state(const Matrix& z, std::span<const std::size_t> y_m, std::span<const std::size_t> y_t, const Matrix& c,
                   std::size_t class_count);
Matrix concat_columns(const Matrix& a, const Matrix& b);

// R = 1 when the black-box label equals the target.
double reward(std::size_t predicted, std::size_t target);

// Uniform in [-1, 1] before exploration_steps, then clip(mu(state) + N(0, noise_std), -1, 1).
Matrix select_action(const nn::Network& actor, const Matrix& state, std::size_t step, const TrainConfig& config,
                     Rng& rng);

struct Experience {
  RowVector x;  // encoded instance
  RowVector z;
  std::size_t y_m = 0;
  std::size_t y_t = 0;
  RowVector c;
  RowVector action;
  double reward = 0.0;
};

struct ExperienceBatch {
  Matrix x;
  Matrix z;
  std::vector<std::size_t> y_m;
  std::vector<std::size_t> y_t;
  Matrix c;
  Matrix action;
  ColVector reward;
  std::vector<std::uint64_t> ids;  // insertion serial numbers

  std::size_t size() const { return y_m.size(); }
};

// Fixed-capacity FIFO ring buffer with uniform sampling over its contents.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::size_t x_dim, std::size_t z_dim, std::size_t c_dim);

  void push(const Experience& e);
  void push_batch(const Matrix& x, const Matrix& z, std::span<const std::size_t> y_m, std::span<const std::size_t> y_t,
                  const Matrix& c, const Matrix& action, std::span<const double> rewards);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  ExperienceBatch sample(std::size_t batch_size, Rng& rng) const;
  ExperienceBatch gather(std::span<const std::size_t> slots) const;
  // Serial numbers of everything currently stored, oldest first.
  std::vector<std::uint64_t> stored_ids() const;

 private:
  void reserve_rows(std::size_t rows);

  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t next_id_ = 0;
  Matrix x_, z_, c_, action_;
  std::vector<std::size_t> y_m_, y_t_;
  std::vector<double> reward_;
  std::vector<std::uint64_t> ids_;
};

// Mean of (Q(state, action) - R)^2; the stored reward is the whole target.
double critic_loss(const nn::Network& critic, const Matrix& state, const Matrix& action, const ColVector& rewards,
                   nn::ParameterSet* gradients = nullptr);

struct ActorLoss {
  double total = 0.0;
  double max_term = 0.0;          // -mean Q(state, mu(state))
  double sparsity = 0.0;          // L1 over standardized numericals + expected category flips
  double consistency = 0.0;       // mean over rows and latent components of (z_cf - target)^2
  nn::ParameterSet gradients;     // w.r.t. actor parameters only
};

// Everything the actor update needs from a replay batch.
struct ActorBatch {
  Matrix state;
  Matrix x;                        // encoded originals
  std::vector<data::InstanceRecord> records;
  std::vector<cond::FeatureCondition> conditions;
};

ActorBatch make_actor_batch(const ExperienceBatch& batch, const data::TabularSchema& schema, std::size_t class_count);

// enc(pp(dec(mu(state)), c)) per row; treated as a constant by the actor update.
Matrix consistency_targets(const nn::Network& actor, const ae::TabularAutoencoder& ae, const ActorBatch& batch,
                           const data::TabularSchema& schema);

// Actor objective for a fixed consistency target; gradients flow to actor parameters only.
ActorLoss actor_objective(const nn::Network& actor, const nn::Network& critic, const ae::TabularAutoencoder& ae,
                          const ActorBatch& batch, const data::TabularSchema& schema, double lambda_sparsity,
                          double lambda_consistency, const Matrix& consistency_target);

ActorLoss actor_loss(const nn::Network& actor, const nn::Network& critic, const ae::TabularAutoencoder& ae,
                     const ActorBatch& batch, const data::TabularSchema& schema, double lambda_sparsity,
                     double lambda_consistency);

struct TrainLogEntry {
  std::size_t step = 0;
  double reward_rate = 0.0;  // mean reward of the experiences collected this step
  bool updated = false;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double max_term = 0.0;
  double sparsity = 0.0;
  double consistency = 0.0;
};

struct TrainedPolicy {
  PolicyShape shape;
  nn::Network actor;
  nn::Network critic;
  std::uint64_t schema_fingerprint = 0;
  std::vector<TrainLogEntry> log;
};

// One-step-horizon DDPG over the frozen autoencoder latent space.
TrainedPolicy train(const TrainConfig& config, std::span<const data::InstanceRecord> records,
                    std::span<const std::size_t> labels, const data::TabularSchema& schema,
                    const blackbox::BlackBoxModel& model, const ae::TabularAutoencoder& ae,
                    const cond::ConstraintSet& constraints, std::uint64_t seed,
                    const std::function<void(const TrainLogEntry&)>& on_step = {});

std::vector<NamedTensor> export_policy(const TrainedPolicy& policy, bool include_critic);
TrainedPolicy import_policy(const TensorMap& tensors);

}  // namespace cfrl::ddpg
