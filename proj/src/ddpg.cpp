#include "cfrl/ddpg.hpp"

#include <algorithm>
#include <cmath>

#include "cfrl/errors.hpp"

namespace cfrl::ddpg {

void TrainConfig::validate() const {
  if (lambda_sparsity < 0.0 || lambda_consistency < 0.0) throw ConfigError("loss coefficients must be non-negative");
  if (batch_size == 0 || hidden_dim == 0 || buffer_capacity == 0 || updates_per_step == 0)
    throw ConfigError("batch size, hidden dim, buffer capacity and updates per step must be positive");
  if (!(actor_learning_rate > 0.0) || !(critic_learning_rate > 0.0)) throw ConfigError("learning rates must be positive");
  if (noise_std < 0.0) throw ConfigError("noise std must be non-negative");
  if (buffer_capacity < batch_size) throw ConfigError("replay buffer must hold at least one batch");
}

namespace {

std::vector<nn::LayerSpec> trunk(std::size_t in, std::size_t hidden, std::size_t out) {
  using nn::LayerSpec;
  return {LayerSpec::dense(in, hidden),     LayerSpec::layer_norm(hidden), LayerSpec::relu(hidden),
          LayerSpec::dense(hidden, hidden), LayerSpec::layer_norm(hidden), LayerSpec::relu(hidden),
          LayerSpec::dense(hidden, out)};
}

}  // namespace

nn::Network make_actor(const PolicyShape& shape, Rng& rng) {
  auto layers = trunk(shape.state_dim(), shape.hidden_dim, shape.latent_dim);
  layers.push_back(nn::LayerSpec::tanh(shape.latent_dim));
  return nn::Network(std::move(layers), rng);
}

nn::Network make_critic(const PolicyShape& shape, Rng& rng) {
  return nn::Network(trunk(shape.state_dim() + shape.latent_dim, shape.hidden_dim, 1), rng);
}

Matrix concat_columns(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError("cannot concatenate matrices with different row counts");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Matrix build_state(const Matrix& z, std::span<const std::size_t> y_m, std::span<const std::size_t> y_t, const Matrix& c,
                   std::size_t class_count) {
  const auto rows = z.rows();
  if (static_cast<std::size_t>(rows) != y_m.size() || y_m.size() != y_t.size() || c.rows() != rows)
    throw DimensionError("state components have different batch sizes");
  const auto k = static_cast<Eigen::Index>(class_count);
  Matrix s = Matrix::Zero(rows, z.cols() + 2 * k + c.cols());
  s.leftCols(z.cols()) = z;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (y_m[i] >= class_count || y_t[i] >= class_count) throw DimensionError("class index out of range");
    s(r, z.cols() + static_cast<Eigen::Index>(y_m[i])) = 1.0;
    s(r, z.cols() + k + static_cast<Eigen::Index>(y_t[i])) = 1.0;
  }
  s.rightCols(c.cols()) = c;
  return s;
}

double reward(std::size_t predicted, std::size_t target) { return predicted == target ? 1.0 : 0.0; }

Matrix select_action(const nn::Network& actor, const Matrix& state, std::size_t step, const TrainConfig& config,
                     Rng& rng) {
  const auto latent = static_cast<Eigen::Index>(actor.output_dim());
  Matrix a(state.rows(), latent);
  if (step < config.exploration_steps) {
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform(-1.0, 1.0);
    return a;
  }
  a = actor.infer(state);
  if (config.noise_std > 0.0)
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] += rng.normal(0.0, config.noise_std);
  return a.cwiseMax(-1.0).cwiseMin(1.0);
}

// ---------------------------------------------------------------- replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t x_dim, std::size_t z_dim, std::size_t c_dim)
    : capacity_(capacity),
      x_(0, static_cast<Eigen::Index>(x_dim)),
      z_(0, static_cast<Eigen::Index>(z_dim)),
      c_(0, static_cast<Eigen::Index>(c_dim)),
      action_(0, static_cast<Eigen::Index>(z_dim)) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::reserve_rows(std::size_t rows) {
  if (static_cast<std::size_t>(x_.rows()) >= rows) return;
  const auto target = static_cast<Eigen::Index>(std::min(capacity_, std::max(rows, 2 * static_cast<std::size_t>(x_.rows()))));
  x_.conservativeResize(target, Eigen::NoChange);
  z_.conservativeResize(target, Eigen::NoChange);
  c_.conservativeResize(target, Eigen::NoChange);
  action_.conservativeResize(target, Eigen::NoChange);
  y_m_.resize(static_cast<std::size_t>(target));
  y_t_.resize(static_cast<std::size_t>(target));
  reward_.resize(static_cast<std::size_t>(target));
  ids_.resize(static_cast<std::size_t>(target));
}

void ReplayBuffer::push(const Experience& e) {
  if (e.x.size() != x_.cols() || e.z.size() != z_.cols() || e.c.size() != c_.cols() || e.action.size() != action_.cols())
    throw DimensionError("experience does not match replay buffer widths");
  reserve_rows(std::min(capacity_, size_ + 1));
  const auto slot = static_cast<Eigen::Index>(cursor_);
  x_.row(slot) = e.x;
  z_.row(slot) = e.z;
  c_.row(slot) = e.c;
  action_.row(slot) = e.action;
  y_m_[cursor_] = e.y_m;
  y_t_[cursor_] = e.y_t;
  reward_[cursor_] = e.reward;
  ids_[cursor_] = next_id_++;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

void ReplayBuffer::push_batch(const Matrix& x, const Matrix& z, std::span<const std::size_t> y_m,
                              std::span<const std::size_t> y_t, const Matrix& c, const Matrix& action,
                              std::span<const double> rewards) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (static_cast<std::size_t>(z.rows()) != n || y_m.size() != n || y_t.size() != n ||
      static_cast<std::size_t>(c.rows()) != n || static_cast<std::size_t>(action.rows()) != n || rewards.size() != n)
    throw DimensionError("experience batch components have different sizes");
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    push(Experience{x.row(r), z.row(r), y_m[i], y_t[i], c.row(r), action.row(r), rewards[i]});
  }
}

ExperienceBatch ReplayBuffer::gather(std::span<const std::size_t> slots) const {
  ExperienceBatch b;
  const auto n = static_cast<Eigen::Index>(slots.size());
  b.x.resize(n, x_.cols());
  b.z.resize(n, z_.cols());
  b.c.resize(n, c_.cols());
  b.action.resize(n, action_.cols());
  b.reward.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t s = slots[static_cast<std::size_t>(i)];
    if (s >= size_) throw UsageError("replay buffer slot out of range");
    const auto r = static_cast<Eigen::Index>(s);
    b.x.row(i) = x_.row(r);
    b.z.row(i) = z_.row(r);
    b.c.row(i) = c_.row(r);
    b.action.row(i) = action_.row(r);
    b.reward[i] = reward_[s];
    b.y_m.push_back(y_m_[s]);
    b.y_t.push_back(y_t_[s]);
    b.ids.push_back(ids_[s]);
  }
  return b;
}

ExperienceBatch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (size_ == 0) throw UsageError("cannot sample from an empty replay buffer");
  std::vector<std::size_t> slots(batch_size);
  for (auto& s : slots) s = rng.index(size_);
  return gather(slots);
}

std::vector<std::uint64_t> ReplayBuffer::stored_ids() const {
  std::vector<std::uint64_t> out(ids_.begin(), ids_.begin() + static_cast<std::ptrdiff_t>(size_));
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- losses

double critic_loss(const nn::Network& critic, const Matrix& state, const Matrix& action, const ColVector& rewards,
                   nn::ParameterSet* gradients) {
  if (state.rows() == 0) throw UsageError("critic loss of an empty batch");
  if (rewards.size() != state.rows()) throw DimensionError("reward count does not match batch size");
  nn::ForwardCache cache;
  const Matrix q = critic.forward(concat_columns(state, action), cache);
  const Matrix diff = q.col(0) - rewards;
  const double b = static_cast<double>(state.rows());
  if (gradients) *gradients = critic.parameter_gradients(cache, 2.0 * diff / b);
  return diff.squaredNorm() / b;
}

ActorBatch make_actor_batch(const ExperienceBatch& batch, const data::TabularSchema& schema, std::size_t class_count) {
  ActorBatch ab;
  ab.state = build_state(batch.z, batch.y_m, batch.y_t, batch.c, class_count);
  ab.x = batch.x;
  ab.records.reserve(batch.size());
  ab.conditions.reserve(batch.size());
  for (Eigen::Index r = 0; r < batch.x.rows(); ++r) {
    ab.records.push_back(data::decode_exact(batch.x.row(r), schema));
    ab.conditions.push_back(cond::decode_condition(batch.c.row(r), schema));
  }
  return ab;
}

namespace {

// Objective for an actor forward pass that has already been cached.
ActorLoss objective_from_cache(const nn::Network& actor, const nn::ForwardCache& actor_cache, const Matrix& z_cf,
                               const nn::Network& critic, const ae::TabularAutoencoder& ae, const ActorBatch& batch,
                               const data::TabularSchema& schema, double lambda_sparsity, double lambda_consistency,
                               const Matrix& consistency_target) {
  const auto rows = batch.state.rows();
  const double b = static_cast<double>(rows);
  const auto latent = z_cf.cols();
  ActorLoss out;

  nn::ForwardCache critic_cache;
  const Matrix q = critic.forward(concat_columns(batch.state, z_cf), critic_cache);
  out.max_term = -q.mean();
  Matrix grad_z = critic.input_gradient(critic_cache, Matrix::Constant(rows, 1, -1.0 / b),
                                        static_cast<std::size_t>(batch.state.cols()));

  nn::ForwardCache dec_cache;
  const Matrix heads = ae.decoder().forward(z_cf, dec_cache);
  Matrix grad_heads = Matrix::Zero(heads.rows(), heads.cols());
  const auto n_num = static_cast<Eigen::Index>(schema.numerical_count());
  const std::size_t n_cat = schema.categorical_count();
  if (n_num > 0) {
    const Matrix diff = heads.leftCols(n_num) - batch.x.leftCols(n_num);
    const double scale = 1.0 / (b * static_cast<double>(n_num));
    out.sparsity += diff.cwiseAbs().sum() * scale;
    grad_heads.leftCols(n_num) = diff.unaryExpr([scale](double d) { return d > 0 ? scale : (d < 0 ? -scale : 0.0); });
  }
  if (n_cat > 0) {
    const double scale = 1.0 / (b * static_cast<double>(n_cat));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& rec = batch.records[static_cast<std::size_t>(r)];
      for (std::size_t c = 0; c < n_cat; ++c) {
        const auto col = static_cast<Eigen::Index>(schema.category_offset(c) + rec.categorical[c]);
        out.sparsity += (1.0 - heads(r, col)) * scale;
        grad_heads(r, col) = -scale;
      }
    }
  }
  if (lambda_sparsity != 0.0) grad_z += lambda_sparsity * ae.decoder().input_gradient(dec_cache, grad_heads);

  if (consistency_target.rows() != rows || consistency_target.cols() != latent)
    throw DimensionError("consistency target shape does not match actor output");
  const Matrix cdiff = z_cf - consistency_target;
  const double cells = b * static_cast<double>(latent);
  out.consistency = cdiff.squaredNorm() / cells;
  if (lambda_consistency != 0.0) grad_z += lambda_consistency * 2.0 * cdiff / cells;

  out.total = out.max_term + lambda_sparsity * out.sparsity + lambda_consistency * out.consistency;
  out.gradients = actor.parameter_gradients(actor_cache, grad_z);
  return out;
}

Matrix reencode(const Matrix& z_cf, const ae::TabularAutoencoder& ae, const ActorBatch& batch,
                const data::TabularSchema& schema) {
  const auto cf = cond::postprocess_batch(ae.decode(z_cf), batch.records, batch.conditions, schema);
  return ae.encode(data::encode_batch(cf, schema));
}

}  // namespace

Matrix consistency_targets(const nn::Network& actor, const ae::TabularAutoencoder& ae, const ActorBatch& batch,
                           const data::TabularSchema& schema) {
  return reencode(actor.infer(batch.state), ae, batch, schema);
}

ActorLoss actor_objective(const nn::Network& actor, const nn::Network& critic, const ae::TabularAutoencoder& ae,
                          const ActorBatch& batch, const data::TabularSchema& schema, double lambda_sparsity,
                          double lambda_consistency, const Matrix& consistency_target) {
  if (batch.state.rows() == 0) throw UsageError("actor loss of an empty batch");
  nn::ForwardCache cache;
  const Matrix z_cf = actor.forward(batch.state, cache);
  return objective_from_cache(actor, cache, z_cf, critic, ae, batch, schema, lambda_sparsity, lambda_consistency,
                              consistency_target);
}

ActorLoss actor_loss(const nn::Network& actor, const nn::Network& critic, const ae::TabularAutoencoder& ae,
                     const ActorBatch& batch, const data::TabularSchema& schema, double lambda_sparsity,
                     double lambda_consistency) {
  if (batch.state.rows() == 0) throw UsageError("actor loss of an empty batch");
  nn::ForwardCache cache;
  const Matrix z_cf = actor.forward(batch.state, cache);
  const Matrix target = reencode(z_cf, ae, batch, schema);
  return objective_from_cache(actor, cache, z_cf, critic, ae, batch, schema, lambda_sparsity, lambda_consistency,
                              target);
}

// ---------------------------------------------------------------- training loop

TrainedPolicy train(const TrainConfig& config, std::span<const data::InstanceRecord> records,
                    std::span<const std::size_t> labels, const data::TabularSchema& schema,
                    const blackbox::BlackBoxModel& model, const ae::TabularAutoencoder& ae,
                    const cond::ConstraintSet& constraints, std::uint64_t seed,
                    const std::function<void(const TrainLogEntry&)>& on_step) {
  config.validate();
  nn::tune_allocator();
  ae.check_schema(schema);
  if (ae.input_dim() != schema.encoded_width()) throw ConfigError("autoencoder input width does not match the schema");
  if (constraints.size() != schema.features().size()) throw ConfigError("constraint set does not match the schema");
  if (records.size() != labels.size() || records.empty()) throw ConfigError("training records and labels are inconsistent");

  const std::size_t classes = schema.class_count();
  const std::size_t B = config.batch_size;
  Rng rng(seed);

  TrainedPolicy policy;
  policy.shape = PolicyShape{ae.latent_dim(), classes, schema.condition_width(), config.hidden_dim};
  policy.schema_fingerprint = schema.fingerprint();
  policy.actor = make_actor(policy.shape, rng);
  policy.critic = make_critic(policy.shape, rng);
  nn::AdamState actor_adam(policy.actor.parameters(), nn::AdamConfig{config.actor_learning_rate});
  nn::AdamState critic_adam(policy.critic.parameters(), nn::AdamConfig{config.critic_learning_rate});

  const data::BalancedSampler sampler(labels, classes);
  ReplayBuffer buffer(config.buffer_capacity, schema.encoded_width(), ae.latent_dim(), schema.condition_width());
  const Matrix encoded = data::encode_batch(records, schema);

  std::vector<data::InstanceRecord> batch_records(B);
  std::vector<cond::FeatureCondition> conditions(B);
  std::vector<std::size_t> y_t(B);
  std::vector<double> rewards(B);
  Matrix x(static_cast<Eigen::Index>(B), encoded.cols());

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto rows = sampler.sample(B, rng);
    for (std::size_t i = 0; i < B; ++i) {
      x.row(static_cast<Eigen::Index>(i)) = encoded.row(static_cast<Eigen::Index>(rows[i]));
      batch_records[i] = records[rows[i]];
    }
    const auto y_m = model.predict_labels(x);
    for (std::size_t i = 0; i < B; ++i) {
      y_t[i] = config.identity_targets ? y_m[i] : cond::sample_target(y_m[i], classes, rng);
      conditions[i] = cond::sample_condition(schema, batch_records[i], constraints, rng);
    }
    const Matrix c = cond::encode_conditions(conditions, schema);
    const Matrix z = ae.encode(x);
    const Matrix state = build_state(z, y_m, y_t, c, classes);
    const Matrix action = select_action(policy.actor, state, step, config, rng);
    const auto cf = cond::postprocess_batch(ae.decode(action), batch_records, conditions, schema);
    const auto y_cf = model.predict_labels(data::encode_batch(cf, schema));
    double hits = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      rewards[i] = reward(y_cf[i], y_t[i]);
      hits += rewards[i];
    }
    buffer.push_batch(x, z, y_m, y_t, c, action, rewards);

    TrainLogEntry entry;
    entry.step = step;
    entry.reward_rate = hits / static_cast<double>(B);

    if (step + 1 >= config.warmup_steps) {
      for (std::size_t u = 0; u < config.updates_per_step; ++u) {
        const auto sampled = buffer.sample(B, rng);
        const ActorBatch ab = make_actor_batch(sampled, schema, classes);

        nn::ParameterSet critic_grads;
        entry.critic_loss = critic_loss(policy.critic, ab.state, sampled.action, sampled.reward, &critic_grads);
        nn::adam_update(policy.critic, critic_grads, critic_adam);

        const ActorLoss al = actor_loss(policy.actor, policy.critic, ae, ab, schema, config.lambda_sparsity,
                                        config.lambda_consistency);
        nn::adam_update(policy.actor, al.gradients, actor_adam);
        entry.updated = true;
        entry.actor_loss = al.total;
        entry.max_term = al.max_term;
        entry.sparsity = al.sparsity;
        entry.consistency = al.consistency;
      }
      if (!std::isfinite(entry.critic_loss) || !std::isfinite(entry.actor_loss))
        throw NumericError("DDPG losses diverged at step " + std::to_string(step));
    }
    if (on_step) on_step(entry);
    policy.log.push_back(entry);
  }
  return policy;
}

std::vector<NamedTensor> export_policy(const TrainedPolicy& policy, bool include_critic) {
  auto out = policy.actor.export_tensors("actor");
  if (include_critic) {
    auto critic = policy.critic.export_tensors("critic");
    out.insert(out.end(), critic.begin(), critic.end());
  }
  const auto& s = policy.shape;
  out.push_back(scalar_tensor("policy.shape", {static_cast<double>(s.latent_dim), static_cast<double>(s.class_count),
                                               static_cast<double>(s.condition_width), static_cast<double>(s.hidden_dim)}));
  return out;
}

TrainedPolicy import_policy(const TensorMap& tensors) {
  const auto& s = require_tensor(tensors, "policy.shape").data;
  if (s.size() != 4) throw DataError("policy.shape is malformed");
  TrainedPolicy p;
  p.shape = PolicyShape{static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]), static_cast<std::size_t>(s[2]),
                        static_cast<std::size_t>(s[3])};
  Rng rng(0);
  p.actor = make_actor(p.shape, rng);
  p.actor.import_tensors("actor", tensors);
  p.critic = make_critic(p.shape, rng);
  if (tensors.count("critic.layers")) p.critic.import_tensors("critic", tensors);
  return p;
}

}  // namespace cfrl::ddpg
