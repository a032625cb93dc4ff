#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cfrl/ddpg.hpp"
#include "cfrl/errors.hpp"
#include "test_util.hpp"

using namespace cfrl;
using namespace cfrl::ddpg;
using cfrl::testing::blobs;
using cfrl::testing::random_record;
using cfrl::testing::toy_schema;

namespace {

void zero_output_layer(nn::Network& net, double bias) {
  auto& p = net.mutable_parameters();
  for (std::size_t l = p.size(); l-- > 0;)
    if (p[l].weights.size()) {
      p[l].weights.setZero();
      p[l].bias.setConstant(bias);
      return;
    }
}

struct TinyProblem {
  data::TabularSchema schema = toy_schema();
  PolicyShape shape;
  ae::TabularAutoencoder ae;
  nn::Network actor, critic;
  ActorBatch batch;

  explicit TinyProblem(std::uint64_t seed, std::size_t rows = 5) {
    Rng rng(seed);
    ae = ae::TabularAutoencoder(schema, 3, 0, rng);
    shape = PolicyShape{3, 2, schema.condition_width(), 6};
    actor = make_actor(shape, rng);
    critic = make_critic(shape, rng);
    std::vector<std::size_t> y_m, y_t;
    for (std::size_t i = 0; i < rows; ++i) {
      batch.records.push_back(random_record(schema, rng));
      batch.conditions.push_back(
          cond::sample_condition(schema, batch.records.back(), cond::ConstraintSet::all_free(schema), rng));
      y_m.push_back(rng.index(2));
      y_t.push_back(rng.index(2));
    }
    batch.x = data::encode_batch(batch.records, schema);
    batch.state = build_state(ae.encode(batch.x), y_m, y_t, cond::encode_conditions(batch.conditions, schema), 2);
  }
};

}  // namespace

TEST(Reward, Indicator) {
  EXPECT_EQ(reward(1, 1), 1.0);
  EXPECT_EQ(reward(0, 1), 0.0);
}

TEST(Networks, ShapesAndRanges) {
  Rng rng(0);
  const PolicyShape shape{4, 3, 7, 16};
  EXPECT_EQ(shape.state_dim(), 4u + 6u + 7u);
  const auto actor = make_actor(shape, rng);
  const auto critic = make_critic(shape, rng);
  EXPECT_EQ(actor.input_dim(), shape.state_dim());
  EXPECT_EQ(actor.output_dim(), 4u);
  EXPECT_EQ(critic.input_dim(), shape.state_dim() + 4u);
  EXPECT_EQ(critic.output_dim(), 1u);
  EXPECT_EQ(actor.layers().back().kind, nn::LayerKind::Tanh);
  EXPECT_EQ(critic.layers().back().kind, nn::LayerKind::Dense);
  Matrix s(64, static_cast<Eigen::Index>(shape.state_dim()));
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.normal(0, 50);
  EXPECT_LT(actor.infer(s).cwiseAbs().maxCoeff(), 1.0);
}

TEST(Networks, StateLayout) {
  Matrix z(1, 2);
  z << 0.1, 0.2;
  Matrix c(1, 3);
  c << 7, 8, 9;
  const std::vector<std::size_t> ym{1}, yt{2};
  RowVector expect(10);
  expect << 0.1, 0.2, 0, 1, 0, 0, 0, 1, 7, 8;
  expect.conservativeResize(11);
  expect[10] = 9;
  EXPECT_EQ(RowVector(build_state(z, ym, yt, c, 3).row(0)), expect);
  EXPECT_THROW(build_state(z, ym, std::vector<std::size_t>{3}, c, 3), DimensionError);
  EXPECT_THROW(concat_columns(z, Matrix(2, 1)), DimensionError);
}

TEST(SelectAction, ExplorationPhaseIgnoresActor) {
  Rng rng(1);
  const PolicyShape shape{5, 2, 3, 8};
  auto actor = make_actor(shape, rng);
  TrainConfig cfg;
  const Matrix state = Matrix::Random(200, static_cast<Eigen::Index>(shape.state_dim()));
  Rng a(2), b(2);
  const Matrix first = select_action(actor, state, 0, cfg, a);
  zero_output_layer(actor, 0.3);
  EXPECT_EQ(select_action(actor, state, 99, cfg, b), first);
  EXPECT_LE(first.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_GT(first.maxCoeff(), 0.9);
  EXPECT_LT(first.minCoeff(), -0.9);
}

TEST(SelectAction, NoiseFreeActionIsActorOutput) {
  Rng rng(3);
  const PolicyShape shape{5, 2, 3, 8};
  const auto actor = make_actor(shape, rng);
  TrainConfig cfg;
  cfg.noise_std = 0.0;
  const Matrix state = Matrix::Random(10, static_cast<Eigen::Index>(shape.state_dim()));
  EXPECT_EQ(select_action(actor, state, 100, cfg, rng), actor.infer(state));
}

TEST(SelectAction, GaussianNoiseMoments) {
  Rng rng(4);
  const PolicyShape shape{1, 2, 3, 8};
  auto actor = make_actor(shape, rng);
  zero_output_layer(actor, 0.0);
  TrainConfig cfg;
  const Matrix state = Matrix::Random(10000, static_cast<Eigen::Index>(shape.state_dim()));
  const Matrix a = select_action(actor, state, 100, cfg, rng);
  const double mean = a.mean();
  const double sd = std::sqrt((a.array() - mean).square().sum() / static_cast<double>(a.size() - 1));
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(sd, 0.1, 0.01);
}

TEST(CriticLoss, MatchesDirectComputation) {
  Rng rng(5);
  const PolicyShape shape{3, 2, 4, 8};
  auto critic = make_critic(shape, rng);
  const Matrix state = Matrix::Random(16, static_cast<Eigen::Index>(shape.state_dim()));
  const Matrix action = Matrix::Random(16, 3);
  ColVector r(16);
  for (Eigen::Index i = 0; i < 16; ++i) r[i] = static_cast<double>(rng.index(2));

  const Matrix q = critic.infer(concat_columns(state, action));
  double direct = 0.0;
  for (Eigen::Index i = 0; i < 16; ++i) direct += (q(i, 0) - r[i]) * (q(i, 0) - r[i]);
  nn::ParameterSet grads;
  EXPECT_NEAR(critic_loss(critic, state, action, r, &grads), direct / 16.0, 1e-12);
  cfrl::testing::expect_gradients_match(critic.mutable_parameters(), grads,
                                        [&] { return critic_loss(critic, state, action, r); });

  zero_output_layer(critic, 1.0);
  EXPECT_EQ(critic_loss(critic, state, action, ColVector::Ones(16)), 0.0);
  zero_output_layer(critic, 0.0);
  EXPECT_EQ(critic_loss(critic, state, action, ColVector::Ones(16)), 1.0);
  EXPECT_THROW(critic_loss(critic, state.topRows(0), action.topRows(0), ColVector(0)), UsageError);
  EXPECT_THROW(critic_loss(critic, state, action, ColVector::Ones(3)), DimensionError);
}

TEST(ActorLoss, ReducesToCriticTermWithoutRegularizers) {
  TinyProblem p(6);
  const auto loss = actor_loss(p.actor, p.critic, p.ae, p.batch, p.schema, 0.0, 0.0);
  const Matrix q = p.critic.infer(concat_columns(p.batch.state, p.actor.infer(p.batch.state)));
  EXPECT_NEAR(loss.total, -q.mean(), 1e-12);
  EXPECT_NEAR(loss.max_term, -q.mean(), 1e-12);
}

TEST(ActorLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {7u, 8u}) {
    TinyProblem p(seed);
    const Matrix target = consistency_targets(p.actor, p.ae, p.batch, p.schema);
    const auto loss = actor_objective(p.actor, p.critic, p.ae, p.batch, p.schema, 0.5, 0.5, target);
    EXPECT_NEAR(loss.total, loss.max_term + 0.5 * loss.sparsity + 0.5 * loss.consistency, 1e-12);
    cfrl::testing::expect_gradients_match(p.actor.mutable_parameters(), loss.gradients, [&] {
      return actor_objective(p.actor, p.critic, p.ae, p.batch, p.schema, 0.5, 0.5, target).total;
    });
  }
}

TEST(ActorLoss, ConstantCriticGivesZeroGradient) {
  TinyProblem p(9);
  zero_output_layer(p.critic, 0.7);
  const auto loss = actor_loss(p.actor, p.critic, p.ae, p.batch, p.schema, 0.0, 0.0);
  EXPECT_NEAR(loss.total, -0.7, 1e-15);
  for (const auto& g : loss.gradients) {
    if (g.weights.size()) EXPECT_EQ(g.weights.cwiseAbs().maxCoeff(), 0.0);
    if (g.bias.size()) EXPECT_EQ(g.bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(ActorLoss, EmptyBatchRejected) {
  TinyProblem p(10, 0);
  EXPECT_THROW(actor_loss(p.actor, p.critic, p.ae, p.batch, p.schema, 0.5, 0.5), UsageError);
}

TEST(ReplayBuffer, FifoOverwrite) {
  ReplayBuffer buf(5, 1, 1, 1);
  for (int i = 0; i < 8; ++i) {
    Experience e{RowVector::Constant(1, i), RowVector::Zero(1), 0, 1, RowVector::Zero(1), RowVector::Zero(1), 1.0};
    buf.push(e);
    EXPECT_LE(buf.size(), 5u);
  }
  EXPECT_EQ(buf.stored_ids(), (std::vector<std::uint64_t>{3, 4, 5, 6, 7}));
  const std::vector<std::size_t> all{0, 1, 2, 3, 4};
  const auto g = buf.gather(all);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g.x(static_cast<Eigen::Index>(i), 0), static_cast<double>(g.ids[i]));
  EXPECT_THROW(buf.gather(std::vector<std::size_t>{5}), UsageError);
  EXPECT_THROW(ReplayBuffer(4, 1, 1, 1).sample(2, *std::make_unique<Rng>(0)), UsageError);
  EXPECT_THROW(buf.push(Experience{RowVector::Zero(2), RowVector::Zero(1), 0, 0, RowVector::Zero(1),
                                   RowVector::Zero(1), 0.0}),
               DimensionError);
}

TEST(ReplayBuffer, UniformSampling) {
  const std::size_t n = 1000;
  ReplayBuffer buf(n, 1, 1, 1);
  for (std::size_t i = 0; i < n + 250; ++i)
    buf.push({RowVector::Zero(1), RowVector::Zero(1), 0, 0, RowVector::Zero(1), RowVector::Zero(1), 0.0});
  Rng rng(11);
  std::vector<double> count(n + 250, 0.0);
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws / 100; ++i)
    for (auto id : buf.sample(100, rng).ids) count[id] += 1;
  const double p = 1.0 / n;
  const double sigma = std::sqrt(p * (1 - p) / draws);
  std::size_t outside3 = 0;
  for (std::size_t id = 0; id < 250; ++id) EXPECT_EQ(count[id], 0.0);
  for (std::size_t id = 250; id < n + 250; ++id) {
    const double dev = std::abs(count[id] / draws - p);
    EXPECT_LT(dev, 4.5 * sigma) << "id " << id;
    if (dev > 3 * sigma) ++outside3;
  }
  EXPECT_LE(outside3, 10u);
}

TEST(ReplayBuffer, BatchPushMatchesSinglePushes) {
  Rng rng(12);
  const Matrix x = Matrix::Random(3, 2), z = Matrix::Random(3, 1), c = Matrix::Random(3, 2), a = Matrix::Random(3, 1);
  const std::vector<std::size_t> ym{0, 1, 0}, yt{1, 1, 0};
  const std::vector<double> r{1, 0, 1};
  ReplayBuffer batch(2, 2, 1, 2), single(2, 2, 1, 2);
  batch.push_batch(x, z, ym, yt, c, a, r);
  for (Eigen::Index i = 0; i < 3; ++i)
    single.push({x.row(i), z.row(i), ym[i], yt[i], c.row(i), a.row(i), r[i]});
  const std::vector<std::size_t> slots{0, 1};
  EXPECT_EQ(batch.gather(slots).x, single.gather(slots).x);
  EXPECT_EQ(batch.gather(slots).reward, single.gather(slots).reward);
  EXPECT_EQ(batch.stored_ids(), single.stored_ids());
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lambda_sparsity = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.actor_learning_rate = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.buffer_capacity = 10;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, IdentityEpisodesAlwaysRewarded) {
  const auto& b = blobs();
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.hidden_dim = 16;
  cfg.batch_size = 32;
  cfg.identity_targets = true;
  const auto policy = train(cfg, b.train, b.train_labels, b.dataset.schema, b.model, b.ae,
                            cond::ConstraintSet::all_immutable(b.dataset.schema), 13);
  ASSERT_EQ(policy.log.size(), 30u);
  for (const auto& e : policy.log) EXPECT_EQ(e.reward_rate, 1.0);
  for (std::size_t s = 9; s < 30; ++s) EXPECT_TRUE(policy.log[s].updated);
  EXPECT_FALSE(policy.log[0].updated);
}

TEST(Train, LearnsBeyondRandomExploration) {
  const auto& b = blobs();
  TrainConfig cfg;
  cfg.steps = 600;
  cfg.hidden_dim = 32;
  cfg.batch_size = 64;
  cfg.lambda_sparsity = 0.1;
  const auto policy = train(cfg, b.train, b.train_labels, b.dataset.schema, b.model, b.ae,
                            cond::ConstraintSet::all_free(b.dataset.schema), 14);
  double early = 0.0, late = 0.0;
  for (std::size_t s = 0; s < 100; ++s) early += policy.log[s].reward_rate / 100;
  for (std::size_t s = 500; s < 600; ++s) late += policy.log[s].reward_rate / 100;
  EXPECT_GT(late, early + 0.1);
  EXPECT_GT(late, 0.8);
}

TEST(Train, BitIdenticalUnderSeed) {
  const auto& b = blobs();
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.hidden_dim = 16;
  cfg.batch_size = 32;
  const auto cs = cond::ConstraintSet::all_free(b.dataset.schema);
  const auto p1 = train(cfg, b.train, b.train_labels, b.dataset.schema, b.model, b.ae, cs, 15);
  const auto p2 = train(cfg, b.train, b.train_labels, b.dataset.schema, b.model, b.ae, cs, 15);
  const auto t1 = export_policy(p1, true), t2 = export_policy(p2, true);
  ASSERT_EQ(t1.size(), t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) EXPECT_EQ(t1[i].data, t2[i].data) << t1[i].name;
  const auto p3 = train(cfg, b.train, b.train_labels, b.dataset.schema, b.model, b.ae, cs, 16);
  EXPECT_NE(p3.actor.parameters()[0].weights, p1.actor.parameters()[0].weights);
}

TEST(Train, RejectsMismatchedComponents) {
  const auto& b = blobs();
  TrainConfig cfg;
  cfg.steps = 1;
  auto other = b.dataset.schema;
  other.numerical_mut(0).mean += 0.5;
  EXPECT_THROW(train(cfg, b.train, b.train_labels, other, b.model, b.ae, cond::ConstraintSet::all_free(other), 1),
               ConfigError);
  EXPECT_THROW(train(cfg, b.train, b.train_labels, b.dataset.schema, b.model, b.ae, cond::ConstraintSet{}, 1),
               ConfigError);
}

TEST(Policy, ExportImportRoundTrip) {
  Rng rng(17);
  TrainedPolicy p;
  p.shape = PolicyShape{3, 2, 5, 8};
  p.actor = make_actor(p.shape, rng);
  p.critic = make_critic(p.shape, rng);
  TensorMap map;
  for (auto& t : export_policy(p, true)) map[t.name] = t;
  const auto back = import_policy(map);
  EXPECT_EQ(back.shape.state_dim(), p.shape.state_dim());
  const Matrix s = Matrix::Random(4, static_cast<Eigen::Index>(p.shape.state_dim()));
  EXPECT_EQ(back.actor.infer(s), p.actor.infer(s));
}
