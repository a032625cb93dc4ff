#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfrl/errors.hpp"
#include "cfrl/metrics.hpp"
#include "test_util.hpp"

using namespace cfrl;
using namespace cfrl::metrics;
using cfrl::testing::random_record;
using cfrl::testing::toy_schema;

namespace {

Matrix gaussian_cloud(std::size_t n, std::size_t dim, double mean, Rng& rng) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(mean, 1.0);
  return m;
}

double loop_mmd(const Matrix& a, const Matrix& b, double sigma) {
  auto k = [&](const Matrix& p, Eigen::Index i, const Matrix& q, Eigen::Index j) {
    double d2 = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) d2 += (p(i, c) - q(j, c)) * (p(i, c) - q(j, c));
    return std::exp(-d2 / (2 * sigma * sigma));
  };
  double aa = 0, bb = 0, ab = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.rows(); ++j) aa += k(a, i, a, j);
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) bb += k(b, i, b, j);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) ab += k(a, i, b, j);
  const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
  return aa / (na * na) + bb / (nb * nb) - 2 * ab / (na * nb);
}

data::TabularSchema nine_categoricals() {
  nlohmann::json features = nlohmann::json::array();
  for (int i = 0; i < 9; ++i)
    features.push_back({{"name", "f" + std::to_string(i)}, {"type", "categorical"}, {"categories", {"a", "b", "c"}}});
  auto s = data::TabularSchema::from_json({{"features", features}, {"target_classes", 2}});
  s.mark_fitted();
  return s;
}

gen::CounterfactualResult result(bool valid) {
  gen::CounterfactualResult r;
  r.valid = valid;
  return r;
}

}  // namespace

TEST(Validity, Counting) {
  const std::vector<gen::CounterfactualResult> mixed{result(true), result(false), result(true), result(true)};
  EXPECT_DOUBLE_EQ(validity(mixed), 0.75);
  const std::vector<gen::CounterfactualResult> all{result(true), result(true)};
  EXPECT_DOUBLE_EQ(validity(all), 1.0);
  EXPECT_THROW(validity(std::vector<gen::CounterfactualResult>{}), UsageError);
}

TEST(Sparsity, CountsAndMeans) {
  const auto nine = nine_categoricals();
  data::InstanceRecord x{{}, std::vector<std::size_t>(9, 0)};
  auto cf = x;
  EXPECT_EQ(sparsity_l0(x, cf, nine), 0.0);
  for (int i : {0, 3, 5, 8}) cf.categorical[i] = 2;
  EXPECT_DOUBLE_EQ(sparsity_l0(x, cf, nine), 4.0 / 9.0);
  EXPECT_THROW(sparsity_l1(x, cf, nine), DataError);

  const auto schema = toy_schema();
  const auto& age = schema.numerical(0);
  const auto& income = schema.numerical(1);
  data::InstanceRecord a{{30.0, 40.0}, {0, 1}};
  data::InstanceRecord b{{30.0 + 0.2 * age.std, 40.0 - 0.4 * income.std}, {0, 1}};
  EXPECT_NEAR(sparsity_l1(a, b, schema), 0.3, 1e-12);
  EXPECT_EQ(sparsity_l1(a, a, schema), 0.0);
  EXPECT_EQ(sparsity_l0(a, b, schema), 0.0);
  EXPECT_NEAR(mo_distance(a, b, schema), 0.3, 1e-12);
}

TEST(Mmd, IdenticalSetsGiveZero) {
  Rng rng(1);
  const Matrix x = gaussian_cloud(100, 5, 0.0, rng);
  EXPECT_NEAR(mmd_squared(x, x, median_bandwidth(x, x)), 0.0, 1e-10);
}

TEST(Mmd, MatchesDoubleLoopOracleAndSeparatesClouds) {
  Rng rng(2);
  const Matrix p = gaussian_cloud(200, 5, -5.0, rng);
  const Matrix q = gaussian_cloud(200, 5, 5.0, rng);
  const Matrix p2 = gaussian_cloud(200, 5, -5.0, rng);
  const double sep_sigma = median_bandwidth(p, q);
  const double same_sigma = median_bandwidth(p, p2);
  const double separated = mmd_squared(p, q, sep_sigma);
  const double same = mmd_squared(p, p2, same_sigma);
  EXPECT_NEAR(separated, loop_mmd(p, q, sep_sigma), 1e-12);
  EXPECT_NEAR(same, loop_mmd(p, p2, same_sigma), 1e-12);
  EXPECT_GT(separated, 10.0 * same);
  EXPECT_NEAR(mmd_squared(q, p, sep_sigma), separated, 1e-12);
}

TEST(Mmd, PermutationInvariantAndNonNegative) {
  Rng rng(3);
  const Matrix a = gaussian_cloud(60, 4, 0.0, rng);
  const Matrix b = gaussian_cloud(80, 4, 0.5, rng);
  std::vector<Eigen::Index> perm(60);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  Matrix ap(60, 4);
  for (Eigen::Index i = 0; i < 60; ++i) ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
  const double sigma = median_bandwidth(a, b);
  EXPECT_NEAR(median_bandwidth(ap, b), sigma, 1e-15);
  EXPECT_NEAR(mmd_squared(ap, b, sigma), mmd_squared(a, b, sigma), 1e-12);
  for (int t = 0; t < 20; ++t) {
    const Matrix u = gaussian_cloud(10, 3, 0.0, rng), v = gaussian_cloud(12, 3, 0.0, rng);
    EXPECT_GE(mmd_squared(u, v, median_bandwidth(u, v)), -1e-12);
  }
}

TEST(Mmd, BandwidthAndErrors) {
  Matrix a(2, 1), b(2, 1);
  a << 0, 1;
  b << 3, 6;
  // pairwise: 1 3 6 2 5 3 -> sorted 1 2 3 3 5 6, median (3 + 3) / 2
  EXPECT_DOUBLE_EQ(median_bandwidth(a, b), 3.0);
  EXPECT_DOUBLE_EQ(median_bandwidth(Matrix::Zero(3, 2), Matrix::Zero(2, 2)), 1.0);
  EXPECT_DOUBLE_EQ(rbf_kernel(RowVector::Zero(2), (RowVector(2) << 3, 4).finished(), 5.0), std::exp(-0.5));
  EXPECT_THROW(mmd_squared(Matrix(0, 1), b, 1.0), UsageError);
  EXPECT_THROW(mmd_squared(a, Matrix(0, 1), 1.0), UsageError);
  EXPECT_THROW(mmd_squared(a, Matrix::Zero(2, 2), 1.0), DimensionError);
}

TEST(Mmd, FrozenReducerIsReproducible) {
  Rng rng(4);
  const Matrix a = gaussian_cloud(30, 9, 0.0, rng), b = gaussian_cloud(40, 9, 1.0, rng);
  const MmdReducer r1(9), r2(9);
  EXPECT_EQ(r1.reduce(a).cols(), 5);
  EXPECT_EQ(conditional_mmd(a, b, r1), conditional_mmd(a, b, r2));
  EXPECT_NE(conditional_mmd(a, b, MmdReducer(9, {1, {32, 16, 5}})), conditional_mmd(a, b, r1));
  EXPECT_THROW(MmdReducer(9, {0, {}}), ConfigError);
}

TEST(MinimumObservable, MatchesExhaustiveScan) {
  const auto schema = toy_schema();
  Rng rng(5);
  std::vector<data::InstanceRecord> train;
  std::vector<std::size_t> preds;
  for (int i = 0; i < 50; ++i) {
    train.push_back(random_record(schema, rng));
    preds.push_back(rng.index(2));
  }
  const auto cs = cond::ConstraintSet::from_json(nlohmann::json::parse(R"({"size": "immutable"})"), schema);
  for (int q = 0; q < 200; ++q) {
    const auto x = random_record(schema, rng);
    const std::size_t target = rng.index(2);
    const auto c = (q % 2) ? cond::generation_condition(schema, x, cs)
                           : cond::sample_condition(schema, x, cond::ConstraintSet::all_free(schema), rng);
    std::optional<std::size_t> oracle;
    double best = 1e300;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (preds[i] != target || !cond::satisfies(train[i], x, c, schema)) continue;
      double d = 0.0;
      for (std::size_t n = 0; n < 2; ++n) d += std::abs(train[i].numerical[n] - x.numerical[n]) / schema.numerical(n).std / 2;
      for (std::size_t k = 0; k < 2; ++k) d += (train[i].categorical[k] != x.categorical[k]) / 2.0;
      if (d < best) {
        best = d;
        oracle = i;
      }
    }
    EXPECT_EQ(mo_baseline(x, target, c, train, preds, schema), oracle) << "query " << q;
  }
}

TEST(MinimumObservable, SelfAndImpossibleCases) {
  const auto schema = toy_schema();
  Rng rng(6);
  std::vector<data::InstanceRecord> train;
  for (int i = 0; i < 10; ++i) train.push_back(random_record(schema, rng));
  std::vector<std::size_t> preds(10, 0);
  preds[4] = 1;
  const auto free = cond::generation_condition(schema, train[4], cond::ConstraintSet::all_free(schema));
  EXPECT_EQ(mo_baseline(train[4], 1, free, train, preds, schema), std::optional<std::size_t>(4));

  auto x = train[4];
  x.categorical[0] = (train[4].categorical[0] + 1) % 3;
  const auto imm = cond::generation_condition(schema, x, cond::ConstraintSet::all_immutable(schema));
  EXPECT_EQ(mo_baseline(x, 1, imm, train, preds, schema), std::nullopt);
  EXPECT_THROW(mo_baseline(x, 1, imm, train, std::vector<std::size_t>{0}, schema), DimensionError);
}

TEST(Evaluate, ReportAndTable) {
  const auto schema = toy_schema();
  Rng rng(7);
  std::vector<data::InstanceRecord> train;
  std::vector<std::size_t> preds;
  for (int i = 0; i < 40; ++i) {
    train.push_back(random_record(schema, rng));
    preds.push_back(i % 2);
  }
  std::vector<gen::CounterfactualResult> results;
  for (int i = 0; i < 8; ++i) {
    gen::CounterfactualResult r;
    r.original = random_record(schema, rng);
    r.counterfactual = r.original;
    if (i % 2) r.counterfactual.categorical[0] = (r.original.categorical[0] + 1) % 3;
    r.target = i % 2;
    r.valid = i < 6;
    results.push_back(r);
  }
  const auto rep = evaluate(results, train, preds, schema);
  EXPECT_EQ(rep.total, 8u);
  EXPECT_EQ(rep.valid, 6u);
  EXPECT_DOUBLE_EQ(rep.validity, 0.75);
  EXPECT_DOUBLE_EQ(*rep.l0.valid_only, 0.25);
  EXPECT_DOUBLE_EQ(*rep.l0.all, 0.25);
  EXPECT_DOUBLE_EQ(*rep.l1.all, 0.0);
  EXPECT_EQ(rep.mmd_valid.size(), 2u);
  for (const auto& [k, v] : rep.mmd_all) EXPECT_GE(v, -1e-12);
  const auto j = rep.to_json(schema);
  EXPECT_EQ(j["validity"], 0.75);

  const auto again = evaluate(results, train, preds, schema);
  EXPECT_EQ(again.to_json(schema).dump(), j.dump());

  const std::vector<double> v{1.0, 2.0, 3.0};
  EXPECT_DOUBLE_EQ(summarize(v).mean, 2.0);
  EXPECT_DOUBLE_EQ(summarize(v).std, 1.0);
  const auto table = format_table({{"rl", {rep, again}}, {"mo", {rep}}});
  EXPECT_NE(table.find("75.00±0.00"), std::string::npos);
  EXPECT_NE(table.find("validity(%)"), std::string::npos);
  EXPECT_NE(table.find("mo"), std::string::npos);
}
