#include <gtest/gtest.h>

#include <set>

#include "cfrl/conditioning.hpp"
#include "cfrl/errors.hpp"
#include "test_util.hpp"

using namespace cfrl;
using namespace cfrl::cond;
using cfrl::testing::random_record;
using cfrl::testing::toy_schema;

namespace {

// age in [10, 60] (integer) and marital status {married, unmarried, divorced}.
data::TabularSchema person_schema() {
  nlohmann::json doc = {
      {"features",
       {{{"name", "age"}, {"type", "numerical"}, {"integer", true}},
        {{"name", "marital"}, {"type", "categorical"}, {"categories", {"married", "unmarried", "divorced"}}}}},
      {"target_classes", 2}};
  auto schema = data::TabularSchema::from_json(doc);
  std::vector<data::InstanceRecord> rows{{{10.0}, {0}}, {{60.0}, {1}}, {{35.0}, {2}}};
  std::vector<std::size_t> all{0, 1, 2};
  data::fit_statistics(schema, rows, all);
  return schema;
}

ConstraintSet parse(const std::string& text, const data::TabularSchema& schema) {
  return ConstraintSet::from_json(nlohmann::json::parse(text), schema);
}

RowVector random_decoded(const data::TabularSchema& schema, Rng& rng) {
  RowVector d(static_cast<Eigen::Index>(schema.encoded_width()));
  for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = rng.uniform(-4, 4);
  for (const auto& b : schema.categorical_blocks()) {
    auto seg = d.segment(static_cast<Eigen::Index>(b.begin), static_cast<Eigen::Index>(b.size()));
    seg = seg.array().exp();
    seg /= seg.sum();
  }
  return d;
}

}  // namespace

TEST(Conditioning, ImmutableFeaturesAreFrozen) {
  const auto schema = person_schema();
  const auto cs = parse(R"({"age": "immutable", "marital": "immutable"})", schema);
  const data::InstanceRecord rec{{25.0}, {0}};
  Rng rng(0);
  for (int i = 0; i < 100; ++i) {
    const auto c = sample_condition(schema, rec, cs, rng);
    EXPECT_EQ(c.numerical[0], (NumericAllowance{0.0, 0.0}));
    EXPECT_EQ(c.masks[0], (std::vector<std::uint8_t>{1, 0, 0}));
  }
}

TEST(Conditioning, RangeConstraintEncodesFractionOfRange) {
  const auto schema = person_schema();
  const auto cs = parse(R"({"age": {"range": [0, 5]}})", schema);
  const data::InstanceRecord rec{{25.0}, {1}};
  const auto c = generation_condition(schema, rec, cs);
  const RowVector v = encode_condition(c, schema);
  EXPECT_DOUBLE_EQ(v[0], 0.0);
  EXPECT_DOUBLE_EQ(v[1], 0.1);
  const auto iv = numeric_interval(schema, rec, c, 0);
  EXPECT_DOUBLE_EQ(iv.lo, 25.0);
  EXPECT_DOUBLE_EQ(iv.hi, 30.0);
}

TEST(Conditioning, ConditionLayout) {
  const auto schema = toy_schema();
  Rng rng(1);
  const auto rec = random_record(schema, rng);
  const auto imm = generation_condition(schema, rec, ConstraintSet::all_immutable(schema));
  const RowVector v = encode_condition(imm, schema);
  ASSERT_EQ(static_cast<std::size_t>(v.size()), schema.condition_width());
  EXPECT_EQ(v.head(4), RowVector::Zero(4));
  RowVector masks = RowVector::Zero(7);
  masks[static_cast<Eigen::Index>(rec.categorical[0])] = 1;
  masks[3 + static_cast<Eigen::Index>(rec.categorical[1])] = 1;
  EXPECT_EQ(v.tail(7), masks);

  const auto free = generation_condition(schema, rec, ConstraintSet::all_free(schema));
  for (std::size_t d = 0; d < schema.numerical_count(); ++d) {
    const auto& f = schema.numerical(d);
    const auto iv = numeric_interval(schema, rec, free, d);
    EXPECT_DOUBLE_EQ(iv.lo, rec.numerical[d] - (f.a_max - f.a_min));
    EXPECT_DOUBLE_EQ(iv.hi, rec.numerical[d] + (f.a_max - f.a_min));
  }
}

TEST(Conditioning, DirectionalConstraints) {
  const auto schema = toy_schema();
  const auto cs = parse(R"({"age": "increase_only", "income": "decrease_only", "size": {"subset": ["s", "m"]}})", schema);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto rec = random_record(schema, rng);
    const auto c = sample_condition(schema, rec, cs, rng);
    EXPECT_EQ(c.numerical[0].p_min, 0.0);
    EXPECT_EQ(c.numerical[1].p_max, 0.0);
    EXPECT_EQ(c.masks[1][rec.categorical[1]], 1);
    for (std::size_t k = 2; k < 4; ++k)
      if (k != rec.categorical[1]) EXPECT_EQ(c.masks[1][k], 0);
  }
}

TEST(Conditioning, RejectsBadConstraintFiles) {
  const auto schema = toy_schema();
  EXPECT_THROW(parse(R"({"height": "immutable"})", schema), ConfigError);
  EXPECT_THROW(parse(R"({"age": "sideways"})", schema), ConfigError);
  EXPECT_THROW(parse(R"({"age": {"range": [1, 5]}})", schema), ConfigError);
  EXPECT_THROW(parse(R"({"color": "increase_only"})", schema), ConfigError);
  EXPECT_THROW(parse(R"({"age": {"subset": ["s"]}})", schema), ConfigError);
  EXPECT_THROW(parse(R"({"size": {"subset": ["xxl"]}})", schema), ConfigError);
  EXPECT_THROW(parse(R"([1, 2])", schema), ConfigError);
}

TEST(Conditioning, MaskBitsAreFairCoins) {
  const auto schema = toy_schema();
  const data::InstanceRecord rec{{30.0, 50.0}, {0, 2}};
  Rng rng(3);
  std::vector<double> freq(4, 0.0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto c = sample_condition(schema, rec, ConstraintSet::all_free(schema), rng);
    for (std::size_t k = 0; k < 4; ++k) freq[k] += c.masks[1][k];
  }
  EXPECT_EQ(freq[2], n);
  for (std::size_t k : {0u, 1u, 3u}) EXPECT_NEAR(freq[k] / n, 0.5, 0.02);
}

TEST(Conditioning, AllowancesFollowBetaTwoTwo) {
  const auto schema = toy_schema();
  const data::InstanceRecord rec{{30.0, 50.0}, {0, 2}};
  Rng rng(4);
  const int n = 10000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double p = sample_condition(schema, rec, ConstraintSet::all_free(schema), rng).numerical[0].p_max;
    ASSERT_GE(p, 0.0);
    ASSERT_LE(p, 1.0);
    sum += p;
    sq += p * p;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 0.01);
  EXPECT_NEAR(sq / n - mean * mean, 0.05, 0.005);
}

TEST(Conditioning, TargetSampling) {
  Rng rng(5);
  const int n = 10000;
  std::vector<double> two(2, 0.0);
  std::set<std::size_t> seven;
  for (int i = 0; i < n; ++i) {
    two[sample_target(0, 2, rng)] += 1;
    seven.insert(sample_target(3, 7, rng));
    EXPECT_NE(sample_other_target(1, 3, rng), 1u);
  }
  EXPECT_NEAR(two[0] / n, 0.5, 0.02);
  EXPECT_EQ(seven.size(), 7u);
  Rng a(9), b(9);
  EXPECT_EQ(sample_target(0, 5, a), sample_target(0, 5, b));
  EXPECT_THROW(sample_target(0, 1, rng), ConfigError);
  EXPECT_EQ(one_hot(2, 4), (RowVector(4) << 0, 0, 1, 0).finished());
}

TEST(Postprocess, RoundsIntegersAndClips) {
  const auto schema = person_schema();
  const data::InstanceRecord rec{{25.0}, {1}};
  const auto& age = schema.numerical(0);
  const auto free = generation_condition(schema, rec, ConstraintSet::all_free(schema));
  RowVector d = data::encode(rec, schema);
  d[0] = (40.3 - age.mean) / age.std;
  EXPECT_EQ(postprocess(d, rec, free, schema).numerical[0], 40.0);

  const auto ranged = generation_condition(schema, rec, parse(R"({"age": {"range": [-2, 5]}})", schema));
  d[0] = (500.0 - age.mean) / age.std;
  EXPECT_EQ(postprocess(d, rec, ranged, schema).numerical[0], 30.0);
  d[0] = (-500.0 - age.mean) / age.std;
  EXPECT_EQ(postprocess(d, rec, ranged, schema).numerical[0], 23.0);
}

TEST(Postprocess, MaskedArgmax) {
  const auto schema = person_schema();
  const data::InstanceRecord rec{{25.0}, {1}};
  RowVector d = data::encode(rec, schema);
  d.tail(3) << 0.7, 0.1, 0.2;
  const auto imm = generation_condition(schema, rec, parse(R"({"marital": "immutable"})", schema));
  EXPECT_EQ(postprocess(d, rec, imm, schema).categorical[0], 1u);
  const auto sub = generation_condition(schema, rec, parse(R"({"marital": {"subset": ["divorced"]}})", schema));
  EXPECT_EQ(postprocess(d, rec, sub, schema).categorical[0], 2u);
  d.tail(3) << 0.4, 0.2, 0.4;
  const auto free = generation_condition(schema, rec, ConstraintSet::all_free(schema));
  EXPECT_EQ(postprocess(d, rec, free, schema).categorical[0], 0u);
  EXPECT_THROW(postprocess(d.head(2), rec, free, schema), DimensionError);
}

TEST(Postprocess, AlwaysSatisfiesTheCondition) {
  const auto schema = toy_schema();
  const auto cs = parse(R"({"age": {"range": [-3, 4]}, "income": "decrease_only", "size": {"subset": ["m", "xl"]}})",
                        schema);
  Rng rng(6);
  for (int i = 0; i < 10000; ++i) {
    const auto rec = random_record(schema, rng);
    const auto c = (i % 2) ? sample_condition(schema, rec, cs, rng)
                           : sample_condition(schema, rec, ConstraintSet::all_free(schema), rng);
    RowVector d = random_decoded(schema, rng);
    if (i % 5 == 0) d.head(2) *= 100.0;
    const auto out = postprocess(d, rec, c, schema);
    ASSERT_TRUE(satisfies(out, rec, c, schema)) << "draw " << i;
  }
}

TEST(Postprocess, IdempotentAndIdentityWhenImmutable) {
  const auto schema = toy_schema();
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const auto rec = random_record(schema, rng);
    const auto c = sample_condition(schema, rec, ConstraintSet::all_free(schema), rng);
    const auto once = postprocess(random_decoded(schema, rng), rec, c, schema);
    const auto twice = postprocess(data::encode(once, schema), rec, c, schema);
    EXPECT_EQ(twice.categorical, once.categorical);
    for (std::size_t d = 0; d < once.numerical.size(); ++d) EXPECT_NEAR(twice.numerical[d], once.numerical[d], 1e-9);

    const auto imm = generation_condition(schema, rec, ConstraintSet::all_immutable(schema));
    EXPECT_EQ(postprocess(random_decoded(schema, rng), rec, imm, schema), rec);
  }
}

TEST(Conditioning, EncodingIsInjective) {
  const auto schema = toy_schema();
  Rng rng(8);
  std::vector<FeatureCondition> seen;
  for (int i = 0; i < 300; ++i) {
    const auto rec = random_record(schema, rng);
    const auto c = sample_condition(schema, rec, ConstraintSet::all_free(schema), rng);
    const RowVector v = encode_condition(c, schema);
    EXPECT_EQ(decode_condition(v, schema), c);
    for (const auto& s : seen)
      if (!(s == c)) EXPECT_NE(encode_condition(s, schema), v);
    seen.push_back(c);
  }
}

TEST(Conditioning, ConstraintJsonRoundTrip) {
  const auto schema = toy_schema();
  const auto cs = parse(R"({"age": {"range": [-3, 4]}, "color": "immutable", "size": {"subset": ["m"]}})", schema);
  const auto back = ConstraintSet::from_json(cs.to_json(schema), schema);
  EXPECT_EQ(back.to_json(schema), cs.to_json(schema));
  EXPECT_EQ(back.at(0).kind, ConstraintKind::Range);
  EXPECT_EQ(back.at(2).kind, ConstraintKind::Free);
}
