#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrl/blackbox.hpp"
#include "cfrl/conditioning.hpp"
#include "cfrl/data.hpp"
#include "cfrl/generator.hpp"
#include "cfrl/nn.hpp"

namespace cfrl::metrics {

double validity(std::span<const gen::CounterfactualResult> results);

// Fraction of categorical features that differ. DataError when the schema has none.
double sparsity_l0(const data::InstanceRecord& x, const data::InstanceRecord& cf, const data::TabularSchema& schema);
// Mean absolute standardized difference over numerical features. DataError when the schema has none.
double sparsity_l1(const data::InstanceRecord& x, const data::InstanceRecord& cf, const data::TabularSchema& schema);

struct MmdConfig {
  std::uint64_t seed = 0;
  std::vector<std::size_t> reduction_dims{32, 16, 5};
};

// Frozen randomly initialized dense/relu stack that maps encoded rows to a small space.
class MmdReducer {
 public:
  MmdReducer(std::size_t input_dim, const MmdConfig& config = {});
  Matrix reduce(const Matrix& encoded) const { return net_.infer(encoded); }
  const nn::Network& network() const { return net_; }

 private:
  nn::Network net_;
};

// Median of pairwise Euclidean distances over the pooled rows; 1 when that median is 0.
double median_bandwidth(const Matrix& a, const Matrix& b);
// exp(-||u - v||^2 / (2 sigma^2))
double rbf_kernel(const RowVector& u, const RowVector& v, double sigma);
// Biased estimator: mean k(a,a') + mean k(b,b') - 2 mean k(a,b).
double mmd_squared(const Matrix& a, const Matrix& b, double sigma);
// Reduces both encoded sets, picks the median bandwidth and returns MMD^2.
double conditional_mmd(const Matrix& counterfactuals, const Matrix& reference, const MmdReducer& reducer);

// Per-feature averaged L1 over standardized numericals plus L0 over categoricals.
double mo_distance(const data::InstanceRecord& a, const data::InstanceRecord& b, const data::TabularSchema& schema);

// Index of the closest training row predicted as target that satisfies the condition; ties go
// to the lowest index. Empty when nothing complies.
std::optional<std::size_t> mo_baseline(const data::InstanceRecord& x, std::size_t target,
                                       const cond::FeatureCondition& condition,
                                       std::span<const data::InstanceRecord> training,
                                       std::span<const std::size_t> training_predictions,
                                       const data::TabularSchema& schema);

// Runs the baseline over a request with generation-time conditions.
std::vector<gen::CounterfactualResult> generate_mo(const gen::CounterfactualRequest& request,
                                                   std::span<const data::InstanceRecord> training,
                                                   std::span<const std::size_t> training_predictions,
                                                   const data::TabularSchema& schema,
                                                   const blackbox::BlackBoxModel& model, std::uint64_t seed = 0);

struct SparsityPair {
  std::optional<double> valid_only;  // empty when undefined
  std::optional<double> all;
};

struct EvaluationReport {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::size_t found = 0;
  double validity = 0.0;
  SparsityPair l0;
  SparsityPair l1;
  std::map<std::size_t, double> mmd_valid;  // per target class
  std::map<std::size_t, double> mmd_all;
  std::optional<double> mean_mmd_valid;
  std::optional<double> mean_mmd_all;

  nlohmann::json to_json(const data::TabularSchema& schema) const;
};

EvaluationReport evaluate(std::span<const gen::CounterfactualResult> results,
                          std::span<const data::InstanceRecord> training,
                          std::span<const std::size_t> training_predictions, const data::TabularSchema& schema,
                          const MmdConfig& config = {});

// Mean and sample standard deviation over repeated runs.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};
Summary summarize(std::span<const double> values);

// One row per method; columns validity, L0, L1, MMD as mean±std over the reports.
std::string format_table(const std::vector<std::pair<std::string, std::vector<EvaluationReport>>>& rows);

}  // namespace cfrl::metrics
