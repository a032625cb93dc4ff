#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrl/data.hpp"
#include "cfrl/rng.hpp"
#include "cfrl/tensor.hpp"

namespace cfrl::cond {

enum class ConstraintKind { Free, Immutable, IncreaseOnly, DecreaseOnly, Range, Subset };

// User restriction on one feature. Range holds allowed changes [lo, hi] in original
// units relative to the instance value (lo <= 0 <= hi); Subset lists allowed categories.
struct FeatureConstraint {
  ConstraintKind kind = ConstraintKind::Free;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> allowed;
};

// One constraint per schema feature, in schema order.
class ConstraintSet {
 public:
  ConstraintSet() = default;
  explicit ConstraintSet(std::vector<FeatureConstraint> per_feature) : per_feature_(std::move(per_feature)) {}

  static ConstraintSet all_free(const data::TabularSchema& schema);
  static ConstraintSet all_immutable(const data::TabularSchema& schema);
  // {"feature": "immutable" | "increase_only" | "decrease_only" | "free" | {"range": [lo, hi]} | {"subset": [..]}}
  static ConstraintSet from_json(const nlohmann::json& doc, const data::TabularSchema& schema);
  static ConstraintSet load(const std::filesystem::path& path, const data::TabularSchema& schema);
  nlohmann::json to_json(const data::TabularSchema& schema) const;

  const FeatureConstraint& at(std::size_t feature) const { return per_feature_.at(feature); }
  std::size_t size() const { return per_feature_.size(); }

 private:
  std::vector<FeatureConstraint> per_feature_;
};

struct NumericAllowance {
  double p_min = 0.0;
  double p_max = 0.0;
  friend bool operator==(const NumericAllowance&, const NumericAllowance&) = default;
};

// Per-feature condition: numerical allowances as fractions of the training range,
// categorical masks over the vocabulary (always permitting the original value).
struct FeatureCondition {
  std::vector<NumericAllowance> numerical;
  std::vector<std::vector<std::uint8_t>> masks;
  friend bool operator==(const FeatureCondition&, const FeatureCondition&) = default;
};

// Training-time draw: Beta(2,2) allowances and Bern(0.5) mask bits, restricted by the constraints.
FeatureCondition sample_condition(const data::TabularSchema& schema, const data::InstanceRecord& record,
                                  const ConstraintSet& constraints, Rng& rng);

// Deterministic generation-time condition: free features get the widest allowance
// (p_min = p_max = 1, full mask); restricted features get exactly their constraint.
FeatureCondition generation_condition(const data::TabularSchema& schema, const data::InstanceRecord& record,
                                      const ConstraintSet& constraints);

// Flat vector: per numerical (-p_min, p_max), then each categorical mask.
RowVector encode_condition(const FeatureCondition& condition, const data::TabularSchema& schema);
Matrix encode_conditions(std::span<const FeatureCondition> conditions, const data::TabularSchema& schema);
// Inverse of encode_condition.
FeatureCondition decode_condition(const RowVector& encoded, const data::TabularSchema& schema);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// [a - p_min (a_max - a_min), a + p_max (a_max - a_min)] for numerical feature d.
Interval numeric_interval(const data::TabularSchema& schema, const data::InstanceRecord& record,
                          const FeatureCondition& condition, std::size_t d);

// Uniform over all classes, the model's own prediction included.
std::size_t sample_target(std::size_t y_m, std::size_t class_count, Rng& rng);
// Uniform over the classes other than y_m.
std::size_t sample_other_target(std::size_t y_m, std::size_t class_count, Rng& rng);
RowVector one_hot(std::size_t index, std::size_t size);

// Maps one decoded row (encoded layout) to a record that satisfies the condition:
// numericals are un-standardized, clipped to their interval and cast; categoricals
// take the most probable mask-allowed category (lowest index on ties).
data::InstanceRecord postprocess(const RowVector& decoded, const data::InstanceRecord& original,
                                 const FeatureCondition& condition, const data::TabularSchema& schema);

std::vector<data::InstanceRecord> postprocess_batch(const Matrix& decoded, std::span<const data::InstanceRecord> originals,
                                                    std::span<const FeatureCondition> conditions,
                                                    const data::TabularSchema& schema);

// True when every numerical lies in its interval and every category is mask-allowed.
bool satisfies(const data::InstanceRecord& candidate, const data::InstanceRecord& original,
               const FeatureCondition& condition, const data::TabularSchema& schema);

}  // namespace cfrl::cond
