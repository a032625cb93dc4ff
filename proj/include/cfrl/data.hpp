#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrl/nn.hpp"
#include "cfrl/rng.hpp"
#include "cfrl/tensor.hpp"

namespace cfrl::data {

enum class FeatureType { Numerical, Categorical };

struct FeatureSpec {
  std::string name;
  FeatureType type = FeatureType::Numerical;
  bool integer = false;                  // numerical only: post-processing rounds to integers
  std::vector<std::string> categories;   // categorical only
  std::size_t kind_index = 0;            // position among features of the same type

  // Fitted on the training split (numerical only).
  double a_min = 0.0;
  double a_max = 0.0;
  double mean = 0.0;
  double std = 1.0;

  std::size_t cardinality() const { return categories.size(); }
};

// Ordered feature metadata shared by every module. Encoded layout: standardized
// numericals (in schema order) followed by the one-hot blocks of the categoricals.
class TabularSchema {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  TabularSchema() = default;

  static TabularSchema from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  const std::vector<FeatureSpec>& features() const { return features_; }
  const FeatureSpec& numerical(std::size_t i) const { return features_[numerical_ids_[i]]; }
  const FeatureSpec& categorical(std::size_t i) const { return features_[categorical_ids_[i]]; }
  FeatureSpec& numerical_mut(std::size_t i) { return features_[numerical_ids_[i]]; }

  std::size_t numerical_count() const { return numerical_ids_.size(); }
  std::size_t categorical_count() const { return categorical_ids_.size(); }
  std::size_t class_count() const { return class_count_; }
  const std::string& label_column() const { return label_column_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  // Width of an encoded instance: #numerical + sum of cardinalities.
  std::size_t encoded_width() const { return encoded_width_; }
  // Width of a condition vector: 2 * #numerical + sum of cardinalities.
  std::size_t condition_width() const { return 2 * numerical_count() + total_categories_; }
  // Column where categorical block i starts in the encoded layout.
  std::size_t category_offset(std::size_t i) const { return category_offsets_[i]; }
  std::vector<nn::IndexRange> categorical_blocks() const;

  std::size_t class_index(const std::string& label) const;  // throws DataError
  std::size_t category_index(std::size_t cat, const std::string& value) const;  // npos when absent
  std::size_t feature_index(const std::string& name) const;  // npos when absent

  bool fitted() const { return fitted_; }
  void mark_fitted() { fitted_ = true; }

  // Hash of the canonical serialized schema (definition and fitted statistics).
  std::uint64_t fingerprint() const;

  friend bool operator==(const TabularSchema& a, const TabularSchema& b) { return a.to_json() == b.to_json(); }

 private:
  void index();

  std::vector<FeatureSpec> features_;
  std::vector<std::size_t> numerical_ids_;
  std::vector<std::size_t> categorical_ids_;
  std::vector<std::size_t> category_offsets_;
  std::size_t encoded_width_ = 0;
  std::size_t total_categories_ = 0;
  std::size_t class_count_ = 0;
  std::string label_column_ = "label";
  std::vector<std::string> class_names_;
  bool fitted_ = false;
};

// One row in original feature space.
struct InstanceRecord {
  std::vector<double> numerical;
  std::vector<std::size_t> categorical;
  friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct Dataset {
  TabularSchema schema;
  std::vector<InstanceRecord> records;
  std::vector<std::size_t> labels;
  DatasetSplit split;

  std::vector<InstanceRecord> select(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> select_labels(std::span<const std::size_t> rows) const;
};

TabularSchema load_schema(const std::filesystem::path& path);

struct Table {
  std::vector<InstanceRecord> records;
  std::vector<std::size_t> labels;
};

// Parse a CSV against a schema. The label column is optional only when allow_missing_label is set.
Table read_csv(const std::filesystem::path& path, const TabularSchema& schema, bool allow_missing_label = false);
Table parse_csv(std::istream& in, const TabularSchema& schema, bool allow_missing_label = false);

DatasetSplit make_split(std::size_t rows, double train_fraction, std::uint64_t seed);

// Fills a_min/a_max/mean/std of every numerical feature from the given rows.
void fit_statistics(TabularSchema& schema, std::span<const InstanceRecord> records, std::span<const std::size_t> rows);

Dataset load_csv(const std::filesystem::path& csv, const std::filesystem::path& schema_path,
                 double train_fraction = 0.8, std::uint64_t split_seed = 0);

void validate_record(const InstanceRecord& record, const TabularSchema& schema);

RowVector encode(const InstanceRecord& record, const TabularSchema& schema);
Matrix encode_batch(std::span<const InstanceRecord> records, const TabularSchema& schema);
// Inverse of encode; integer-typed numericals are rounded. Throws DataError if a
// one-hot block has no unique maximum.
InstanceRecord decode_exact(const RowVector& encoded, const TabularSchema& schema);

std::string format_value(const InstanceRecord& record, const TabularSchema& schema, std::size_t feature);
void write_csv_header(std::ostream& out, const TabularSchema& schema, const std::string& suffix = "");
void write_csv_row(std::ostream& out, const InstanceRecord& record, const TabularSchema& schema);

// Class-balanced sampling: row i is drawn with weight 1 / count(label(i)).
class BalancedSampler {
 public:
  BalancedSampler(std::span<const std::size_t> labels, std::size_t class_count);
  std::vector<std::size_t> sample(std::size_t batch_size, Rng& rng) const;

 private:
  std::vector<double> cumulative_;
};

std::vector<std::size_t> balanced_batch(std::span<const std::size_t> labels, std::size_t class_count,
                                        std::size_t batch_size, Rng& rng);

}  // namespace cfrl::data
