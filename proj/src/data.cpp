#include "cfrl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "cfrl/errors.hpp"
#include "cfrl/hash.hpp"

namespace cfrl::data {
namespace {

constexpr std::size_t npos = TabularSchema::npos;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

// Splits one CSV line; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      out.push_back(was_quoted ? cur : trim(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(was_quoted ? cur : trim(cur));
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

}  // namespace

// ---------------------------------------------------------------- schema

TabularSchema TabularSchema::from_json(const nlohmann::json& doc) {
  TabularSchema s;
  if (!doc.is_object() || !doc.contains("features") || !doc["features"].is_array())
    throw DataError("schema: expected an object with a 'features' array");
  std::set<std::string> names;
  for (const auto& f : doc["features"]) {
    FeatureSpec spec;
    spec.name = f.at("name").get<std::string>();
    if (!names.insert(spec.name).second) throw DataError("schema: duplicate feature '" + spec.name + "'");
    const auto type = f.at("type").get<std::string>();
    if (type == "numerical") {
      spec.type = FeatureType::Numerical;
      spec.integer = f.value("integer", false);
      if (f.contains("a_min")) {
        spec.a_min = f.at("a_min").get<double>();
        spec.a_max = f.at("a_max").get<double>();
        spec.mean = f.at("mean").get<double>();
        spec.std = f.at("std").get<double>();
        if (spec.a_min > spec.a_max) throw DataError("schema: a_min > a_max for '" + spec.name + "'");
        if (!(spec.std > 0.0)) throw DataError("schema: std must be positive for '" + spec.name + "'");
      }
    } else if (type == "categorical") {
      spec.type = FeatureType::Categorical;
      spec.categories = f.at("categories").get<std::vector<std::string>>();
      if (spec.categories.empty()) throw DataError("schema: empty vocabulary for '" + spec.name + "'");
      std::set<std::string> uniq(spec.categories.begin(), spec.categories.end());
      if (uniq.size() != spec.categories.size())
        throw DataError("schema: duplicate category in '" + spec.name + "'");
    } else {
      throw DataError("schema: unknown type '" + type + "' for '" + spec.name + "'");
    }
    s.features_.push_back(std::move(spec));
  }
  if (s.features_.empty()) throw DataError("schema: no features");
  s.class_count_ = doc.at("target_classes").get<std::size_t>();
  if (s.class_count_ < 2) throw DataError("schema: target_classes must be at least 2");
  s.label_column_ = doc.value("label_column", std::string("label"));
  if (names.count(s.label_column_)) throw DataError("schema: label column collides with a feature name");
  if (doc.contains("class_names")) {
    s.class_names_ = doc["class_names"].get<std::vector<std::string>>();
    if (s.class_names_.size() != s.class_count_) throw DataError("schema: class_names size differs from target_classes");
  }
  s.fitted_ = doc.value("fitted", false);
  s.index();
  return s;
}

nlohmann::json TabularSchema::to_json() const {
  nlohmann::json doc;
  auto& feats = doc["features"] = nlohmann::json::array();
  for (const auto& f : features_) {
    nlohmann::json j;
    j["name"] = f.name;
    if (f.type == FeatureType::Numerical) {
      j["type"] = "numerical";
      if (f.integer) j["integer"] = true;
      if (fitted_) {
        j["a_min"] = f.a_min;
        j["a_max"] = f.a_max;
        j["mean"] = f.mean;
        j["std"] = f.std;
      }
    } else {
      j["type"] = "categorical";
      j["categories"] = f.categories;
    }
    feats.push_back(std::move(j));
  }
  doc["target_classes"] = class_count_;
  doc["label_column"] = label_column_;
  if (!class_names_.empty()) doc["class_names"] = class_names_;
  if (fitted_) doc["fitted"] = true;
  return doc;
}

void TabularSchema::index() {
  numerical_ids_.clear();
  categorical_ids_.clear();
  for (std::size_t i = 0; i < features_.size(); ++i) {
    auto& f = features_[i];
    if (f.type == FeatureType::Numerical) {
      f.kind_index = numerical_ids_.size();
      numerical_ids_.push_back(i);
    } else {
      f.kind_index = categorical_ids_.size();
      categorical_ids_.push_back(i);
    }
  }
  category_offsets_.clear();
  std::size_t offset = numerical_ids_.size();
  total_categories_ = 0;
  for (auto id : categorical_ids_) {
    category_offsets_.push_back(offset);
    offset += features_[id].cardinality();
    total_categories_ += features_[id].cardinality();
  }
  encoded_width_ = offset;
}

std::vector<nn::IndexRange> TabularSchema::categorical_blocks() const {
  std::vector<nn::IndexRange> out;
  for (std::size_t i = 0; i < categorical_count(); ++i)
    out.push_back({category_offsets_[i], category_offsets_[i] + categorical(i).cardinality()});
  return out;
}

std::size_t TabularSchema::class_index(const std::string& label) const {
  for (std::size_t k = 0; k < class_names_.size(); ++k)
    if (class_names_[k] == label) return k;
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(label.data(), label.data() + label.size(), v);
  if (ec == std::errc() && ptr == label.data() + label.size() && v < class_count_) return v;
  throw DataError("unknown class label '" + label + "'");
}

std::size_t TabularSchema::category_index(std::size_t cat, const std::string& value) const {
  const auto& cats = categorical(cat).categories;
  auto it = std::find(cats.begin(), cats.end(), value);
  return it == cats.end() ? npos : static_cast<std::size_t>(it - cats.begin());
}

std::size_t TabularSchema::feature_index(const std::string& name) const {
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (features_[i].name == name) return i;
  return npos;
}

std::uint64_t TabularSchema::fingerprint() const { return fnv1a64(to_json().dump()); }

TabularSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("schema file " + path.string() + ": " + e.what());
  }
  try {
    return TabularSchema::from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("schema file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- csv

Table parse_csv(std::istream& in, const TabularSchema& schema, bool allow_missing_label) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  const auto& feats = schema.features();
  std::vector<std::size_t> column_of(feats.size(), npos);
  std::size_t label_col = npos;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_column()) {
      label_col = c;
      continue;
    }
    const auto f = schema.feature_index(header[c]);
    if (f == npos) throw DataError("CSV column '" + header[c] + "' is not in the schema");
    column_of[f] = c;
  }
  for (std::size_t f = 0; f < feats.size(); ++f)
    if (column_of[f] == npos) throw DataError("CSV is missing feature column '" + feats[f].name + "'");
  if (label_col == npos && !allow_missing_label)
    throw DataError("CSV is missing label column '" + schema.label_column() + "'");

  Table table;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    InstanceRecord rec;
    rec.numerical.resize(schema.numerical_count());
    rec.categorical.resize(schema.categorical_count());
    for (std::size_t f = 0; f < feats.size(); ++f) {
      const auto& cell = cells[column_of[f]];
      const auto& spec = feats[f];
      if (cell.empty())
        throw DataError("row " + std::to_string(row) + ", column \"" + spec.name + "\": missing value");
      if (spec.type == FeatureType::Numerical) {
        double v = 0.0;
        if (!parse_double(cell, v))
          throw DataError("row " + std::to_string(row) + ", column \"" + spec.name + "\": non-numeric value '" + cell +
                          "'");
        rec.numerical[spec.kind_index] = v;
      } else {
        const auto k = schema.category_index(spec.kind_index, cell);
        if (k == npos)
          throw DataError("row " + std::to_string(row) + ", column \"" + spec.name + "\": unknown category '" + cell +
                          "'");
        rec.categorical[spec.kind_index] = k;
      }
    }
    if (label_col != npos) {
      try {
        table.labels.push_back(schema.class_index(cells[label_col]));
      } catch (const DataError& e) {
        throw DataError("row " + std::to_string(row) + ", column \"" + schema.label_column() + "\": " + e.what());
      }
    }
    table.records.push_back(std::move(rec));
  }
  return table;
}

Table read_csv(const std::filesystem::path& path, const TabularSchema& schema, bool allow_missing_label) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path.string());
  return parse_csv(in, schema, allow_missing_label);
}

DatasetSplit make_split(std::size_t rows, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  DatasetSplit split;
  split.train_fraction = train_fraction;
  split.seed = seed;
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows)));
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void fit_statistics(TabularSchema& schema, std::span<const InstanceRecord> records, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DataError("cannot fit statistics on an empty split");
  for (std::size_t d = 0; d < schema.numerical_count(); ++d) {
    auto& f = schema.numerical_mut(d);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    double sum = 0.0;
    for (auto r : rows) {
      const double v = records[r].numerical[d];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
    }
    const double mean = sum / static_cast<double>(rows.size());
    double ss = 0.0;
    for (auto r : rows) ss += (records[r].numerical[d] - mean) * (records[r].numerical[d] - mean);
    const double std = std::sqrt(ss / static_cast<double>(rows.size()));
    if (!(std > 0.0)) throw DataError("numerical feature '" + f.name + "' is constant on the training split");
    f.a_min = lo;
    f.a_max = hi;
    f.mean = mean;
    f.std = std;
  }
  schema.mark_fitted();
}

Dataset load_csv(const std::filesystem::path& csv, const std::filesystem::path& schema_path, double train_fraction,
                 std::uint64_t split_seed) {
  Dataset ds;
  ds.schema = load_schema(schema_path);
  auto table = read_csv(csv, ds.schema);
  ds.records = std::move(table.records);
  ds.labels = std::move(table.labels);
  ds.split = make_split(ds.records.size(), train_fraction, split_seed);
  fit_statistics(ds.schema, ds.records, ds.split.train);
  return ds;
}

std::vector<InstanceRecord> Dataset::select(std::span<const std::size_t> rows) const {
  std::vector<InstanceRecord> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(records.at(r));
  return out;
}

std::vector<std::size_t> Dataset::select_labels(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels.at(r));
  return out;
}

// ---------------------------------------------------------------- encoding

void validate_record(const InstanceRecord& record, const TabularSchema& schema) {
  if (record.numerical.size() != schema.numerical_count() || record.categorical.size() != schema.categorical_count())
    throw DimensionError("record does not match schema feature counts");
  for (std::size_t d = 0; d < record.numerical.size(); ++d)
    if (!std::isfinite(record.numerical[d]))
      throw DataError("record has a non-finite value in '" + schema.numerical(d).name + "'");
  for (std::size_t c = 0; c < record.categorical.size(); ++c)
    if (record.categorical[c] >= schema.categorical(c).cardinality())
      throw DataError("record has an out-of-range category in '" + schema.categorical(c).name + "'");
}

RowVector encode(const InstanceRecord& record, const TabularSchema& schema) {
  validate_record(record, schema);
  RowVector out = RowVector::Zero(static_cast<Eigen::Index>(schema.encoded_width()));
  for (std::size_t d = 0; d < schema.numerical_count(); ++d) {
    const auto& f = schema.numerical(d);
    out[static_cast<Eigen::Index>(d)] = (record.numerical[d] - f.mean) / f.std;
  }
  for (std::size_t c = 0; c < schema.categorical_count(); ++c)
    out[static_cast<Eigen::Index>(schema.category_offset(c) + record.categorical[c])] = 1.0;
  return out;
}

Matrix encode_batch(std::span<const InstanceRecord> records, const TabularSchema& schema) {
  Matrix out(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(schema.encoded_width()));
  for (std::size_t i = 0; i < records.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode(records[i], schema);
  return out;
}

InstanceRecord decode_exact(const RowVector& encoded, const TabularSchema& schema) {
  if (static_cast<std::size_t>(encoded.size()) != schema.encoded_width())
    throw DimensionError("encoded instance has width " + std::to_string(encoded.size()) + ", schema expects " +
                         std::to_string(schema.encoded_width()));
  InstanceRecord rec;
  rec.numerical.resize(schema.numerical_count());
  rec.categorical.resize(schema.categorical_count());
  for (std::size_t d = 0; d < schema.numerical_count(); ++d) {
    const auto& f = schema.numerical(d);
    double v = encoded[static_cast<Eigen::Index>(d)] * f.std + f.mean;
    if (f.integer) v = std::round(v);
    rec.numerical[d] = v;
  }
  for (std::size_t c = 0; c < schema.categorical_count(); ++c) {
    const auto off = static_cast<Eigen::Index>(schema.category_offset(c));
    const auto k = static_cast<Eigen::Index>(schema.categorical(c).cardinality());
    Eigen::Index best = 0;
    const double mx = encoded.segment(off, k).maxCoeff(&best);
    for (Eigen::Index j = 0; j < k; ++j)
      if (j != best && encoded[off + j] == mx)
        throw DataError("one-hot block for '" + schema.categorical(c).name + "' has no unique maximum");
    rec.categorical[c] = static_cast<std::size_t>(best);
  }
  return rec;
}

std::string format_value(const InstanceRecord& record, const TabularSchema& schema, std::size_t feature) {
  const auto& f = schema.features()[feature];
  if (f.type == FeatureType::Categorical) return f.categories[record.categorical[f.kind_index]];
  const double v = record.numerical[f.kind_index];
  if (f.integer) {
    std::ostringstream os;
    os << static_cast<long long>(std::llround(v));
    return os.str();
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_csv_header(std::ostream& out, const TabularSchema& schema, const std::string& suffix) {
  const auto& feats = schema.features();
  for (std::size_t f = 0; f < feats.size(); ++f) out << (f ? "," : "") << quote_if_needed(feats[f].name + suffix);
}

void write_csv_row(std::ostream& out, const InstanceRecord& record, const TabularSchema& schema) {
  for (std::size_t f = 0; f < schema.features().size(); ++f)
    out << (f ? "," : "") << quote_if_needed(format_value(record, schema, f));
}

// ---------------------------------------------------------------- sampling

BalancedSampler::BalancedSampler(std::span<const std::size_t> labels, std::size_t class_count) {
  std::vector<std::size_t> counts(class_count, 0);
  for (auto y : labels) {
    if (y >= class_count) throw ConfigError("label " + std::to_string(y) + " exceeds class count");
    ++counts[y];
  }
  for (std::size_t k = 0; k < class_count; ++k)
    if (counts[k] == 0) throw ConfigError("class " + std::to_string(k) + " has no examples; cannot balance");
  cumulative_.reserve(labels.size());
  double acc = 0.0;
  for (auto y : labels) {
    acc += 1.0 / static_cast<double>(counts[y]);
    cumulative_.push_back(acc);
  }
}

std::vector<std::size_t> BalancedSampler::sample(std::size_t batch_size, Rng& rng) const {
  std::vector<std::size_t> out(batch_size);
  const double total = cumulative_.back();
  for (auto& idx : out) {
    const double u = rng.uniform(0.0, total);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    idx = static_cast<std::size_t>(it - cumulative_.begin());
  }
  return out;
}

std::vector<std::size_t> balanced_batch(std::span<const std::size_t> labels, std::size_t class_count,
                                        std::size_t batch_size, Rng& rng) {
  return BalancedSampler(labels, class_count).sample(batch_size, rng);
}

}  // namespace cfrl::data
