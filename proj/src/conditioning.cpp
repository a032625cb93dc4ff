#include "cfrl/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cfrl/errors.hpp"

namespace cfrl::cond {
namespace {

using data::FeatureType;

constexpr double kBetaShape = 2.0;
constexpr double kMaskProbability = 0.5;

std::string kind_name(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::Free: return "free";
    case ConstraintKind::Immutable: return "immutable";
    case ConstraintKind::IncreaseOnly: return "increase_only";
    case ConstraintKind::DecreaseOnly: return "decrease_only";
    case ConstraintKind::Range: return "range";
    case ConstraintKind::Subset: return "subset";
  }
  return "?";
}

double range_of(const data::FeatureSpec& f) { return f.a_max - f.a_min; }

// Upper bounds on (p_min, p_max) implied by a numerical constraint.
NumericAllowance allowance_cap(const FeatureConstraint& c, const data::FeatureSpec& f) {
  switch (c.kind) {
    case ConstraintKind::Immutable: return {0.0, 0.0};
    case ConstraintKind::IncreaseOnly: return {0.0, 1.0};
    case ConstraintKind::DecreaseOnly: return {1.0, 0.0};
    case ConstraintKind::Range: {
      const double r = range_of(f);
      if (r <= 0.0) return {0.0, 0.0};
      return {std::min(1.0, -c.lo / r), std::min(1.0, c.hi / r)};
    }
    default: return {1.0, 1.0};
  }
}

std::vector<std::uint8_t> allowed_bits(const FeatureConstraint& c, std::size_t k, std::size_t original) {
  std::vector<std::uint8_t> bits(k, 0);
  if (c.kind == ConstraintKind::Immutable) {
    bits[original] = 1;
  } else if (c.kind == ConstraintKind::Subset) {
    for (auto a : c.allowed) bits[a] = 1;
    bits[original] = 1;
  } else {
    std::fill(bits.begin(), bits.end(), 1);
  }
  return bits;
}

}  // namespace

// ---------------------------------------------------------------- constraints

ConstraintSet ConstraintSet::all_free(const data::TabularSchema& schema) {
  return ConstraintSet(std::vector<FeatureConstraint>(schema.features().size()));
}

ConstraintSet ConstraintSet::all_immutable(const data::TabularSchema& schema) {
  std::vector<FeatureConstraint> v(schema.features().size());
  for (auto& c : v) c.kind = ConstraintKind::Immutable;
  return ConstraintSet(std::move(v));
}

ConstraintSet ConstraintSet::from_json(const nlohmann::json& doc, const data::TabularSchema& schema) {
  if (!doc.is_object()) throw ConfigError("constraints: expected an object keyed by feature name");
  std::vector<FeatureConstraint> v(schema.features().size());
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto fi = schema.feature_index(it.key());
    if (fi == static_cast<std::size_t>(-1)) throw ConfigError("constraints: unknown feature '" + it.key() + "'");
    const auto& f = schema.features()[fi];
    FeatureConstraint c;
    const auto& val = it.value();
    if (val.is_string()) {
      const auto s = val.get<std::string>();
      if (s == "free") c.kind = ConstraintKind::Free;
      else if (s == "immutable") c.kind = ConstraintKind::Immutable;
      else if (s == "increase_only") c.kind = ConstraintKind::IncreaseOnly;
      else if (s == "decrease_only") c.kind = ConstraintKind::DecreaseOnly;
      else throw ConfigError("constraints: unknown constraint '" + s + "' for '" + f.name + "'");
    } else if (val.is_object() && val.contains("range")) {
      c.kind = ConstraintKind::Range;
      const auto r = val["range"];
      if (!r.is_array() || r.size() != 2) throw ConfigError("constraints: range for '" + f.name + "' needs [lo, hi]");
      c.lo = r[0].get<double>();
      c.hi = r[1].get<double>();
      if (!(c.lo <= 0.0 && c.hi >= 0.0))
        throw ConfigError("constraints: range for '" + f.name + "' must satisfy lo <= 0 <= hi");
    } else if (val.is_object() && val.contains("subset")) {
      c.kind = ConstraintKind::Subset;
      if (f.type != FeatureType::Categorical) throw ConfigError("constraints: subset on numerical '" + f.name + "'");
      for (const auto& cat : val["subset"]) {
        const auto k = schema.category_index(f.kind_index, cat.get<std::string>());
        if (k == static_cast<std::size_t>(-1))
          throw ConfigError("constraints: unknown category '" + cat.get<std::string>() + "' for '" + f.name + "'");
        c.allowed.push_back(k);
      }
    } else {
      throw ConfigError("constraints: malformed entry for '" + f.name + "'");
    }
    if (f.type == FeatureType::Categorical &&
        (c.kind == ConstraintKind::IncreaseOnly || c.kind == ConstraintKind::DecreaseOnly ||
         c.kind == ConstraintKind::Range))
      throw ConfigError("constraints: '" + kind_name(c.kind) + "' is only valid for numerical '" + f.name + "'");
    v[fi] = std::move(c);
  }
  return ConstraintSet(std::move(v));
}

ConstraintSet ConstraintSet::load(const std::filesystem::path& path, const data::TabularSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open constraint file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("constraint file " + path.string() + ": " + e.what());
  }
  return from_json(doc, schema);
}

nlohmann::json ConstraintSet::to_json(const data::TabularSchema& schema) const {
  nlohmann::json doc = nlohmann::json::object();
  for (std::size_t i = 0; i < per_feature_.size(); ++i) {
    const auto& c = per_feature_[i];
    const auto& f = schema.features()[i];
    if (c.kind == ConstraintKind::Range) {
      doc[f.name] = {{"range", {c.lo, c.hi}}};
    } else if (c.kind == ConstraintKind::Subset) {
      std::vector<std::string> names;
      for (auto a : c.allowed) names.push_back(f.categories[a]);
      doc[f.name] = {{"subset", names}};
    } else {
      doc[f.name] = kind_name(c.kind);
    }
  }
  return doc;
}

// ---------------------------------------------------------------- conditions

FeatureCondition sample_condition(const data::TabularSchema& schema, const data::InstanceRecord& record,
                                  const ConstraintSet& constraints, Rng& rng) {
  if (constraints.size() != schema.features().size()) throw ConfigError("constraint set does not match schema");
  FeatureCondition out;
  out.numerical.resize(schema.numerical_count());
  out.masks.resize(schema.categorical_count());
  for (std::size_t fi = 0; fi < schema.features().size(); ++fi) {
    const auto& f = schema.features()[fi];
    const auto& c = constraints.at(fi);
    if (f.type == FeatureType::Numerical) {
      const auto cap = allowance_cap(c, f);
      NumericAllowance a;
      a.p_min = cap.p_min > 0.0 ? cap.p_min * rng.beta(kBetaShape, kBetaShape) : 0.0;
      a.p_max = cap.p_max > 0.0 ? cap.p_max * rng.beta(kBetaShape, kBetaShape) : 0.0;
      out.numerical[f.kind_index] = a;
    } else {
      const std::size_t original = record.categorical[f.kind_index];
      auto bits = allowed_bits(c, f.cardinality(), original);
      if (c.kind != ConstraintKind::Immutable) {
        for (std::size_t k = 0; k < bits.size(); ++k)
          if (bits[k]) bits[k] = rng.bernoulli(kMaskProbability) ? 1 : 0;
      }
      bits[original] = 1;
      out.masks[f.kind_index] = std::move(bits);
    }
  }
  return out;
}

FeatureCondition generation_condition(const data::TabularSchema& schema, const data::InstanceRecord& record,
                                      const ConstraintSet& constraints) {
  if (constraints.size() != schema.features().size()) throw ConfigError("constraint set does not match schema");
  FeatureCondition out;
  out.numerical.resize(schema.numerical_count());
  out.masks.resize(schema.categorical_count());
  for (std::size_t fi = 0; fi < schema.features().size(); ++fi) {
    const auto& f = schema.features()[fi];
    const auto& c = constraints.at(fi);
    if (f.type == FeatureType::Numerical)
      out.numerical[f.kind_index] = allowance_cap(c, f);
    else
      out.masks[f.kind_index] = allowed_bits(c, f.cardinality(), record.categorical[f.kind_index]);
  }
  return out;
}

RowVector encode_condition(const FeatureCondition& condition, const data::TabularSchema& schema) {
  if (condition.numerical.size() != schema.numerical_count() || condition.masks.size() != schema.categorical_count())
    throw DimensionError("condition does not match schema");
  RowVector c(static_cast<Eigen::Index>(schema.condition_width()));
  Eigen::Index pos = 0;
  for (const auto& a : condition.numerical) {
    c[pos++] = -a.p_min;
    c[pos++] = a.p_max;
  }
  for (std::size_t i = 0; i < condition.masks.size(); ++i) {
    if (condition.masks[i].size() != schema.categorical(i).cardinality())
      throw DimensionError("mask width differs from vocabulary of '" + schema.categorical(i).name + "'");
    for (auto b : condition.masks[i]) c[pos++] = b ? 1.0 : 0.0;
  }
  return c;
}

Matrix encode_conditions(std::span<const FeatureCondition> conditions, const data::TabularSchema& schema) {
  Matrix out(static_cast<Eigen::Index>(conditions.size()), static_cast<Eigen::Index>(schema.condition_width()));
  for (std::size_t i = 0; i < conditions.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encode_condition(conditions[i], schema);
  return out;
}

FeatureCondition decode_condition(const RowVector& encoded, const data::TabularSchema& schema) {
  if (static_cast<std::size_t>(encoded.size()) != schema.condition_width())
    throw DimensionError("condition vector width does not match schema");
  FeatureCondition out;
  out.numerical.resize(schema.numerical_count());
  out.masks.resize(schema.categorical_count());
  Eigen::Index pos = 0;
  for (auto& a : out.numerical) {
    a.p_min = -encoded[pos++];
    a.p_max = encoded[pos++];
  }
  for (std::size_t i = 0; i < out.masks.size(); ++i) {
    out.masks[i].resize(schema.categorical(i).cardinality());
    for (auto& b : out.masks[i]) b = encoded[pos++] != 0.0 ? 1 : 0;
  }
  return out;
}

Interval numeric_interval(const data::TabularSchema& schema, const data::InstanceRecord& record,
                          const FeatureCondition& condition, std::size_t d) {
  const auto& f = schema.numerical(d);
  const double a = record.numerical[d];
  const double r = range_of(f);
  return {a - condition.numerical[d].p_min * r, a + condition.numerical[d].p_max * r};
}

std::size_t sample_target(std::size_t /*y_m*/, std::size_t class_count, Rng& rng) {
  if (class_count < 2) throw ConfigError("target sampling needs at least two classes");
  return rng.index(class_count);
}

std::size_t sample_other_target(std::size_t y_m, std::size_t class_count, Rng& rng) {
  if (class_count < 2) throw ConfigError("target sampling needs at least two classes");
  const std::size_t k = rng.index(class_count - 1);
  return k >= y_m ? k + 1 : k;
}

RowVector one_hot(std::size_t index, std::size_t size) {
  if (index >= size) throw DimensionError("one-hot index out of range");
  RowVector v = RowVector::Zero(static_cast<Eigen::Index>(size));
  v[static_cast<Eigen::Index>(index)] = 1.0;
  return v;
}

// ---------------------------------------------------------------- post-processing

data::InstanceRecord postprocess(const RowVector& decoded, const data::InstanceRecord& original,
                                 const FeatureCondition& condition, const data::TabularSchema& schema) {
  if (static_cast<std::size_t>(decoded.size()) != schema.encoded_width())
    throw DimensionError("decoded row width does not match schema");
  data::InstanceRecord out;
  out.numerical.resize(schema.numerical_count());
  out.categorical.resize(schema.categorical_count());
  for (std::size_t d = 0; d < schema.numerical_count(); ++d) {
    const auto& f = schema.numerical(d);
    const Interval iv = numeric_interval(schema, original, condition, d);
    double v = std::clamp(decoded[static_cast<Eigen::Index>(d)] * f.std + f.mean, iv.lo, iv.hi);
    if (f.integer) {
      v = std::round(v);
      if (v > iv.hi) v = std::floor(iv.hi);
      if (v < iv.lo) v = std::ceil(iv.lo);
    }
    out.numerical[d] = v;
  }
  for (std::size_t c = 0; c < schema.categorical_count(); ++c) {
    const auto off = static_cast<Eigen::Index>(schema.category_offset(c));
    const auto& mask = condition.masks[c];
    std::size_t best = original.categorical[c];
    double best_p = -1.0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
      if (!mask[k]) continue;
      const double p = decoded[off + static_cast<Eigen::Index>(k)];
      if (p > best_p) {
        best_p = p;
        best = k;
      }
    }
    out.categorical[c] = best;
  }
  return out;
}

std::vector<data::InstanceRecord> postprocess_batch(const Matrix& decoded, std::span<const data::InstanceRecord> originals,
                                                    std::span<const FeatureCondition> conditions,
                                                    const data::TabularSchema& schema) {
  if (static_cast<std::size_t>(decoded.rows()) != originals.size() || originals.size() != conditions.size())
    throw DimensionError("postprocess batch sizes differ");
  std::vector<data::InstanceRecord> out;
  out.reserve(originals.size());
  for (std::size_t i = 0; i < originals.size(); ++i)
    out.push_back(postprocess(decoded.row(static_cast<Eigen::Index>(i)), originals[i], conditions[i], schema));
  return out;
}

bool satisfies(const data::InstanceRecord& candidate, const data::InstanceRecord& original,
               const FeatureCondition& condition, const data::TabularSchema& schema) {
  for (std::size_t d = 0; d < schema.numerical_count(); ++d) {
    const Interval iv = numeric_interval(schema, original, condition, d);
    const double v = candidate.numerical[d];
    if (!(v >= iv.lo && v <= iv.hi)) return false;
  }
  for (std::size_t c = 0; c < schema.categorical_count(); ++c) {
    const auto k = candidate.categorical[c];
    if (k >= condition.masks[c].size() || !condition.masks[c][k]) return false;
  }
  return true;
}

}  // namespace cfrl::cond
