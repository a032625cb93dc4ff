#include "cfrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "cfrl/errors.hpp"

namespace cfrl::metrics {

double validity(std::span<const gen::CounterfactualResult> results) {
  if (results.empty()) throw UsageError("validity of an empty result set");
  std::size_t hits = 0;
  for (const auto& r : results) hits += r.valid;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double sparsity_l0(const data::InstanceRecord& x, const data::InstanceRecord& cf, const data::TabularSchema& schema) {
  const std::size_t n = schema.categorical_count();
  if (n == 0) throw DataError("L0 sparsity is undefined without categorical features");
  std::size_t changed = 0;
  for (std::size_t i = 0; i < n; ++i) changed += x.categorical[i] != cf.categorical[i];
  return static_cast<double>(changed) / static_cast<double>(n);
}

double sparsity_l1(const data::InstanceRecord& x, const data::InstanceRecord& cf, const data::TabularSchema& schema) {
  const std::size_t n = schema.numerical_count();
  if (n == 0) throw DataError("L1 sparsity is undefined without numerical features");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::abs(x.numerical[i] - cf.numerical[i]) / schema.numerical(i).std;
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------- MMD

MmdReducer::MmdReducer(std::size_t input_dim, const MmdConfig& config) {
  if (config.reduction_dims.empty()) throw ConfigError("MMD reduction needs at least one layer");
  std::vector<nn::LayerSpec> layers;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < config.reduction_dims.size(); ++i) {
    layers.push_back(nn::LayerSpec::dense(in, config.reduction_dims[i]));
    in = config.reduction_dims[i];
    if (i + 1 < config.reduction_dims.size()) layers.push_back(nn::LayerSpec::relu(in));
  }
  Rng rng(config.seed);
  net_ = nn::Network(std::move(layers), rng);
}

double median_bandwidth(const Matrix& a, const Matrix& b) {
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) d.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double median = *mid;
  if (d.size() % 2 == 0) median = 0.5 * (median + *std::max_element(d.begin(), mid));
  return median > 0.0 ? median : 1.0;
}

double rbf_kernel(const RowVector& u, const RowVector& v, double sigma) {
  return std::exp(-(u - v).squaredNorm() / (2.0 * sigma * sigma));
}

namespace {

double mean_kernel(const Matrix& a, const Matrix& b, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  // Squared distances via norms; ordering of the sum is fixed.
  const ColVector na = a.rowwise().squaredNorm();
  const ColVector nb = b.rowwise().squaredNorm();
  Matrix d2 = -2.0 * a * b.transpose();
  d2.colwise() += na;
  d2.rowwise() += nb.transpose();
  return (-(d2.array().max(0.0)) * inv).exp().sum() / static_cast<double>(a.rows() * b.rows());
}

}  // namespace

double mmd_squared(const Matrix& a, const Matrix& b, double sigma) {
  if (a.rows() == 0) throw UsageError("MMD: the counterfactual set is empty");
  if (b.rows() == 0) throw UsageError("MMD: the reference set is empty");
  if (a.cols() != b.cols()) throw DimensionError("MMD: sets have different widths");
  if (!(sigma > 0.0)) throw ConfigError("MMD bandwidth must be positive");
  const double kaa = mean_kernel(a, a, sigma);
  const double kbb = mean_kernel(b, b, sigma);
  const double kab = mean_kernel(a, b, sigma);
  return kaa + kbb - 2.0 * kab;
}

double conditional_mmd(const Matrix& counterfactuals, const Matrix& reference, const MmdReducer& reducer) {
  if (counterfactuals.rows() == 0) throw UsageError("MMD: the counterfactual set is empty");
  if (reference.rows() == 0) throw UsageError("MMD: the reference set is empty");
  const Matrix a = reducer.reduce(counterfactuals);
  const Matrix b = reducer.reduce(reference);
  return mmd_squared(a, b, median_bandwidth(a, b));
}

// ---------------------------------------------------------------- MO baseline

double mo_distance(const data::InstanceRecord& a, const data::InstanceRecord& b, const data::TabularSchema& schema) {
  double d = 0.0;
  if (schema.numerical_count() > 0) d += sparsity_l1(a, b, schema);
  if (schema.categorical_count() > 0) d += sparsity_l0(a, b, schema);
  return d;
}

std::optional<std::size_t> mo_baseline(const data::InstanceRecord& x, std::size_t target,
                                       const cond::FeatureCondition& condition,
                                       std::span<const data::InstanceRecord> training,
                                       std::span<const std::size_t> training_predictions,
                                       const data::TabularSchema& schema) {
  if (training.size() != training_predictions.size())
    throw DimensionError("training rows and predictions differ in length");
  std::optional<std::size_t> best;
  double best_d = 0.0;
  for (std::size_t i = 0; i < training.size(); ++i) {
    if (training_predictions[i] != target) continue;
    if (!cond::satisfies(training[i], x, condition, schema)) continue;
    const double d = mo_distance(x, training[i], schema);
    if (!best || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

std::vector<gen::CounterfactualResult> generate_mo(const gen::CounterfactualRequest& request,
                                                   std::span<const data::InstanceRecord> training,
                                                   std::span<const std::size_t> training_predictions,
                                                   const data::TabularSchema& schema,
                                                   const blackbox::BlackBoxModel& model, std::uint64_t seed) {
  if (request.instances.empty()) return {};
  if (request.constraints.size() != schema.features().size())
    throw ConfigError("constraint set does not match the schema");
  const Matrix x = data::encode_batch(request.instances, schema);
  const auto labels = model.predict_labels(x);
  const auto targets = gen::resolve_targets(request.targets, labels, schema.class_count(), seed);

  std::vector<gen::CounterfactualResult> out(request.instances.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& r = out[i];
    r.instance = i;
    r.original = request.instances[i];
    r.original_label = labels[i];
    r.target = targets[i];
    r.condition = cond::generation_condition(schema, r.original, request.constraints);
    const auto hit = mo_baseline(r.original, r.target, r.condition, training, training_predictions, schema);
    r.found = hit.has_value();
    if (hit) {
      r.counterfactual = training[*hit];
      r.predicted = training_predictions[*hit];
    } else {
      r.counterfactual = r.original;
      r.predicted = labels[i];
    }
    r.valid = r.found && r.predicted == r.target;
  }
  return out;
}

// ---------------------------------------------------------------- reports

namespace {

std::optional<double> mean_of(std::span<const gen::CounterfactualResult> results, bool valid_only,
                              double (*metric)(const data::InstanceRecord&, const data::InstanceRecord&,
                                               const data::TabularSchema&),
                              const data::TabularSchema& schema) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (valid_only && !r.valid) continue;
    sum += metric(r.original, r.counterfactual, schema);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::map<std::size_t, double> mmd_by_class(std::span<const gen::CounterfactualResult> results, bool valid_only,
                                           std::span<const data::InstanceRecord> training,
                                           std::span<const std::size_t> training_predictions,
                                           const data::TabularSchema& schema, const MmdReducer& reducer) {
  std::map<std::size_t, double> out;
  for (std::size_t t = 0; t < schema.class_count(); ++t) {
    std::vector<data::InstanceRecord> cfs, refs;
    for (const auto& r : results)
      if (r.target == t && (!valid_only || r.valid)) cfs.push_back(r.counterfactual);
    for (std::size_t i = 0; i < training.size(); ++i)
      if (training_predictions[i] == t) refs.push_back(training[i]);
    if (cfs.empty() || refs.empty()) continue;
    out[t] = conditional_mmd(data::encode_batch(cfs, schema), data::encode_batch(refs, schema), reducer);
  }
  return out;
}

std::optional<double> mean_value(const std::map<std::size_t, double>& m) {
  if (m.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& [k, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

EvaluationReport evaluate(std::span<const gen::CounterfactualResult> results,
                          std::span<const data::InstanceRecord> training,
                          std::span<const std::size_t> training_predictions, const data::TabularSchema& schema,
                          const MmdConfig& config) {
  if (training.size() != training_predictions.size())
    throw DimensionError("training rows and predictions differ in length");
  EvaluationReport rep;
  rep.total = results.size();
  rep.validity = validity(results);
  for (const auto& r : results) {
    rep.valid += r.valid;
    rep.found += r.found;
  }
  if (schema.categorical_count() > 0) {
    rep.l0.valid_only = mean_of(results, true, &sparsity_l0, schema);
    rep.l0.all = mean_of(results, false, &sparsity_l0, schema);
  }
  if (schema.numerical_count() > 0) {
    rep.l1.valid_only = mean_of(results, true, &sparsity_l1, schema);
    rep.l1.all = mean_of(results, false, &sparsity_l1, schema);
  }
  const MmdReducer reducer(schema.encoded_width(), config);
  rep.mmd_valid = mmd_by_class(results, true, training, training_predictions, schema, reducer);
  rep.mmd_all = mmd_by_class(results, false, training, training_predictions, schema, reducer);
  rep.mean_mmd_valid = mean_value(rep.mmd_valid);
  rep.mean_mmd_all = mean_value(rep.mmd_all);
  return rep;
}

nlohmann::json EvaluationReport::to_json(const data::TabularSchema& schema) const {
  auto per_class = [&](const std::map<std::size_t, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m)
      j[k < schema.class_names().size() ? schema.class_names()[k] : std::to_string(k)] = v;
    return j;
  };
  return {{"total", total},
          {"valid", valid},
          {"found", found},
          {"validity", validity},
          {"l0", {{"valid_only", opt_json(l0.valid_only)}, {"all", opt_json(l0.all)}}},
          {"l1", {{"valid_only", opt_json(l1.valid_only)}, {"all", opt_json(l1.all)}}},
          {"mmd",
           {{"valid_only", {{"per_class", per_class(mmd_valid)}, {"mean", opt_json(mean_mmd_valid)}}},
            {"all", {{"per_class", per_class(mmd_all)}, {"mean", opt_json(mean_mmd_all)}}}}}};
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string format_table(const std::vector<std::pair<std::string, std::vector<EvaluationReport>>>& rows) {
  auto cell = [](std::vector<double> v, double scale, int precision) -> std::string {
    if (v.empty()) return "-";
    for (auto& x : v) x *= scale;
    const Summary s = summarize(v);
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << s.mean << "±" << s.std;
    return os.str();
  };
  auto collect = [](const std::vector<EvaluationReport>& reps, auto pick) {
    std::vector<double> out;
    for (const auto& r : reps)
      if (auto v = pick(r)) out.push_back(*v);
    return out;
  };

  const std::vector<std::string> header{"method", "validity(%)", "L0", "L1", "MMD^2", "runs"};
  std::vector<std::vector<std::string>> table{header};
  for (const auto& [name, reps] : rows) {
    table.push_back({name,
                     cell(collect(reps, [](const EvaluationReport& r) { return std::optional<double>(r.validity); }),
                          100.0, 2),
                     cell(collect(reps, [](const EvaluationReport& r) { return r.l0.valid_only; }), 1.0, 4),
                     cell(collect(reps, [](const EvaluationReport& r) { return r.l1.valid_only; }), 1.0, 4),
                     cell(collect(reps, [](const EvaluationReport& r) { return r.mean_mmd_valid; }), 1.0, 4),
                     std::to_string(reps.size())});
  }
  // "±" is two bytes but one column wide.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], width(row[c]));
  std::ostringstream os;
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c) {
      const auto pad = widths[c] - width(table[r][c]);
      if (c == 0)
        os << table[r][c] << std::string(pad, ' ');
      else
        os << "  " << std::string(pad, ' ') << table[r][c];
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = widths[0];
      for (std::size_t c = 1; c < widths.size(); ++c) total += widths[c] + 2;
      os << std::string(total, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace cfrl::metrics
