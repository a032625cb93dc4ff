#include "cfrl/generator.hpp"

#include <ostream>

#include "cfrl/errors.hpp"
#include "cfrl/hash.hpp"

namespace cfrl::gen {
namespace {

std::string class_name(const data::TabularSchema& schema, std::size_t k) {
  return k < schema.class_names().size() ? schema.class_names()[k] : std::to_string(k);
}

nlohmann::json record_to_json(const data::InstanceRecord& rec, const data::TabularSchema& schema) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& f : schema.features()) {
    if (f.type == data::FeatureType::Categorical)
      out[f.name] = f.categories[rec.categorical[f.kind_index]];
    else
      out[f.name] = rec.numerical[f.kind_index];
  }
  return out;
}

data::InstanceRecord record_from_json(const nlohmann::json& doc, const data::TabularSchema& schema) {
  data::InstanceRecord rec;
  rec.numerical.resize(schema.numerical_count());
  rec.categorical.resize(schema.categorical_count());
  for (const auto& f : schema.features()) {
    if (!doc.contains(f.name)) throw DataError("result record is missing feature \"" + f.name + "\"");
    const auto& v = doc.at(f.name);
    if (f.type == data::FeatureType::Categorical) {
      const auto idx = schema.category_index(f.kind_index, v.get<std::string>());
      if (idx == data::TabularSchema::npos)
        throw DataError("unknown category \"" + v.get<std::string>() + "\" for feature \"" + f.name + "\"");
      rec.categorical[f.kind_index] = idx;
    } else {
      rec.numerical[f.kind_index] = v.get<double>();
    }
  }
  return rec;
}

nlohmann::json condition_to_json(const cond::FeatureCondition& c, const data::TabularSchema& schema) {
  nlohmann::json num = nlohmann::json::object();
  for (std::size_t i = 0; i < c.numerical.size(); ++i)
    num[schema.numerical(i).name] = {c.numerical[i].p_min, c.numerical[i].p_max};
  nlohmann::json cat = nlohmann::json::object();
  for (std::size_t i = 0; i < c.masks.size(); ++i) {
    nlohmann::json allowed = nlohmann::json::array();
    const auto& f = schema.categorical(i);
    for (std::size_t j = 0; j < c.masks[i].size(); ++j)
      if (c.masks[i][j]) allowed.push_back(f.categories[j]);
    cat[f.name] = std::move(allowed);
  }
  return {{"numerical", std::move(num)}, {"categorical", std::move(cat)}};
}

cond::FeatureCondition condition_from_json(const nlohmann::json& doc, const data::TabularSchema& schema) {
  cond::FeatureCondition c;
  c.numerical.resize(schema.numerical_count());
  c.masks.resize(schema.categorical_count());
  for (std::size_t i = 0; i < schema.numerical_count(); ++i) {
    const auto& v = doc.at("numerical").at(schema.numerical(i).name);
    c.numerical[i] = {v.at(0).get<double>(), v.at(1).get<double>()};
  }
  for (std::size_t i = 0; i < schema.categorical_count(); ++i) {
    const auto& f = schema.categorical(i);
    c.masks[i].assign(f.cardinality(), 0);
    for (const auto& name : doc.at("categorical").at(f.name)) {
      const auto idx = schema.category_index(i, name.get<std::string>());
      if (idx == data::TabularSchema::npos) throw DataError("unknown category in condition for \"" + f.name + "\"");
      c.masks[i][idx] = 1;
    }
  }
  return c;
}

// One actor pass plus decode, post-processing and labeling of the outputs.
std::vector<CounterfactualResult> run_policy(const Explainer& ex, std::span<const data::InstanceRecord> instances,
                                             const Matrix& z, std::span<const std::size_t> labels,
                                             std::span<const std::size_t> targets,
                                             std::vector<cond::FeatureCondition> conditions, std::size_t sample) {
  const Matrix c = cond::encode_conditions(conditions, ex.schema);
  const Matrix state = ddpg::build_state(z, labels, targets, c, ex.schema.class_count());
  const Matrix z_cf = ex.policy.actor.infer(state);
  auto cf = cond::postprocess_batch(ex.ae.decode(z_cf), instances, conditions, ex.schema);
  const auto predicted = ex.model.predict_labels(data::encode_batch(cf, ex.schema));

  std::vector<CounterfactualResult> out(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& r = out[i];
    r.instance = i;
    r.sample = sample;
    r.original = instances[i];
    r.counterfactual = std::move(cf[i]);
    r.original_label = labels[i];
    r.target = targets[i];
    r.predicted = predicted[i];
    r.valid = predicted[i] == targets[i];
    r.condition = std::move(conditions[i]);
  }
  return out;
}

}  // namespace

void Explainer::check() const {
  const std::uint64_t fp = schema.fingerprint();
  ae.check_schema(schema);
  if (policy.schema_fingerprint != fp)
    throw ConfigError("policy was trained on a different schema (fingerprint " + hex64(policy.schema_fingerprint) +
                      ", expected " + hex64(fp) + ")");
  const auto& s = policy.shape;
  if (s.latent_dim != ae.latent_dim() || s.class_count != schema.class_count() ||
      s.condition_width != schema.condition_width())
    throw ConfigError("policy shape does not match the autoencoder and schema");
}

std::vector<std::size_t> resolve_targets(std::span<const std::size_t> requested, std::span<const std::size_t> labels,
                                         std::size_t class_count, std::uint64_t seed) {
  if (requested.size() != labels.size()) throw ConfigError("need exactly one target per instance");
  Rng rng(seed);
  std::vector<std::size_t> out(requested.size());
  for (std::size_t i = 0; i < requested.size(); ++i) {
    if (requested[i] == kAnyOtherClass) {
      out[i] = cond::sample_other_target(labels[i], class_count, rng);
    } else {
      if (requested[i] >= class_count)
        throw ConfigError("target class " + std::to_string(requested[i]) + " is out of range");
      out[i] = requested[i];
    }
  }
  return out;
}

std::vector<CounterfactualResult> generate(const Explainer& ex, const CounterfactualRequest& request,
                                           std::uint64_t seed) {
  ex.check();
  if (request.instances.empty()) return {};
  if (request.constraints.size() != ex.schema.features().size())
    throw ConfigError("constraint set does not match the schema");
  for (const auto& rec : request.instances) data::validate_record(rec, ex.schema);

  const Matrix x = data::encode_batch(request.instances, ex.schema);
  const auto labels = ex.model.predict_labels(x);
  const auto targets = resolve_targets(request.targets, labels, ex.schema.class_count(), seed);
  std::vector<cond::FeatureCondition> conditions;
  conditions.reserve(request.instances.size());
  for (const auto& rec : request.instances)
    conditions.push_back(cond::generation_condition(ex.schema, rec, request.constraints));
  return run_policy(ex, request.instances, ex.ae.encode(x), labels, targets, std::move(conditions), 0);
}

std::vector<CounterfactualResult> generate_diverse(const Explainer& ex, const CounterfactualRequest& request,
                                                   std::size_t k, Rng& rng) {
  if (k < 1) throw ConfigError("diverse generation needs at least one sample per instance");
  ex.check();
  if (request.instances.empty()) return {};
  if (request.constraints.size() != ex.schema.features().size())
    throw ConfigError("constraint set does not match the schema");
  for (const auto& rec : request.instances) data::validate_record(rec, ex.schema);

  const Matrix x = data::encode_batch(request.instances, ex.schema);
  const Matrix z = ex.ae.encode(x);
  const auto labels = ex.model.predict_labels(x);
  const auto targets = resolve_targets(request.targets, labels, ex.schema.class_count(), rng.engine()());

  std::vector<CounterfactualResult> out;
  out.reserve(k * request.instances.size());
  for (std::size_t s = 0; s < k; ++s) {
    std::vector<cond::FeatureCondition> conditions;
    conditions.reserve(request.instances.size());
    for (const auto& rec : request.instances)
      conditions.push_back(cond::sample_condition(ex.schema, rec, request.constraints, rng));
    auto round = run_policy(ex, request.instances, z, labels, targets, std::move(conditions), s);
    out.insert(out.end(), std::make_move_iterator(round.begin()), std::make_move_iterator(round.end()));
  }
  return out;
}

nlohmann::json results_to_json(std::span<const CounterfactualResult> results, const data::TabularSchema& schema) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    rows.push_back({{"instance", r.instance},
                    {"sample", r.sample},
                    {"original", record_to_json(r.original, schema)},
                    {"counterfactual", record_to_json(r.counterfactual, schema)},
                    {"original_label", class_name(schema, r.original_label)},
                    {"target", class_name(schema, r.target)},
                    {"predicted", class_name(schema, r.predicted)},
                    {"valid", r.valid},
                    {"found", r.found},
                    {"condition", condition_to_json(r.condition, schema)}});
  }
  return {{"schema_fingerprint", hex64(schema.fingerprint())}, {"results", std::move(rows)}};
}

std::vector<CounterfactualResult> results_from_json(const nlohmann::json& doc, const data::TabularSchema& schema) {
  try {
    if (doc.at("schema_fingerprint").get<std::string>() != hex64(schema.fingerprint()))
      throw ConfigError("results were produced under a different schema");
    std::vector<CounterfactualResult> out;
    for (const auto& row : doc.at("results")) {
      CounterfactualResult r;
      r.instance = row.at("instance").get<std::size_t>();
      r.sample = row.at("sample").get<std::size_t>();
      r.original = record_from_json(row.at("original"), schema);
      r.counterfactual = record_from_json(row.at("counterfactual"), schema);
      r.original_label = schema.class_index(row.at("original_label").get<std::string>());
      r.target = schema.class_index(row.at("target").get<std::string>());
      r.predicted = schema.class_index(row.at("predicted").get<std::string>());
      r.valid = row.at("valid").get<bool>();
      r.found = row.at("found").get<bool>();
      r.condition = condition_from_json(row.at("condition"), schema);
      out.push_back(std::move(r));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed results document: ") + e.what());
  }
}

void write_results_csv(std::ostream& out, std::span<const CounterfactualResult> results,
                       const data::TabularSchema& schema) {
  std::string xs, cfs;
  for (const auto& f : schema.features()) {
    xs += ",x." + f.name;
    cfs += ",cf." + f.name;
  }
  out << "instance,sample" << xs << cfs << ",original,target,predicted,valid\n";
  for (const auto& r : results) {
    out << r.instance << ',' << r.sample << ',';
    data::write_csv_row(out, r.original, schema);
    out << ',';
    data::write_csv_row(out, r.counterfactual, schema);
    out << ',' << class_name(schema, r.original_label) << ',' << class_name(schema, r.target) << ','
        << class_name(schema, r.predicted) << ',' << (r.valid ? "true" : "false") << '\n';
  }
}

}  // namespace cfrl::gen
