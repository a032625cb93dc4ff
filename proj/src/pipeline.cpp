#include "cfrl/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "cfrl/checkpoint.hpp"
#include "cfrl/errors.hpp"
#include "cfrl/hash.hpp"

namespace cfrl::pipeline {
namespace {

using nlohmann::json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void require(const fs::path& path, const std::string& command) {
  if (!fs::exists(path))
    throw ConfigError("missing " + path.string() + "; run `cfrl " + command + "` with the same --out first");
}

// Strict reader for one config section: unknown keys are configuration errors.
class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.contains(name_)) {
      node_ = doc.at(name_);
      if (!node_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
    } else {
      node_ = json::object();
    }
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!node_.contains(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + name_ + "." + key + "' has the wrong type");
    }
  }
  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError("config: unknown key '" + name_ + "." + it.key() + "'");
  }

 private:
  std::string name_;
  json node_;
  std::vector<std::string> seen_;
};

json blackbox_json(const BlackboxSettings& b) {
  return {{"kind", b.kind},
          {"C", b.lr.C},
          {"epochs", b.lr.epochs},
          {"learning_rate", b.lr.learning_rate},
          {"max_depth", b.dt.max_depth},
          {"min_samples_split", b.dt.min_samples_split}};
}

json autoencoder_json(const ae::AutoencoderConfig& a) {
  return {{"latent_dim", a.latent_dim},
          {"hidden_dim", a.hidden_dim},
          {"steps", a.steps},
          {"batch_size", a.batch_size},
          {"learning_rate", a.learning_rate}};
}

json ddpg_json(const ddpg::TrainConfig& d) {
  return {{"lambda_sparsity", d.lambda_sparsity},
          {"lambda_consistency", d.lambda_consistency},
          {"steps", d.steps},
          {"batch_size", d.batch_size},
          {"actor_learning_rate", d.actor_learning_rate},
          {"critic_learning_rate", d.critic_learning_rate},
          {"exploration_steps", d.exploration_steps},
          {"noise_std", d.noise_std},
          {"warmup_steps", d.warmup_steps},
          {"updates_per_step", d.updates_per_step},
          {"hidden_dim", d.hidden_dim},
          {"buffer_capacity", d.buffer_capacity}};
}

json generate_json(const GenerateSettings& g) {
  return {{"method", g.method}, {"targets", g.targets}, {"max_instances", g.max_instances}, {"diverse", g.diverse}};
}

std::string hash_hex(const std::string& bytes) { return hex64(fnv1a64(bytes)); }

ckpt::Checkpoint make_checkpoint(ckpt::Stage stage, const data::TabularSchema& schema, std::uint64_t seed,
                                 const json& section, std::vector<NamedTensor> tensors) {
  ckpt::Checkpoint c;
  c.stage = stage;
  c.schema_fingerprint = schema.fingerprint();
  c.seed = seed;
  c.config_hash = config_hash(section);
  c.tensors = std::move(tensors);
  return c;
}

std::vector<std::size_t> requested_targets(const RunConfig& cfg, const data::TabularSchema& schema,
                                           const blackbox::BlackBoxModel& model,
                                           const std::vector<data::InstanceRecord>& instances) {
  const auto& t = cfg.generate.targets;
  if (t == "other") return std::vector<std::size_t>(instances.size(), gen::kAnyOtherClass);
  if (t == "same") return model.predict_labels(data::encode_batch(instances, schema));
  std::size_t k = 0;
  try {
    k = schema.class_index(t);
  } catch (const DataError&) {
    throw ConfigError("unknown target '" + t + "' (use other, same or a class name)");
  }
  return std::vector<std::size_t>(instances.size(), k);
}

}  // namespace

// ---------------------------------------------------------------- config

RunConfig RunConfig::from_json(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> top{"csv",      "schema",      "constraints", "seed",     "train_fraction",
                                            "blackbox", "autoencoder", "ddpg",        "generate", "mmd"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (std::find(top.begin(), top.end(), it.key()) == top.end())
      throw ConfigError("config: unknown key '" + it.key() + "'");

  auto path_of = [&](const char* key) -> std::optional<fs::path> {
    if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
    if (!doc.at(key).is_string()) throw ConfigError(std::string("config: '") + key + "' must be a path string");
    fs::path p = doc.at(key).get<std::string>();
    if (p.empty()) return std::nullopt;
    if (!p.is_absolute()) p = base_dir / p;
    if (!fs::exists(p)) throw ConfigError(std::string("config: ") + key + " path " + p.string() + " does not exist");
    return p.lexically_normal();
  };

  RunConfig c;
  if (auto p = path_of("csv")) c.csv = *p;
  if (auto p = path_of("schema")) c.schema = *p;
  c.constraints = path_of("constraints");
  try {
    c.seed = doc.value("seed", std::uint64_t{0});
    c.train_fraction = doc.value("train_fraction", 0.8);
  } catch (const json::exception&) {
    throw ConfigError("config: seed and train_fraction must be numbers");
  }

  Section bb(doc, "blackbox");
  bb.get("kind", c.blackbox.kind);
  bb.get("C", c.blackbox.lr.C);
  bb.get("epochs", c.blackbox.lr.epochs);
  bb.get("learning_rate", c.blackbox.lr.learning_rate);
  bb.get("max_depth", c.blackbox.dt.max_depth);
  bb.get("min_samples_split", c.blackbox.dt.min_samples_split);
  bb.finish();
  if (c.blackbox.kind != "lr" && c.blackbox.kind != "dt")
    throw ConfigError("config: blackbox.kind must be 'lr' or 'dt'");

  Section ae(doc, "autoencoder");
  ae.get("latent_dim", c.autoencoder.latent_dim);
  ae.get("hidden_dim", c.autoencoder.hidden_dim);
  ae.get("steps", c.autoencoder.steps);
  ae.get("batch_size", c.autoencoder.batch_size);
  ae.get("learning_rate", c.autoencoder.learning_rate);
  ae.finish();

  Section dd(doc, "ddpg");
  dd.get("lambda_sparsity", c.ddpg.lambda_sparsity);
  dd.get("lambda_consistency", c.ddpg.lambda_consistency);
  dd.get("steps", c.ddpg.steps);
  dd.get("batch_size", c.ddpg.batch_size);
  dd.get("actor_learning_rate", c.ddpg.actor_learning_rate);
  dd.get("critic_learning_rate", c.ddpg.critic_learning_rate);
  dd.get("exploration_steps", c.ddpg.exploration_steps);
  dd.get("noise_std", c.ddpg.noise_std);
  dd.get("warmup_steps", c.ddpg.warmup_steps);
  dd.get("updates_per_step", c.ddpg.updates_per_step);
  dd.get("hidden_dim", c.ddpg.hidden_dim);
  dd.get("buffer_capacity", c.ddpg.buffer_capacity);
  dd.finish();
  c.ddpg.validate();

  Section ge(doc, "generate");
  ge.get("method", c.generate.method);
  ge.get("targets", c.generate.targets);
  ge.get("max_instances", c.generate.max_instances);
  ge.get("diverse", c.generate.diverse);
  ge.finish();
  if (c.generate.method != "rl" && c.generate.method != "mo")
    throw ConfigError("config: generate.method must be 'rl' or 'mo'");

  Section mm(doc, "mmd");
  mm.get("seed", c.mmd.seed);
  mm.get("reduction_dims", c.mmd.reduction_dims);
  mm.finish();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(doc, fs::absolute(path).parent_path());
}

json RunConfig::to_json() const {
  auto abs = [](const fs::path& p) { return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string(); };
  return {{"csv", abs(csv)},
          {"schema", abs(schema)},
          {"constraints", constraints ? json(abs(*constraints)) : json(nullptr)},
          {"seed", seed},
          {"train_fraction", train_fraction},
          {"blackbox", blackbox_json(blackbox)},
          {"autoencoder", autoencoder_json(autoencoder)},
          {"ddpg", ddpg_json(ddpg)},
          {"generate", generate_json(generate)},
          {"mmd", {{"seed", mmd.seed}, {"reduction_dims", mmd.reduction_dims}}}};
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  return fnv1a64(stage + "#" + std::to_string(seed));
}

std::uint64_t config_hash(const json& section) { return fnv1a64(section.dump()); }

// ---------------------------------------------------------------- loaders

LoadedData load_dataset(const Workspace& ws) {
  require(ws.dataset(), "ingest");
  const json doc = read_json(ws.dataset());
  LoadedData out;
  try {
    auto& ds = out.dataset;
    ds.schema = data::TabularSchema::from_json(doc.at("schema"));
    const fs::path csv = doc.at("csv").get<std::string>();
    if (hash_hex(read_file(csv)) != doc.at("csv_hash").get<std::string>())
      throw DataError(csv.string() + " changed since ingest; run `cfrl ingest` again");
    auto table = data::read_csv(csv, ds.schema);
    ds.records = std::move(table.records);
    ds.labels = std::move(table.labels);
    ds.split.train = doc.at("split").at("train").get<std::vector<std::size_t>>();
    ds.split.test = doc.at("split").at("test").get<std::vector<std::size_t>>();
    ds.split.train_fraction = doc.at("split").at("train_fraction").get<double>();
    ds.split.seed = doc.at("split").at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(ws.dataset().string() + " is malformed: " + e.what());
  }
  out.train = out.dataset.select(out.dataset.split.train);
  out.train_labels = out.dataset.select_labels(out.dataset.split.train);
  out.test = out.dataset.select(out.dataset.split.test);
  out.test_labels = out.dataset.select_labels(out.dataset.split.test);
  return out;
}

std::unique_ptr<blackbox::BlackBoxModel> load_blackbox(const Workspace& ws, const data::TabularSchema& schema) {
  require(ws.blackbox(), "train-blackbox");
  return blackbox::load_blackbox(ckpt::load(ws.blackbox(), ckpt::Stage::Blackbox, schema.fingerprint()).tensor_map());
}

ae::TabularAutoencoder load_autoencoder(const Workspace& ws, const data::TabularSchema& schema) {
  require(ws.autoencoder(), "train-ae");
  const auto c = ckpt::load(ws.autoencoder(), ckpt::Stage::Autoencoder, schema.fingerprint());
  return ae::TabularAutoencoder::import_tensors(c.tensor_map(), schema);
}

ddpg::TrainedPolicy load_policy(const Workspace& ws, const data::TabularSchema& schema) {
  require(ws.actor(), "train-cf");
  const auto c = ckpt::load(ws.actor(), ckpt::Stage::Actor, schema.fingerprint());
  auto policy = ddpg::import_policy(c.tensor_map());
  policy.schema_fingerprint = c.schema_fingerprint;
  return policy;
}

cond::ConstraintSet load_constraints(const RunConfig& cfg, const data::TabularSchema& schema) {
  if (!cfg.constraints) return cond::ConstraintSet::all_free(schema);
  return cond::ConstraintSet::load(*cfg.constraints, schema);
}

// ---------------------------------------------------------------- commands

json cmd_ingest(const RunConfig& cfg, const Workspace& ws) {
  if (cfg.csv.empty() || cfg.schema.empty()) throw ConfigError("ingest needs a CSV and a schema path");
  if (!fs::exists(cfg.csv)) throw ConfigError("CSV file " + cfg.csv.string() + " does not exist");
  if (!fs::exists(cfg.schema)) throw ConfigError("schema file " + cfg.schema.string() + " does not exist");
  if (cfg.constraints && !fs::exists(*cfg.constraints))
    throw ConfigError("constraint file " + cfg.constraints->string() + " does not exist");

  const auto ds = data::load_csv(cfg.csv, cfg.schema, cfg.train_fraction, stage_seed(cfg.seed, "split"));
  const json doc = {{"csv", fs::absolute(cfg.csv).lexically_normal().string()},
                    {"csv_hash", hash_hex(read_file(cfg.csv))},
                    {"schema", ds.schema.to_json()},
                    {"schema_fingerprint", hex64(ds.schema.fingerprint())},
                    {"rows", ds.records.size()},
                    {"seed", cfg.seed},
                    {"split",
                     {{"train", ds.split.train},
                      {"test", ds.split.test},
                      {"train_fraction", ds.split.train_fraction},
                      {"seed", ds.split.seed}}}};
  fs::create_directories(ws.dir);
  write_file(ws.dataset(), doc.dump(1) + "\n");
  write_file(ws.config(), cfg.to_json().dump(2) + "\n");
  return {{"rows", ds.records.size()},
          {"train", ds.split.train.size()},
          {"test", ds.split.test.size()},
          {"schema_fingerprint", hex64(ds.schema.fingerprint())}};
}

json cmd_train_blackbox(const RunConfig& cfg, const Workspace& ws) {
  const auto d = load_dataset(ws);
  const auto& schema = d.dataset.schema;
  const Matrix xtr = data::encode_batch(d.train, schema);
  const Matrix xte = data::encode_batch(d.test, schema);
  const std::uint64_t seed = stage_seed(cfg.seed, "blackbox");

  std::unique_ptr<blackbox::BlackBoxModel> model;
  std::vector<NamedTensor> tensors;
  if (cfg.blackbox.kind == "lr") {
    auto m = blackbox::train_logistic_regression(xtr, d.train_labels, schema.class_count(), cfg.blackbox.lr, seed);
    tensors = m.export_tensors();
    model = std::make_unique<blackbox::LogisticRegressionModel>(std::move(m));
  } else {
    auto m = blackbox::train_decision_tree(xtr, d.train_labels, schema.class_count(), cfg.blackbox.dt, seed);
    tensors = m.export_tensors();
    model = std::make_unique<blackbox::DecisionTreeModel>(std::move(m));
  }
  ckpt::save(ws.blackbox(),
             make_checkpoint(ckpt::Stage::Blackbox, schema, seed, blackbox_json(cfg.blackbox), std::move(tensors)));
  const json report = {{"kind", cfg.blackbox.kind},
                       {"train_accuracy", blackbox::accuracy(*model, xtr, d.train_labels)},
                       {"test_accuracy", d.test.empty() ? json(nullptr) : json(blackbox::accuracy(*model, xte, d.test_labels))}};
  write_file(ws.blackbox_report(), report.dump(2) + "\n");
  return report;
}

json cmd_train_ae(const RunConfig& cfg, const Workspace& ws) {
  const auto d = load_dataset(ws);
  const auto& schema = d.dataset.schema;
  const std::uint64_t seed = stage_seed(cfg.seed, "autoencoder");
  ae::TrainingTrace trace;
  const auto model = ae::train_autoencoder(data::encode_batch(d.train, schema), schema, cfg.autoencoder, seed, &trace);
  ckpt::save(ws.autoencoder(), make_checkpoint(ckpt::Stage::Autoencoder, schema, seed,
                                               autoencoder_json(cfg.autoencoder), model.export_tensors()));
  json out = {{"steps", cfg.autoencoder.steps}, {"latent_dim", cfg.autoencoder.latent_dim}};
  if (!trace.loss.empty()) {
    const std::size_t tail = std::min<std::size_t>(100, trace.loss.size());
    double s = 0.0;
    for (std::size_t i = trace.loss.size() - tail; i < trace.loss.size(); ++i) s += trace.loss[i];
    out["final_loss"] = s / static_cast<double>(tail);
  }
  if (schema.categorical_count() > 0 && !d.test.empty())
    out["test_categorical_accuracy"] =
        ae::categorical_reconstruction_accuracy(model, data::encode_batch(d.test, schema), schema);
  return out;
}

json cmd_train_cf(const RunConfig& cfg, const Workspace& ws, bool verbose) {
  const auto d = load_dataset(ws);
  const auto& schema = d.dataset.schema;
  const auto model = load_blackbox(ws, schema);
  const auto autoenc = load_autoencoder(ws, schema);
  const auto constraints = load_constraints(cfg, schema);
  const std::uint64_t seed = stage_seed(cfg.seed, "ddpg");

  std::ostringstream log;
  double window = 0.0;
  const auto policy = ddpg::train(cfg.ddpg, d.train, d.train_labels, schema, *model, autoenc, constraints, seed,
                                  [&](const ddpg::TrainLogEntry& e) {
                                    log << json{{"step", e.step},
                                                {"reward_rate", e.reward_rate},
                                                {"updated", e.updated},
                                                {"critic_loss", e.critic_loss},
                                                {"actor_loss", e.actor_loss},
                                                {"max_term", e.max_term},
                                                {"sparsity", e.sparsity},
                                                {"consistency", e.consistency}}
                                               .dump()
                                        << '\n';
                                    window += e.reward_rate;
                                    if (verbose && (e.step + 1) % 1000 == 0) {
                                      std::cerr << "step " << e.step + 1 << "  reward " << window / 1000.0
                                                << "  critic " << e.critic_loss << "  sparsity " << e.sparsity
                                                << "  consistency " << e.consistency << '\n';
                                      window = 0.0;
                                    }
                                  });
  write_file(ws.train_log(), log.str());
  const json section = ddpg_json(cfg.ddpg);
  ckpt::save(ws.actor(), make_checkpoint(ckpt::Stage::Actor, schema, seed, section, ddpg::export_policy(policy, false)));
  ckpt::save(ws.critic(),
             make_checkpoint(ckpt::Stage::Critic, schema, seed, section, policy.critic.export_tensors("critic")));

  const std::size_t tail = std::min<std::size_t>(100, policy.log.size());
  double rate = 0.0;
  for (std::size_t i = policy.log.size() - tail; i < policy.log.size(); ++i) rate += policy.log[i].reward_rate;
  return {{"steps", cfg.ddpg.steps}, {"final_reward_rate", tail ? rate / static_cast<double>(tail) : 0.0}};
}

json cmd_generate(const RunConfig& cfg, const Workspace& ws, const std::optional<fs::path>& instances) {
  const auto d = load_dataset(ws);
  const auto& schema = d.dataset.schema;
  const auto model = load_blackbox(ws, schema);

  gen::CounterfactualRequest req;
  if (instances) {
    req.instances = data::read_csv(*instances, schema, true).records;
  } else {
    const std::size_t n = std::min(cfg.generate.max_instances, d.test.size());
    req.instances.assign(d.test.begin(), d.test.begin() + static_cast<std::ptrdiff_t>(n));
  }
  if (req.instances.empty()) throw ConfigError("no instances to explain");
  req.targets = requested_targets(cfg, schema, *model, req.instances);
  req.constraints = load_constraints(cfg, schema);
  const std::uint64_t target_seed = stage_seed(cfg.seed, "targets");

  std::vector<gen::CounterfactualResult> results;
  const std::string& method = cfg.generate.method;
  if (method == "rl") {
    const auto autoenc = load_autoencoder(ws, schema);
    const auto policy = load_policy(ws, schema);
    const gen::Explainer ex{schema, *model, autoenc, policy};
    if (cfg.generate.diverse > 0) {
      Rng rng(stage_seed(cfg.seed, "diverse"));
      results = gen::generate_diverse(ex, req, cfg.generate.diverse, rng);
    } else {
      results = gen::generate(ex, req, target_seed);
    }
  } else {
    const auto train_pred = model->predict_labels(data::encode_batch(d.train, schema));
    results = metrics::generate_mo(req, d.train, train_pred, schema, *model, target_seed);
  }

  write_file(ws.results(method), gen::results_to_json(results, schema).dump(1) + "\n");
  std::ostringstream csv;
  gen::write_results_csv(csv, results, schema);
  write_file(ws.results_csv(method), csv.str());
  return {{"method", method}, {"count", results.size()}, {"validity", metrics::validity(results)}};
}

json cmd_evaluate(const RunConfig& cfg, const Workspace& ws, const std::string& method) {
  const auto d = load_dataset(ws);
  const auto& schema = d.dataset.schema;
  const auto model = load_blackbox(ws, schema);
  require(ws.results(method), "generate --method " + method);
  const auto results = gen::results_from_json(read_json(ws.results(method)), schema);
  if (results.empty()) throw DataError(ws.results(method).string() + " holds no results");
  const auto train_pred = model->predict_labels(data::encode_batch(d.train, schema));
  const auto report = metrics::evaluate(results, d.train, train_pred, schema, cfg.mmd);
  json doc = report.to_json(schema);
  doc["method"] = method;
  write_file(ws.report(method), doc.dump(2) + "\n");
  write_file(ws.report_text(method), metrics::format_table({{method, {report}}}));
  return doc;
}

json cmd_run(const RunConfig& cfg, const Workspace& ws, std::size_t repeats, bool verbose) {
  if (repeats < 1) throw ConfigError("run needs at least one repeat");
  std::vector<metrics::EvaluationReport> rl_reports, mo_reports;
  json per_seed = json::array();
  for (std::size_t r = 0; r < repeats; ++r) {
    RunConfig c = cfg;
    c.seed = cfg.seed + r;
    const Workspace sub{ws.dir / ("seed-" + std::to_string(c.seed))};
    if (verbose) std::cerr << "== seed " << c.seed << " -> " << sub.dir.string() << '\n';
    json entry = {{"seed", c.seed}};
    entry["ingest"] = cmd_ingest(c, sub);
    entry["blackbox"] = cmd_train_blackbox(c, sub);
    entry["autoencoder"] = cmd_train_ae(c, sub);
    entry["ddpg"] = cmd_train_cf(c, sub, verbose);
    for (const std::string method : {"rl", "mo"}) {
      c.generate.method = method;
      cmd_generate(c, sub, std::nullopt);
      entry[method] = cmd_evaluate(c, sub, method);
    }
    per_seed.push_back(entry);

    const auto d = load_dataset(sub);
    const auto model = load_blackbox(sub, d.dataset.schema);
    const auto train_pred = model->predict_labels(data::encode_batch(d.train, d.dataset.schema));
    for (const std::string method : {"rl", "mo"}) {
      const auto results = gen::results_from_json(read_json(sub.results(method)), d.dataset.schema);
      (method == "rl" ? rl_reports : mo_reports)
          .push_back(metrics::evaluate(results, d.train, train_pred, d.dataset.schema, c.mmd));
    }
  }
  const std::string table = metrics::format_table({{"rl", rl_reports}, {"mo", mo_reports}});
  write_file(ws.dir / "summary.txt", table);
  const json summary = {{"seeds", per_seed}, {"table", table}};
  write_file(ws.dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace cfrl::pipeline
