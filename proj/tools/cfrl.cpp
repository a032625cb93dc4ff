#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cfrl/errors.hpp"
#include "cfrl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cfrl;

namespace {

struct Options {
  std::string config;
  std::string out = "cfrl-out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> csv, schema, constraints;
  std::optional<std::size_t> steps, ae_steps, latent_dim, max_instances, diverse;
  std::optional<double> lambda_s, lambda_c;
  std::optional<std::string> method, targets, instances, blackbox;
  std::size_t repeats = 1;
  bool verbose = false;
};

// --config wins; otherwise the config recorded by ingest in --out; otherwise defaults.
pipeline::RunConfig resolve_config(const Options& o) {
  pipeline::RunConfig cfg;
  const pipeline::Workspace ws{o.out};
  if (!o.config.empty()) {
    cfg = pipeline::RunConfig::load(o.config);
  } else if (fs::exists(ws.config())) {
    cfg = pipeline::RunConfig::load(ws.config());
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.csv) cfg.csv = fs::absolute(*o.csv);
  if (o.schema) cfg.schema = fs::absolute(*o.schema);
  if (o.constraints) cfg.constraints = fs::absolute(*o.constraints);
  if (o.blackbox) cfg.blackbox.kind = *o.blackbox;
  if (o.ae_steps) cfg.autoencoder.steps = *o.ae_steps;
  if (o.latent_dim) cfg.autoencoder.latent_dim = *o.latent_dim;
  if (o.steps) cfg.ddpg.steps = *o.steps;
  if (o.lambda_s) cfg.ddpg.lambda_sparsity = *o.lambda_s;
  if (o.lambda_c) cfg.ddpg.lambda_consistency = *o.lambda_c;
  if (o.method) cfg.generate.method = *o.method;
  if (o.targets) cfg.generate.targets = *o.targets;
  if (o.max_instances) cfg.generate.max_instances = *o.max_instances;
  if (o.diverse) cfg.generate.diverse = *o.diverse;
  // Re-validate after overrides.
  return pipeline::RunConfig::from_json(cfg.to_json(), fs::current_path());
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
  sub->add_option("--seed", o.seed, "Master seed");
  sub->add_flag("-v,--verbose", o.verbose, "Progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual explanations for tabular classifiers via a conditional RL policy"};
  app.require_subcommand(1);
  Options o;

  auto* ingest = app.add_subcommand("ingest", "Read CSV + schema, fit statistics and fix the split");
  add_common(ingest, o);
  ingest->add_option("--csv", o.csv, "Data CSV");
  ingest->add_option("--schema", o.schema, "Schema JSON");
  ingest->add_option("--constraints", o.constraints, "Constraint JSON used by later stages");

  auto* train_bb = app.add_subcommand("train-blackbox", "Train the classifier to explain");
  add_common(train_bb, o);
  train_bb->add_option("--kind", o.blackbox, "lr or dt");

  auto* train_ae = app.add_subcommand("train-ae", "Train the autoencoder");
  add_common(train_ae, o);
  train_ae->add_option("--steps,--ae-steps", o.ae_steps, "Training steps");
  train_ae->add_option("--latent-dim", o.latent_dim, "Latent size");

  auto* train_cf = app.add_subcommand("train-cf", "Train the counterfactual policy");
  add_common(train_cf, o);
  train_cf->add_option("--steps", o.steps, "DDPG steps");
  train_cf->add_option("--lambda-s", o.lambda_s, "Sparsity weight");
  train_cf->add_option("--lambda-c", o.lambda_c, "Consistency weight");
  train_cf->add_option("--constraints", o.constraints, "Constraint JSON");

  auto* generate = app.add_subcommand("generate", "Generate counterfactuals");
  add_common(generate, o);
  generate->add_option("--method", o.method, "rl or mo");
  generate->add_option("--instances", o.instances, "CSV of rows to explain (default: test split)");
  generate->add_option("--targets", o.targets, "other, same or a class name");
  generate->add_option("--constraints", o.constraints, "Constraint JSON");
  generate->add_option("--diverse", o.diverse, "Samples per instance under random conditions");
  generate->add_option("--max-instances", o.max_instances, "Cap on test rows");

  auto* evaluate = app.add_subcommand("evaluate", "Score generated counterfactuals");
  add_common(evaluate, o);
  evaluate->add_option("--method", o.method, "rl or mo");

  auto* run = app.add_subcommand("run", "Whole pipeline over several seeds with RL and MO reports");
  add_common(run, o);
  run->add_option("--csv", o.csv, "Data CSV");
  run->add_option("--schema", o.schema, "Schema JSON");
  run->add_option("--constraints", o.constraints, "Constraint JSON");
  run->add_option("--repeats", o.repeats, "Number of seeds")->capture_default_str();
  run->add_option("--steps", o.steps, "DDPG steps");
  run->add_option("--ae-steps", o.ae_steps, "Autoencoder steps");
  run->add_option("--latent-dim", o.latent_dim, "Latent size");
  run->add_option("--lambda-s", o.lambda_s, "Sparsity weight");
  run->add_option("--lambda-c", o.lambda_c, "Consistency weight");
  run->add_option("--blackbox", o.blackbox, "lr or dt");
  run->add_option("--max-instances", o.max_instances, "Cap on test rows");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const pipeline::RunConfig cfg = resolve_config(o);
    const pipeline::Workspace ws{o.out};
    nlohmann::json out;
    if (ingest->parsed()) {
      out = pipeline::cmd_ingest(cfg, ws);
    } else if (train_bb->parsed()) {
      out = pipeline::cmd_train_blackbox(cfg, ws);
    } else if (train_ae->parsed()) {
      out = pipeline::cmd_train_ae(cfg, ws);
    } else if (train_cf->parsed()) {
      out = pipeline::cmd_train_cf(cfg, ws, o.verbose);
    } else if (generate->parsed()) {
      std::optional<fs::path> rows;
      if (o.instances) rows = fs::path(*o.instances);
      out = pipeline::cmd_generate(cfg, ws, rows);
    } else if (evaluate->parsed()) {
      out = pipeline::cmd_evaluate(cfg, ws, cfg.generate.method);
    } else if (run->parsed()) {
      out = pipeline::cmd_run(cfg, ws, o.repeats, o.verbose);
      std::cout << out.at("table").get<std::string>();
      return 0;
    }
    std::cout << out.dump(2) << '\n';
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
