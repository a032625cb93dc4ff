#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cfrl/pipeline.hpp"
#include "cfrl/errors.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using cfrl::testing::data_dir;
using cfrl::testing::scratch_dir;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(CFRL_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path write_config(const fs::path& dir) {
  nlohmann::json cfg = {{"csv", (data_dir() / "blobs.csv").string()},
                        {"schema", (data_dir() / "blobs.schema.json").string()},
                        {"seed", 7},
                        {"autoencoder", {{"latent_dim", 3}, {"hidden_dim", 16}, {"steps", 300}}},
                        {"ddpg", {{"steps", 60}, {"hidden_dim", 16}, {"batch_size", 32}}},
                        {"generate", {{"max_instances", 50}}}};
  const auto path = dir / "cfg.json";
  std::ofstream(path) << cfg.dump(2);
  return path;
}

void pipeline(const fs::path& cfg, const fs::path& out, const fs::path& scratch) {
  const std::string common = " --config " + cfg.string() + " --out " + out.string();
  for (const std::string cmd : {"ingest", "train-blackbox", "train-ae", "train-cf", "generate", "evaluate"}) {
    const auto r = cli(cmd + common, scratch);
    ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
  }
}

}  // namespace

TEST(Cli, PipelineIsByteReproducible) {
  const auto dir = scratch_dir("cli-repro");
  const auto cfg = write_config(dir);
  pipeline(cfg, dir / "a", dir);
  pipeline(cfg, dir / "b", dir);
  for (const std::string f : {"blackbox.ckpt", "autoencoder.ckpt", "actor.ckpt", "critic.ckpt", "dataset.json",
                              "results_rl.json", "report_rl.json", "train_log.jsonl"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const auto report = nlohmann::json::parse(slurp(dir / "a" / "report_rl.json"));
  EXPECT_EQ(report["total"], 50);
  EXPECT_EQ(report["method"], "rl");
}

TEST(Cli, ArtifactsReload) {
  const auto dir = scratch_dir("cli-reload");
  const auto cfg = write_config(dir);
  pipeline(cfg, dir / "w", dir);
  const cfrl::pipeline::Workspace ws{dir / "w"};
  const auto data = cfrl::pipeline::load_dataset(ws);
  EXPECT_EQ(data.train.size() + data.test.size(), 1000u);
  EXPECT_NO_THROW(cfrl::pipeline::load_blackbox(ws, data.dataset.schema));
  EXPECT_NO_THROW(cfrl::pipeline::load_autoencoder(ws, data.dataset.schema));
  EXPECT_NO_THROW(cfrl::pipeline::load_policy(ws, data.dataset.schema));
  auto other = data.dataset.schema;
  other.numerical_mut(0).mean += 1.0;
  EXPECT_THROW(cfrl::pipeline::load_autoencoder(ws, other), cfrl::ConfigError);
}

TEST(Cli, MissingDependencyNamesCommand) {
  const auto dir = scratch_dir("cli-missing");
  const auto cfg = write_config(dir);
  const std::string common = " --config " + cfg.string() + " --out " + (dir / "w").string();
  auto r = cli("train-cf" + common, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cfrl ingest"), std::string::npos) << r.err;
  ASSERT_EQ(cli("ingest" + common, dir).code, 0);
  r = cli("train-cf" + common, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cfrl train-blackbox"), std::string::npos) << r.err;
  ASSERT_EQ(cli("train-blackbox" + common, dir).code, 0);
  r = cli("evaluate" + common, dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cfrl generate --method rl"), std::string::npos) << r.err;
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli-exit");
  EXPECT_EQ(cli("frobnicate", dir).code, 2);
  EXPECT_EQ(cli("ingest --no-such-flag", dir).code, 2);

  std::ofstream(dir / "bad_key.json") << R"({"ddpg": {"stepz": 5}})";
  auto r = cli("ingest --config " + (dir / "bad_key.json").string() + " --out " + (dir / "w").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("stepz"), std::string::npos) << r.err;

  std::ofstream(dir / "bad.csv") << "x1,x2,tag,label\n1.0,oops,a,0\n";
  r = cli("ingest --csv " + (dir / "bad.csv").string() + " --schema " + (data_dir() / "blobs.schema.json").string() +
              " --out " + (dir / "w2").string(),
          dir);
  EXPECT_EQ(r.code, 3) << r.err;

  const auto cfg = write_config(dir);
  r = cli("train-cf --config " + cfg.string() + " --out " + (dir / "w3").string() + " --lambda-s -1", dir);
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_EQ(cli("--help", dir).code, 0);
}

TEST(Cli, ImmutableSameTargetReturnsInputs) {
  const auto dir = scratch_dir("cli-immutable");
  const auto cfg = write_config(dir);
  pipeline(cfg, dir / "w", dir);
  std::ofstream(dir / "frozen.json") << R"({"x1": "immutable", "x2": "immutable", "tag": "immutable"})";
  std::ofstream(dir / "rows.csv") << "x1,x2,tag\n-2.0,-1.5,b\n1.25,1.5,c\n0.5,-0.25,a\n";
  const auto r = cli("generate --config " + cfg.string() + " --out " + (dir / "w").string() + " --constraints " +
                         (dir / "frozen.json").string() + " --targets same --instances " + (dir / "rows.csv").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(slurp(dir / "w" / "results_rl.json"));
  ASSERT_EQ(doc["results"].size(), 3u);
  for (const auto& row : doc["results"]) {
    EXPECT_EQ(row["original"], row["counterfactual"]);
    EXPECT_TRUE(row["valid"].get<bool>());
  }
}

TEST(Cli, MinimumObservableOnBlobsIsValid) {
  const auto dir = scratch_dir("cli-mo");
  const auto cfg = write_config(dir);
  const std::string common = " --config " + cfg.string() + " --out " + (dir / "w").string();
  for (const std::string cmd : {"ingest", "train-blackbox", "generate --method mo", "evaluate --method mo"})
    ASSERT_EQ(cli(cmd + common, dir).code, 0) << cmd;
  const auto report = nlohmann::json::parse(slurp(dir / "w" / "report_mo.json"));
  EXPECT_EQ(report["validity"], 1.0);
}
