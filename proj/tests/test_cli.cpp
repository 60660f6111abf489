#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dualmask/checkpoint.hpp"
#include "dualmask_cli/commands.hpp"
#include "dualmask_cli/manifest.hpp"
#include "dualmask_cli/run_config.hpp"

namespace dualmask::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dualmask_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig cfg;
  cfg.load_text(R"(
model.dim = 16
model.layers = 1
model.heads = 2
model.max_len = 32
train.batch = 2
stage1.seq_len = 16
stage1.span = 32
stage1.steps = 4
stage2.seq_len = 32
stage2.steps = 2
data.length = 40
data.songs = 20
eval.seq_len = 32
eval.songs = 3
sampler.steps = 4
log_level = warn
)");
  cfg.set("out", out.string());
  return cfg;
}

TEST(GitBlobHash, MatchesGit) {
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(RunConfig, DefaultsCoverEveryKey) {
  RunConfig cfg;
  for (const auto& [k, v] : RunConfig::defaults()) EXPECT_EQ(cfg.get(k), v);
  EXPECT_FALSE(RunConfig::known("model.depth"));
}

TEST(RunConfig, UnknownKeyIsConfigError) {
  RunConfig cfg;
  try {
    cfg.set("model.depth", "3");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "model.depth");
  }
  EXPECT_THROW(cfg.load_text("nonsense line without equals"), ConfigError);
}

TEST(RunConfig, BadValuesRejectedByGetters) {
  RunConfig cfg;
  cfg.set("model.dim", "sixteen");
  EXPECT_THROW(cfg.get_int("model.dim"), ConfigError);
  cfg.set("zero_shot", "maybe");
  EXPECT_THROW(cfg.get_bool("zero_shot"), ConfigError);
}

TEST(RunConfig, PrecedenceDefaultsFileEnvCommandLine) {
  const fs::path dir = scratch("precedence");
  {
    std::ofstream os(dir / "run.cfg");
    os << "# comment\nmodel.dim = 24\nmodel.layers = 3\nseed = 5\n";
  }
  ::setenv("DUALMASK_MODEL_LAYERS", "6", 1);
  ::setenv("DUALMASK_SEED", "7", 1);
  RunConfig cfg;
  cfg.load_file(dir / "run.cfg");
  cfg.apply_env();
  cfg.set("seed", "9");
  ::unsetenv("DUALMASK_MODEL_LAYERS");
  ::unsetenv("DUALMASK_SEED");
  EXPECT_EQ(cfg.get_int("model.heads"), 4);   // default
  EXPECT_EQ(cfg.get_int("model.dim"), 24);    // file
  EXPECT_EQ(cfg.get_int("model.layers"), 6);  // env over file
  EXPECT_EQ(cfg.get_int("seed"), 9);          // command line over env
}

TEST(RunConfig, UnknownEnvironmentVariableIsConfigError) {
  ::setenv("DUALMASK_NOT_A_KEY", "1", 1);
  RunConfig cfg;
  EXPECT_THROW(cfg.apply_env(), ConfigError);
  ::unsetenv("DUALMASK_NOT_A_KEY");
  EXPECT_EQ(env_name("model.dim"), "DUALMASK_MODEL_DIM");
}

TEST(RunConfig, EchoRoundTripsAndHashIgnoresOutputLocation) {
  RunConfig a;
  a.set("model.dim", "32");
  a.set("sampler.schedule", "linear");
  RunConfig b;
  b.load_text(a.echo());
  EXPECT_EQ(b.echo(), a.echo());
  EXPECT_EQ(b.hash(), a.hash());
  b.set("out", "elsewhere");
  b.set("threads", "4");
  EXPECT_EQ(b.hash(), a.hash());
  b.set("seed", "1");
  EXPECT_NE(b.hash(), a.hash());
}

TEST(Manifest, JsonRoundTrip) {
  RunManifest m;
  m.command = "sample";
  m.config_echo = "seed = 3\n";
  m.config_hash = git_blob_hash(m.config_echo);
  m.dataset_seed = 17;
  m.checkpoint = "x.ckpt";
  m.checkpoint_hash = "abc";
  m.seconds = 1.5;
  m.outputs = {"a", "b"};
  const RunManifest back = RunManifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
}

TEST(Commands, TrainTwiceGivesIdenticalLossLog) {
  const fs::path dir = scratch("train_twice");
  ASSERT_EQ(cmd_train(tiny_run(dir / "a")), kOk);
  ASSERT_EQ(cmd_train(tiny_run(dir / "b")), kOk);
  EXPECT_EQ(slurp(dir / "a" / "loss.jsonl"), slurp(dir / "b" / "loss.jsonl"));
  // The checkpoint header echoes `out`, so compare parameters, not bytes.
  EXPECT_EQ(parameter_hash(load_checkpoint(dir / "a" / "stage2.ckpt").model),
            parameter_hash(load_checkpoint(dir / "b" / "stage2.ckpt").model));
}

TEST(Commands, ReplayReproducesTrainAndSampleOutputs) {
  const fs::path dir = scratch("replay");
  ASSERT_EQ(cmd_train(tiny_run(dir / "train")), kOk);
  ASSERT_EQ(cmd_replay(dir / "train" / "manifest.json", std::nullopt), kOk);
  EXPECT_EQ(slurp(dir / "train" / "loss.jsonl"), slurp(dir / "train" / "replay" / "loss.jsonl"));

  RunConfig s = tiny_run(dir / "sample");
  s.set("checkpoint", (dir / "train" / "stage2.ckpt").string());
  ASSERT_EQ(cmd_sample(s), kOk);
  ASSERT_EQ(cmd_replay(dir / "sample" / "manifest.json", dir / "again"), kOk);
  const std::string first = slurp(dir / "sample" / "samples.jsonl");
  EXPECT_FALSE(first.empty());
  EXPECT_EQ(first, slurp(dir / "again" / "samples.jsonl"));
}

TEST(Commands, GenDataWritesRequestedSongs) {
  const fs::path dir = scratch("gen");
  RunConfig cfg = tiny_run(dir);
  cfg.set("data.songs", "5");
  ASSERT_EQ(cmd_gen_data(cfg), kOk);
  const auto songs = read_dataset(dir / "dataset.jsonl");
  ASSERT_EQ(songs.size(), 5u);
  for (const auto& s : songs) EXPECT_EQ(s.vocal.size(), 40u);
}

TEST(Commands, UnknownCommandThrows) {
  EXPECT_THROW(run_command("frobnicate", RunConfig{}), std::runtime_error);
}

}  // namespace
}  // namespace dualmask::cli
