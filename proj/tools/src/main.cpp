#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dualmask/tensor.hpp"
#include "dualmask/trainer.hpp"
#include "dualmask_cli/commands.hpp"

using dualmask::cli::ConfigError;
using dualmask::cli::RunConfig;

namespace {

struct Overrides {
  std::vector<std::pair<std::string, std::string>> entries;

  /// Adds an option whose value, when given, becomes `key`.
  template <typename T>
  CLI::Option* bind(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    return app.add_option_function<T>(
        flag, [this, key](const T& v) { entries.emplace_back(key, to_text(v)); }, help + " [" + key + "]");
  }
  CLI::Option* flag(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    return app.add_flag_callback(flag, [this, key] { entries.emplace_back(key, "true"); }, help + " [" + key + "]");
  }

  static std::string to_text(const std::string& s) { return s; }
  static std::string to_text(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
    return out;
  }
  template <typename T>
  static std::string to_text(const T& v) {
    return std::to_string(v);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional masked-diffusion accompaniment generation on synthetic token data"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  Overrides ov;
  app.add_option("--config", config_path, "Config file of 'key = value' lines");
  app.add_option("--set", sets, "Override one key: --set key=value (repeatable)");
  ov.bind<std::string>(app, "--seed", "seed", "Run seed");
  ov.bind<std::string>(app, "--out", "out", "Output directory");
  ov.bind<std::string>(app, "--threads", "threads", "Worker threads (the build is single-threaded)");
  ov.bind<std::string>(app, "--log-level", "log_level", "trace|debug|info|warn|error");

  auto* train = app.add_subcommand("train", "Run the two-stage curriculum");
  ov.bind<std::string>(*train, "--stage1-steps", "stage1.steps", "Stage-1 optimizer steps");
  ov.bind<std::string>(*train, "--stage2-steps", "stage2.steps", "Stage-2 optimizer steps (0 skips stage 2)");
  ov.bind<std::string>(*train, "--lambda", "train.lambda", "Replaced-token loss weight");
  ov.bind<std::string>(*train, "--objective", "train.objective", "masked|autoregressive");
  ov.bind<std::string>(*train, "--layout", "model.layout", "dual|single_stream");

  auto* sample = app.add_subcommand("sample", "Generate accompaniments for held-out vocals");
  ov.bind<std::string>(*sample, "--checkpoint", "checkpoint", "Checkpoint file")->required();
  ov.bind<std::string>(*sample, "--input", "input", "Dataset file (default: generate held-out vocals)");
  ov.flag(*sample, "--zero-shot", "zero_shot", "Drop both prefix conditions");
  ov.flag(*sample, "--ar", "ar_mode", "Left-to-right decoding (AR-trained checkpoint)");
  ov.bind<std::string>(*sample, "--steps", "sampler.steps", "Reverse steps");
  ov.bind<std::string>(*sample, "--schedule", "sampler.schedule", "cosine|linear|power");
  ov.bind<std::string>(*sample, "--guidance", "sampler.guidance", "Guidance weight");
  ov.bind<std::string>(*sample, "--songs", "eval.songs", "Number of songs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over the schedule x steps grid");
  ov.bind<std::string>(*eval, "--checkpoint", "checkpoint", "Checkpoint file")->required();
  ov.bind<std::string>(*eval, "--input", "input", "Dataset file (default: generate held-out songs)");
  ov.bind<std::vector<std::string>>(*eval, "--conditions", "eval.conditions", "full,zero_shot")->delimiter(',');
  ov.bind<std::vector<std::string>>(*eval, "--schedules", "eval.schedules", "cosine,linear,power")->delimiter(',');
  ov.bind<std::vector<std::string>>(*eval, "--steps", "eval.steps", "e.g. 1,5,20,60")->delimiter(',');
  ov.bind<std::string>(*eval, "--songs", "eval.songs", "Number of songs");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every ablation arm over a seed family");
  ov.bind<std::vector<std::string>>(*ablate, "--arms", "ablate.arms", "Subset of full,no_stage2,ar,single_stream,no_rtd")
      ->delimiter(',');
  ov.bind<std::string>(*ablate, "--seeds", "ablate.seeds", "Seeds per arm (seed, seed+1, ...)");
  ov.bind<std::string>(*ablate, "--songs", "ablate.songs", "Held-out songs per evaluation");

  auto* augment = app.add_subcommand("augment", "Random EQ chain and loudness normalization on one file");
  ov.bind<std::string>(*augment, "input", "input", "Input .wav, .f32 or .raw")->required();
  ov.bind<std::string>(*augment, "--output", "augment.output", "Output file name inside --out");
  ov.bind<std::string>(*augment, "--p", "augment.p", "Activation probability");
  ov.bind<std::string>(*augment, "--rate", "augment.rate", "Sample rate of raw input");
  ov.bind<std::string>(*augment, "--format", "augment.format", "float32|pcm16 for WAV output");

  auto* gen = app.add_subcommand("gen-data", "Write synthetic songs, one record per line");
  ov.bind<std::string>(*gen, "--songs", "data.songs", "Number of songs");
  ov.bind<std::string>(*gen, "--length", "data.length", "Tokens per song");
  ov.bind<std::string>(*gen, "--output", "data.output", "File name inside --out");

  auto* replay = app.add_subcommand("replay", "Rerun a command from its manifest");
  std::string manifest;
  replay->add_option("manifest", manifest, "manifest.json of an earlier run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    cfg.apply_env();
    for (const auto& [k, v] : ov.entries) cfg.set(k, v);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(s, "--set expects key=value");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    spdlog::set_level(spdlog::level::from_str(cfg.get("log_level")));
    if (cfg.get_int("threads") < 1) throw ConfigError("threads", "must be at least 1");

    if (replay->parsed()) {
      std::optional<std::filesystem::path> out;
      for (const auto& [k, v] : ov.entries) {
        if (k == "out") out = v;
      }
      return dualmask::cli::cmd_replay(manifest, out);
    }
    return dualmask::cli::run_command(app.get_subcommands().front()->get_name(), cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dualmask::cli::kConfigError;
  } catch (const dualmask::TrainingError& e) {
    std::cerr << "error: training aborted at step " << e.step() << ": " << e.what() << "\n";
    return dualmask::cli::kNanAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return dualmask::cli::kFailed;
  }
}
