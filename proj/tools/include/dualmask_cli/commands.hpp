#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dualmask/evalbench.hpp"
#include "dualmask_cli/run_config.hpp"

namespace dualmask::cli {

/// Exit codes shared by every command.
enum ExitCode : int {
  kOk = 0,
  kFailed = 1,       // operation-level error (bad input, failed eval cell, failed arm)
  kConfigError = 2,  // invalid key or value
  kNanAbort = 3,     // non-finite loss or gradient during training
};

/// Held-out songs of `length` tokens drawn from `data_seed`, one rng stream
/// per song; label noise is forced to zero.
std::vector<SynthInstance> held_out_instances(std::size_t count, std::size_t length, const SynthConfig& data,
                                              std::uint64_t data_seed);

/// Songs named by `input` (one record per line) or, when empty, generated
/// from eval.data_seed; cut to eval.seq_len with a reference snippet.
std::vector<EvalSong> load_eval_songs(const RunConfig& cfg, std::size_t count);

std::vector<SynthInstance> read_dataset(const std::filesystem::path& path);

int cmd_train(const RunConfig& cfg);
int cmd_sample(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_ablate(const RunConfig& cfg);
int cmd_augment(const RunConfig& cfg);
int cmd_gen_data(const RunConfig& cfg);

/// Reruns the command recorded in a manifest with its echoed config, writing
/// into `out` (default: `<manifest dir>/replay`).
int cmd_replay(const std::filesystem::path& manifest, const std::optional<std::filesystem::path>& out);

int run_command(const std::string& name, const RunConfig& cfg);

inline const std::vector<std::string>& ablation_arms() {
  static const std::vector<std::string> arms = {"full", "no_stage2", "ar", "single_stream", "no_rtd"};
  return arms;
}

/// Config of one ablation arm derived from a base config.
RunConfig arm_config(const RunConfig& base, const std::string& arm, std::uint64_t seed,
                     const std::filesystem::path& out);

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::string status = "ok";
  std::vector<EvalReport> reports;
};

/// Trains (or reuses the checkpoint of) one arm and evaluates it on `songs`
/// with the arm's decoder: masked sampler at sampler.steps / sampler.schedule,
/// or left-to-right decoding for the AR arm.
ArmResult run_arm(const RunConfig& base, const std::string& arm, std::uint64_t seed,
                  const std::filesystem::path& root, std::span<const EvalSong> songs);

}  // namespace dualmask::cli
