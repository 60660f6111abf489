#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dualmask/predictor.hpp"

namespace dualmask {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::int64_t step = 0;
  int stage = 0;
  std::uint32_t sobol_index = 0;
  std::uint64_t seed = 0;
  std::string objective = "masked";
  std::string config_echo;
};

/// Deterministic hash of the shape-defining model fields.
std::string model_config_hash(const PredictorConfig& config);

/// Writes "DUALMASK-CKPT\n", one JSON header line, then every parameter as
/// little-endian float64 in declaration order. Written via temp-and-rename.
void save_checkpoint(const std::filesystem::path& path, const Predictor& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  PredictorConfig config;
  CheckpointMeta meta;
  Predictor model;
};

/// Reads a checkpoint and rebuilds the model it describes.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads parameters into an existing model; throws DimensionError naming
/// every mismatching field when the shapes disagree.
CheckpointMeta load_into(const std::filesystem::path& path, Predictor& model);

/// Order-sensitive hash of all parameter values (hex).
std::string parameter_hash(const Predictor& model);

}  // namespace dualmask
