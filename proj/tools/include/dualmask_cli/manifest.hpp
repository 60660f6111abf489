#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dualmask::cli {

/// SHA-1 of "blob <size>\0<content>", as git computes object ids.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

/// Writes `content` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

struct RunManifest {
  std::string command;
  std::string config_echo;
  std::string config_hash;
  std::uint64_t dataset_seed = 0;
  std::string checkpoint;       // path, empty when the command made none
  std::string checkpoint_hash;  // git-style hash of the checkpoint file
  double seconds = 0.0;
  int exit_code = 0;
  std::vector<std::string> outputs;

  std::string to_json() const;
  static RunManifest from_json(std::string_view text);
};

/// Writes `<dir>/manifest.json` atomically.
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace dualmask::cli
