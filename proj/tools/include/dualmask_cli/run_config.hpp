#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualmask/augment.hpp"
#include "dualmask/evalbench.hpp"
#include "dualmask/sampler.hpp"
#include "dualmask/trainer.hpp"

namespace dualmask::cli {

/// Bad key or value; `key()` names the offending entry.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Environment overrides use this prefix: model.dim -> DUALMASK_MODEL_DIM.
inline constexpr std::string_view kEnvPrefix = "DUALMASK_";

std::string env_name(std::string_view key);

/// Flat key/value run configuration. Every key has a default; sources are
/// applied in the order defaults < file < environment < command line, and
/// keys outside the known set are rejected.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<std::pair<std::string, std::string>>& defaults();
  static bool known(std::string_view key);

  void set(const std::string& key, const std::string& value);
  /// Parses `key = value` lines; `#` starts a comment.
  void load_text(std::string_view text, const std::string& origin = "<text>");
  void load_file(const std::filesystem::path& path);
  /// Applies DUALMASK_* variables from `environ`; unknown names are errors.
  void apply_env();

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Resolved config as sorted `key = value` lines; parsed back by load_text.
  std::string echo() const;
  /// Git-style blob hash of the echo without out, threads and log_level.
  std::string hash() const;

  CurriculumConfig curriculum() const;
  SamplerParams sampler() const;
  ArParams ar() const;
  SuiteConfig suite() const;
  AugConfig augment() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace dualmask::cli
