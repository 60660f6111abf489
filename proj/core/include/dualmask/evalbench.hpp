#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualmask/sampler.hpp"
#include "dualmask/synth.hpp"

namespace dualmask {

/// Exact-match rate over non-pad positions (optionally restricted by
/// `filter`). Returns nullopt when no position qualifies.
std::optional<double> token_accuracy(std::span<const int> predicted, std::span<const int> truth,
                                     const Flags* filter = nullptr, int pad_id = -1);

struct OnsetScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Greedy one-to-one matching of sorted event positions within +-tol.
OnsetScore onset_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, std::size_t tol = 1);

/// Fraction of decodable harmony positions whose implied style equals the
/// majority style; nullopt when no harmony position decodes.
std::optional<double> style_consistency(std::span<const int> predicted, std::span<const int> vocal, int styles = 4);

/// Fraction of non-rest accompaniment tokens inside vocal rest positions.
std::optional<double> rest_region_density(std::span<const int> predicted, std::span<const int> vocal,
                                          int pad_id = -1);

/// Accuracy at sung positions against the grammar under the majority style
/// implied by the prediction itself.
std::optional<double> harmony_accuracy_self_style(std::span<const int> predicted, std::span<const int> vocal,
                                                  int styles = 4);

struct SongMetrics {
  std::optional<double> token_accuracy;
  std::optional<double> harmony_accuracy;
  std::optional<double> harmony_accuracy_self_style;
  std::optional<double> rest_region_accuracy;
  OnsetScore onset;
  std::optional<double> style_consistency;
  std::optional<double> rest_region_density;
};

SongMetrics score_song(std::span<const int> predicted, const SynthInstance& truth, int styles = 4);

enum class EvalCondition { full, zero_shot };

EvalCondition parse_condition(std::string_view name);
std::string_view to_string(EvalCondition c);

struct EvalReport {
  std::string condition;
  std::string schedule;  // "ar" for left-to-right decoding
  int steps = 0;
  std::size_t songs = 0;
  std::optional<double> token_accuracy;
  std::optional<double> harmony_accuracy;
  std::optional<double> harmony_accuracy_self_style;
  std::optional<double> rest_region_accuracy;
  double onset_precision = 0.0;
  double onset_recall = 0.0;
  double onset_f1 = 0.0;
  std::optional<double> style_consistency;
  std::optional<double> rest_region_density;
  double model_calls_per_token = 0.0;
  std::string status = "ok";
};

/// Fixed column order of the comma-separated report.
const std::vector<std::string>& report_columns();
std::string report_csv_header();
std::string report_csv_row(const EvalReport& r);
std::string report_json(const EvalReport& r);

/// A held-out song cut to the evaluation length plus its conditions.
struct EvalSong {
  SynthInstance crop;
  Condition full;
};

/// Crops [0, seq_len) of each instance; the reference is a snippet from the
/// remainder of the song.
std::vector<EvalSong> make_eval_songs(std::span<const SynthInstance> instances, std::size_t seq_len,
                                      std::size_t ref_len, std::uint64_t seed);

/// Averages per-song metrics into one report row.
EvalReport aggregate(std::span<const SongMetrics> metrics, std::size_t model_calls, std::size_t tokens);

struct SuiteConfig {
  std::vector<EvalCondition> conditions{EvalCondition::full, EvalCondition::zero_shot};
  std::vector<ScheduleKind> schedules{ScheduleKind::cosine, ScheduleKind::linear, ScheduleKind::power};
  std::vector<int> steps{1, 5, 20, 60};
  SamplerParams sampler{};
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

/// Decodes every song with the masked sampler and scores it.
EvalReport evaluate_cell(LogitModel& model, std::span<const EvalSong> songs, EvalCondition condition,
                         const SamplerParams& params, std::size_t batch, std::uint64_t seed);

/// Left-to-right decoding counterpart.
EvalReport evaluate_ar(ArLogitModel& model, std::span<const EvalSong> songs, EvalCondition condition,
                       const ArParams& params, std::size_t batch, std::uint64_t seed);

/// Every (condition, schedule, steps) cell; a failing cell is recorded with
/// its error and the suite continues.
std::vector<EvalReport> run_suite(LogitModel& model, std::span<const EvalSong> songs, const SuiteConfig& config);

/// Writes report.csv, report.jsonl and curve.jsonl into `dir`. A non-empty
/// `config_hash` is added to every JSON record.
void write_reports(const std::filesystem::path& dir, std::span<const EvalReport> reports,
                   std::string_view config_hash = {});

}  // namespace dualmask
