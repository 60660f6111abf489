#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualmask/corruption.hpp"
#include "dualmask/optim.hpp"
#include "dualmask/predictor.hpp"
#include "dualmask/schedule.hpp"
#include "dualmask/synth.hpp"

namespace dualmask {

/// Smallest mask ratio used in the 1/(t * T) loss weight.
inline constexpr double kMinLossRatio = 1e-3;

struct LossBreakdown {
  double cml = 0.0;
  double rtd = 0.0;
  double total = 0.0;
  double lambda = 0.2;
  double t_used = 0.0;  // mean mask ratio over the batch
  std::size_t masked_count = 0;
};

/// total = cml + lambda * rtd.
LossBreakdown total_loss(double cml, double rtd, double lambda = 0.2);

/// Per-row weights of the masked-token loss for one item: each masked
/// non-pad row gets scale / (max(t, 1e-3) * T_nonpad), every other row 0.
std::vector<double> cml_weights(const TokenSeq& clean, const CorruptionRecord& rec, const Vocab& vocab,
                                double scale = 1.0);

/// Rows scored by the replaced-token loss: non-pad and not masked.
Flags rtd_scored(const CorruptionRecord& rec, const Vocab& vocab);

/// Masked-token loss of one item: -(1 / (max(t,1e-3) T_nonpad)) sum over
/// masked rows of log p(clean token). `logits` is T x K_acc.
Tensor cml_loss(const Tensor& logits, const TokenSeq& clean, const CorruptionRecord& rec, const Vocab& vocab);

/// Mean binary cross-entropy of the discriminator over scored rows;
/// `rtd_logits` is T x 1 (pre-sigmoid).
Tensor rtd_loss(const Tensor& rtd_logits, const CorruptionRecord& rec, const Vocab& vocab);

/// Raised when a step produces a non-finite loss or gradient. The model,
/// optimizer and trainer state are left as they were before the step.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::int64_t step, std::uint64_t batch_seed)
      : std::runtime_error(what), step_(step), batch_seed_(batch_seed) {}
  std::int64_t step() const { return step_; }
  std::uint64_t batch_seed() const { return batch_seed_; }

 private:
  std::int64_t step_;
  std::uint64_t batch_seed_;
};

enum class Objective { masked, autoregressive };

struct TrainConfig {
  std::size_t batch = 16;
  int accum = 1;
  double lambda = 0.2;
  RtdOptions rtd{};
  MaskSchedule schedule{};
  double cond_dropout = 0.5;
  AdamWConfig adam{};
  double clip = 1.0;
  Objective objective = Objective::masked;
  std::uint64_t seed = 0;
};

/// One training example: a cropped pair plus its conditions.
struct TrainItem {
  TokenSeq vocal;
  TokenSeq accomp;
  std::optional<int> style;
  TokenSeq reference;
  /// Song position of the first token of the crop.
  std::size_t offset = 0;
};

struct StepResult {
  LossBreakdown loss;
  double grad_norm = 0.0;
  double lr = 0.0;
  std::uint64_t batch_seed = 0;
};

class Trainer {
 public:
  Trainer(Predictor& model, TrainConfig config);

  /// One optimizer step (with `accum` micro-batches) at learning rate
  /// lr_at(step, lr). Items must share one length and their count must be
  /// batch * accum.
  StepResult train_step(const std::vector<TrainItem>& items, const LrSchedule& lr);

  /// Loss of a batch with no parameter update (no dropout, fixed corruption rng).
  LossBreakdown evaluate(const std::vector<TrainItem>& items, std::uint64_t seed) const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }
  const SobolState& sobol() const { return sobol_; }
  void set_sobol(SobolState s) { sobol_ = s; }
  const TrainConfig& config() const { return config_; }
  AdamW& optimizer() { return adam_; }

 private:
  LossBreakdown accumulate(std::span<const TrainItem> items, Rng& rng, SobolState* sobol, bool training,
                           double factor) const;

  Predictor& model_;
  TrainConfig config_;
  AdamW adam_;
  SobolState sobol_;
  std::int64_t step_ = 0;
};

// ------------------------------------------------------------------ curriculum

struct StageSpec {
  int id = 1;
  std::size_t seq_len = 64;
  std::int64_t steps = 0;
  LrSchedule lr{};
  /// Stage 2 draws only instances passing the quality filter.
  bool filtered = false;
  /// Crops start uniformly in [0, span - seq_len], so a short stage still
  /// visits every song position up to `span`. 0 means span = seq_len.
  std::size_t span = 0;
};

struct CurriculumConfig {
  PredictorConfig model{};
  TrainConfig train{};
  SynthConfig data{};
  StageSpec stage1{1, 64, 1000, {3e-3, 50, 1000}, false, 256};
  StageSpec stage2{2, 256, 100, {1e-3, 10, 100}, true, 0};
  bool run_stage2 = true;
  std::size_t ref_len = 16;
  std::uint64_t data_seed = 1;
  std::filesystem::path out_dir = "run";
  /// Echoed verbatim into checkpoint headers.
  std::string config_echo;
};

struct LossRecord {
  int stage = 1;
  std::int64_t step = 0;
  StepResult result;
};

/// Structured-text line for one loss record.
std::string to_log_line(const LossRecord& rec);

struct CurriculumResult {
  std::filesystem::path stage1_checkpoint;
  std::optional<std::filesystem::path> stage2_checkpoint;
};

using LossSink = std::function<void(const LossRecord&)>;

/// Training items for one step, reproducible from (data_seed, stage, step).
std::vector<TrainItem> draw_batch(const SynthConfig& data, const StageSpec& stage, std::size_t count,
                                  std::size_t ref_len, std::uint64_t data_seed, std::int64_t step);

/// Stage 1 at the short length on all data, then (optionally) stage 2 from the
/// stage-1 checkpoint at the long length on filtered data.
CurriculumResult run_curriculum(const CurriculumConfig& config, const LossSink& sink = {});

/// Stage 2 only, resuming from an existing stage-1 checkpoint.
std::filesystem::path run_stage2(const CurriculumConfig& config, const std::filesystem::path& stage1_checkpoint,
                                 const LossSink& sink = {});

}  // namespace dualmask
