#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "dualmask/predictor.hpp"
#include "dualmask/random.hpp"
#include "dualmask/schedule.hpp"
#include "dualmask/tokens.hpp"

namespace dualmask {

struct SamplerParams {
  int steps = 60;
  int top_k = 100;
  double top_p = 0.9;
  double temperature = 1.0;
  double mask_temperature = 10.5;
  double guidance = 1.0;
  MaskSchedule schedule{};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Global conditions for one song. An empty condition is the zero-shot mode.
struct Condition {
  std::optional<int> style;
  TokenSeq reference;

  static Condition none() { return {}; }
  bool is_null() const { return !style && reference.empty(); }
};

/// Anything that maps (vocal, partially masked accompaniment, condition) to
/// per-position logits over the real accompaniment ids.
class LogitModel {
 public:
  struct Query {
    std::span<const int> vocal;
    std::span<const int> accomp;
    const Condition* cond;
  };

  virtual ~LogitModel() = default;
  virtual const Vocab& vocab() const = 0;
  /// One LogitTable (T x K_acc) per query. Counts one call per query.
  std::vector<LogitTable> logits(std::span<const Query> queries);

  std::size_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 protected:
  virtual std::vector<LogitTable> compute(std::span<const Query> queries) = 0;

 private:
  std::size_t calls_ = 0;
};

/// Left-to-right model: logits for the next accompaniment position given the
/// vocal line up to and including it and the accompaniment before it.
class ArLogitModel {
 public:
  struct Query {
    std::span<const int> vocal;   // i + 1 tokens
    std::span<const int> accomp;  // i tokens already generated
    const Condition* cond;
  };

  virtual ~ArLogitModel() = default;
  virtual const Vocab& vocab() const = 0;
  std::vector<std::vector<double>> next_logits(std::span<const Query> queries);

  std::size_t calls() const { return calls_; }
  void reset_calls() { calls_ = 0; }

 protected:
  virtual std::vector<std::vector<double>> compute(std::span<const Query> queries) = 0;

 private:
  std::size_t calls_ = 0;
};

/// Adapter running a Predictor with bidirectional attention.
class PredictorLogitModel : public LogitModel {
 public:
  explicit PredictorLogitModel(const Predictor& model) : model_(model) {}
  const Vocab& vocab() const override { return model_.config().vocab; }

 protected:
  std::vector<LogitTable> compute(std::span<const Query> queries) override;

 private:
  const Predictor& model_;
};

/// Adapter running a Predictor with causal attention on truncated inputs.
class PredictorArModel : public ArLogitModel {
 public:
  explicit PredictorArModel(const Predictor& model) : model_(model) {}
  const Vocab& vocab() const override { return model_.config().vocab; }

 protected:
  std::vector<std::vector<double>> compute(std::span<const Query> queries) override;

 private:
  const Predictor& model_;
};

/// Guidance mixing: w = 1 is one conditional call, w = 0 one null call,
/// otherwise l_null + w (l_cond - l_null) from two calls.
std::vector<LogitTable> guided_logits(LogitModel& model, std::span<const LogitModel::Query> queries, double w);

/// Temperature, then top-k, then top-p; returns the renormalized
/// distribution (zeros outside the kept set). Ties in the ranking keep the
/// lower id.
std::vector<double> filtered_distribution(std::span<const double> logits, double temperature, int top_k, double top_p);

/// Draws an index from a distribution by inverse CDF.
int sample_index(std::span<const double> probs, Rng& rng);

/// Number of positions left masked after a step to ratio t_next.
std::size_t remask_count(double t_next, std::size_t nonpad);

struct SamplerState {
  TokenSeq tokens;
  Flags committed;
  std::vector<double> confidence;
  std::vector<double> trajectory;
  int step = 0;
  std::size_t nonpad = 0;

  std::size_t masked_count(const Vocab& vocab) const;
};

SamplerState initial_state(std::span<const int> vocal, const Vocab& vocab, const SamplerParams& params);

/// One reverse step from logits already computed for the state's tokens.
void reverse_step(SamplerState& state, const LogitTable& logits, const SamplerParams& params, const Vocab& vocab,
                  Rng& rng);

using StepObserver = std::function<void(std::size_t song, const SamplerState&)>;

/// Iterative masked decoding for one song (rng seeded from params.seed).
TokenSeq generate(std::span<const int> vocal, const Condition& cond, LogitModel& model, const SamplerParams& params,
                  const StepObserver& observer = {});

/// Lock-step decoding of several equal-length songs, song b seeded with
/// seeds[b]; equivalent to calling generate per song up to batching.
std::vector<TokenSeq> generate_batch(std::span<const TokenSeq> vocals, std::span<const Condition> conds,
                                     LogitModel& model, const SamplerParams& params,
                                     std::span<const std::uint64_t> seeds, const StepObserver& observer = {});

struct ArParams {
  double temperature = 1.0;  // 0 = greedy
  int top_k = 100;
  double top_p = 0.9;
  std::uint64_t seed = 0;
};

TokenSeq ar_generate(std::span<const int> vocal, const Condition& cond, ArLogitModel& model, const ArParams& params);

std::vector<TokenSeq> ar_generate_batch(std::span<const TokenSeq> vocals, std::span<const Condition> conds,
                                        ArLogitModel& model, const ArParams& params,
                                        std::span<const std::uint64_t> seeds);

}  // namespace dualmask
