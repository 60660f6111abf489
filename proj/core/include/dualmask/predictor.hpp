#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "dualmask/optim.hpp"
#include "dualmask/reprdual.hpp"

namespace dualmask {

struct PredictorConfig {
  int dim = 128;
  int layers = 4;
  int heads = 4;
  int ffn_mult = 2;
  Vocab vocab{};
  int styles = 4;
  std::size_t max_len = 256;
  double dropout = 0.0;  // only 0 is supported
  std::uint64_t seed = 0;
  Layout layout = Layout::dual;
  /// Places the accompaniment half first in the dual feature split.
  bool acc_first = false;

  /// Shape-only preset mirroring a 2048-wide backbone; never allocated by tests.
  static PredictorConfig paper_scale();
  void validate() const;
};

struct PredictorOutput {
  Tensor logits;      // (batch * T) x K_acc
  Tensor rtd_logits;  // (batch * T) x 1, pre-sigmoid
  Tensor hidden;      // (batch * seq_len) x D, last block output
  std::size_t batch = 0;
  std::size_t tokens = 0;

  /// Clamped-sigmoid discriminator probabilities, strictly inside (0,1).
  std::vector<double> rtd_prob() const;
};

/// One item of a model batch.
struct Example {
  std::span<const int> vocal;
  std::span<const int> accomp;
  ConditionPrefix prefix;
  /// Song position of the first token.
  std::size_t offset = 0;
};

/// Pre-norm transformer over [prefix | track rows] emitting accompaniment
/// logits and a replaced-token score per position.
class Predictor {
 public:
  explicit Predictor(const PredictorConfig& config);

  const PredictorConfig& config() const { return config_; }
  ParamList& params() { return params_; }
  const ParamList& params() const { return params_; }
  const EmbeddingTables& tables() const { return tables_; }

  ConditionPrefix prefix(std::optional<int> style, std::optional<std::span<const int>> reference, double dropout_p,
                         bool training, Rng& rng) const;
  /// Null prefix (both conditions absent).
  ConditionPrefix null_prefix() const;

  /// Embeds a batch (all items share T) into a model input.
  ModelInput encode(std::span<const Example> batch) const;

  PredictorOutput forward(const ModelInput& x) const;
  /// Same network with causal attention over the whole sequence.
  PredictorOutput ar_forward(const ModelInput& x) const;
  PredictorOutput run(const ModelInput& x, AttentionKind kind) const;

  /// Runs a forward and returns the attention weights of one layer.
  std::vector<double> last_attention(const ModelInput& x, std::size_t layer, AttentionKind kind) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b, qkv_w, qkv_b, out_w, out_b, ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };

  PredictorOutput run_impl(const ModelInput& x, AttentionKind kind, std::size_t probe_layer,
                           std::vector<double>* probe) const;

  PredictorConfig config_;
  EmbeddingTables tables_;
  std::vector<Block> blocks_;
  Tensor final_g_, final_b_, head_w_, head_b_, rtd_w_, rtd_b_;
  ParamList params_;
};

/// Exact trainable-parameter count for a configuration.
std::uint64_t count_params(const PredictorConfig& config);

/// Accompaniment input for teacher-forced AR training: row i carries A[i-1],
/// row 0 carries the mask id as a start token.
TokenSeq ar_shift(std::span<const int> accomp, const Vocab& vocab);

/// Copies `from` into `to`, whose acc_first flag must be the opposite, with
/// the residual feature axis rotated by D/2 so both compute the same function.
void mirror_track_halves(const Predictor& from, Predictor& to);

}  // namespace dualmask
