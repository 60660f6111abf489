#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualmask/tensor.hpp"

namespace dualmask {

/// A trainable leaf tensor with a stable name (used by checkpoints and error
/// reports).
struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

void zero_grads(ParamList& params);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Raised when a step is refused (non-finite gradients); parameters and
/// optimizer state are left untouched.
class OptimizerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// AdamW with decoupled weight decay and bias correction.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Applies one update using each parameter's accumulated gradient at the
  /// given learning rate. Parameters without gradients are treated as having
  /// zero gradient.
  void step(ParamList& params, double lr);
  void step(ParamList& params) { step(params, config_.lr); }

  std::uint64_t step_count() const { return step_count_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Scales all gradients by max_norm / norm when their global L2 norm exceeds
/// max_norm. Returns the norm measured before clipping.
double clip_grad_norm(ParamList& params, double max_norm = 1.0);

/// Global L2 norm of the accumulated gradients.
double grad_norm(const ParamList& params);

}  // namespace dualmask
