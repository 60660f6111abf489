#include "dualmask/optim.hpp"

#include <cmath>

namespace dualmask {

void zero_grads(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void AdamW::step(ParamList& params, double lr) {
  // Validate before touching anything so a rejected step leaves no trace.
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.impl()->grad) {
      if (!std::isfinite(g)) throw OptimizerError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), 0.0);
      v_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("AdamW: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m_[i].size() != params[i].tensor.numel()) {
      throw DimensionError("AdamW: moment shape mismatch for parameter '" + params[i].name + "'");
    }
  }

  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    auto data = tensor.mutable_data();
    const auto& grad = tensor.impl()->grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      data[j] -= lr * (m_hat / (std::sqrt(v_hat) + config_.eps) + config_.weight_decay * data[j]);
    }
  }
}

double grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.tensor.impl()->grad) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(ParamList& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be positive");
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.tensor.impl()->grad) g *= factor;
    }
  }
  return norm;
}

}  // namespace dualmask
