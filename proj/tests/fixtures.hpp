#pragma once

#include <vector>

#include "dualmask/predictor.hpp"
#include "dualmask/random.hpp"

namespace dualmask::testing {

inline PredictorConfig tiny_config(int dim = 16, int layers = 1, std::size_t max_len = 16) {
  PredictorConfig c;
  c.dim = dim;
  c.layers = layers;
  c.heads = 2;
  c.ffn_mult = 2;
  c.max_len = max_len;
  c.seed = 3;
  return c;
}

/// Overwrites every parameter with N(0, scale^2) so zero-initialized heads
/// and biases take part in gradient checks.
inline void randomize(Predictor& model, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& p : model.params()) {
    for (auto& v : p.tensor.mutable_data()) v = scale * normal(rng);
  }
}

inline TokenSeq random_tokens(std::size_t n, int hi, Rng& rng) {
  TokenSeq s(n);
  for (auto& v : s) v = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi)));
  return s;
}

}  // namespace dualmask::testing
