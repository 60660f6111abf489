#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dualmask/random.hpp"
#include "dualmask/sampler.hpp"

namespace dualmask::testing {

inline const Vocab kTinyVocab{4, 3};

// T = 2, K_acc = 3. Row i's logits depend only on the state of the other
// position: masked, or one of the three committed ids.
class TabulatedModel : public LogitModel {
 public:
  // table[other_state][token], other_state 3 = masked.
  std::array<std::array<std::array<double, 3>, 4>, 2> table{};

  const Vocab& vocab() const override { return kTinyVocab; }

 protected:
  std::vector<LogitTable> compute(std::span<const Query> queries) override {
    std::vector<LogitTable> out;
    for (const auto& q : queries) {
      LogitTable t(2, 3);
      for (std::size_t i = 0; i < 2; ++i) {
        const int other = q.accomp[1 - i];
        const auto s = static_cast<std::size_t>(other == kTinyVocab.acc_mask() ? 3 : other);
        for (std::size_t k = 0; k < 3; ++k) t.row(i)[k] = table[i][s][k];
      }
      out.push_back(std::move(t));
    }
    return out;
  }
};

inline std::array<double, 3> softmax3(const std::array<double, 3>& l) {
  const double m = std::max({l[0], l[1], l[2]});
  std::array<double, 3> p{};
  double z = 0.0;
  for (std::size_t k = 0; k < 3; ++k) z += (p[k] = std::exp(l[k] - m));
  for (auto& x : p) x /= z;
  return p;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Exact output law of the two-step reverse process with one position kept
// after the first step. The kept position wins the Gumbel-perturbed ranking
// log c_i + tau g_i; the difference of two Gumbels is logistic.
inline std::array<double, 9> enumerate_two_step(const TabulatedModel& m, double tau) {
  std::array<double, 9> law{};
  const auto p0 = softmax3(m.table[0][3]);
  const auto p1 = softmax3(m.table[1][3]);
  const double c0 = *std::max_element(p0.begin(), p0.end());
  const double c1 = *std::max_element(p1.begin(), p1.end());
  const double keep0 = tau > 0 ? logistic((std::log(c0) - std::log(c1)) / tau) : (c0 > c1 ? 1.0 : 0.0);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      const double via0 = p0[a] * softmax3(m.table[1][a])[b];
      const double via1 = p1[b] * softmax3(m.table[0][b])[a];
      law[a * 3 + b] = keep0 * via0 + (1.0 - keep0) * via1;
    }
  }
  return law;
}

inline TabulatedModel make_table() {
  TabulatedModel m;
  Rng rng(2024);
  for (auto& pos : m.table) {
    for (auto& st : pos) {
      for (auto& v : st) v = 1.5 * normal(rng);
    }
  }
  return m;
}

// Logits from a hash of (position, current tokens): exercises the sampler
// without a network.
class HashModel : public LogitModel {
 public:
  explicit HashModel(Vocab v) : vocab_(v) {}
  const Vocab& vocab() const override { return vocab_; }

 protected:
  std::vector<LogitTable> compute(std::span<const Query> queries) override {
    std::vector<LogitTable> out;
    for (const auto& q : queries) {
      std::uint64_t h = 1469598103934665603ULL;
      for (int a : q.accomp) h = mix_seed(h, static_cast<std::uint64_t>(a));
      Rng rng(h);
      LogitTable t(q.accomp.size(), static_cast<std::size_t>(vocab_.acc_size));
      for (auto& x : t.values) x = 2.0 * normal(rng);
      out.push_back(std::move(t));
    }
    return out;
  }

 private:
  Vocab vocab_;
};

}  // namespace dualmask::testing
