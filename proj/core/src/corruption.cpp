#include "dualmask/corruption.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace dualmask {

CorruptionRecord mask_forward(const TokenSeq& clean, double t, const Vocab& vocab, Rng& rng) {
  if (!(t > 0.0 && t <= 1.0)) throw ContractError("mask_forward: t must lie in (0, 1], got " + std::to_string(t));
  validate_clean_accomp(clean, vocab);
  const std::size_t n = nonpad_length(clean, vocab.acc_pad());
  CorruptionRecord rec;
  rec.t = t;
  rec.corrupted = clean;
  rec.mask_set.assign(clean.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (uniform01(rng) < t) {
      rec.corrupted[i] = vocab.acc_mask();
      rec.mask_set[i] = 1;
    }
  }
  return rec;
}

RtdMode parse_rtd_mode(std::string_view name) {
  if (name == "argmax") return RtdMode::argmax;
  if (name == "sample") return RtdMode::sample;
  throw ContractError("unknown rtd mode '" + std::string(name) + "' (expected argmax or sample)");
}

std::string_view to_string(RtdMode mode) { return mode == RtdMode::argmax ? "argmax" : "sample"; }

namespace {

int pick_replacement(int current, std::span<const double> logits, const RtdOptions& options, int k_acc, Rng& rng) {
  if (logits.empty()) {
    const int r = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(k_acc - 1)));
    return r >= current ? r + 1 : r;
  }
  if (options.mode == RtdMode::argmax) {
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < k_acc; ++k) {
      if (k == current) continue;
      if (best < 0 || logits[static_cast<std::size_t>(k)] > best_v) {
        best = k;
        best_v = logits[static_cast<std::size_t>(k)];
      }
    }
    return best;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < k_acc; ++k) {
    if (k != current) mx = std::max(mx, logits[static_cast<std::size_t>(k)] / options.temperature);
  }
  std::vector<double> w(static_cast<std::size_t>(k_acc), 0.0);
  double total = 0.0;
  for (int k = 0; k < k_acc; ++k) {
    if (k == current) continue;
    w[static_cast<std::size_t>(k)] = std::exp(logits[static_cast<std::size_t>(k)] / options.temperature - mx);
    total += w[static_cast<std::size_t>(k)];
  }
  double u = uniform01(rng) * total;
  int last = -1;
  for (int k = 0; k < k_acc; ++k) {
    if (k == current) continue;
    last = k;
    u -= w[static_cast<std::size_t>(k)];
    if (u < 0.0) return k;
  }
  return last;
}

}  // namespace

CorruptionRecord rtd_corrupt(const TokenSeq& seq, const LogitTable* replacement_logits, const RtdOptions& options,
                             const Vocab& vocab, Rng& rng, const Flags* eligible) {
  if (!(options.rho >= 0.0 && options.rho < 1.0)) throw ContractError("rtd_corrupt: rho must lie in [0, 1)");
  if (options.mode == RtdMode::sample && !(options.temperature > 0.0)) {
    throw ContractError("rtd_corrupt: temperature must be positive");
  }
  if (eligible && eligible->size() != seq.size()) throw ContractError("rtd_corrupt: eligible flags length mismatch");
  if (replacement_logits &&
      (replacement_logits->rows != seq.size() || replacement_logits->cols < static_cast<std::size_t>(vocab.acc_size))) {
    throw ContractError("rtd_corrupt: replacement logits must be [T x >=K_acc]");
  }
  const std::size_t n_nonpad = nonpad_length(seq, vocab.acc_pad());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < n_nonpad; ++i) {
    if (seq[i] == vocab.acc_pad()) throw ContractError("rtd_corrupt: pad inside the non-pad region");
    const bool ok = eligible ? (*eligible)[i] != 0 : seq[i] != vocab.acc_mask();
    if (ok && seq[i] == vocab.acc_mask()) throw ContractError("rtd_corrupt: masked position marked eligible");
    if (ok) candidates.push_back(i);
  }
  const auto count = static_cast<std::size_t>(std::floor(options.rho * static_cast<double>(candidates.size())));
  if (count >= n_nonpad && count > 0) throw ContractError("rtd_corrupt: rho * T must stay below T_nonpad");

  CorruptionRecord rec;
  rec.corrupted = seq;
  rec.mask_set.assign(seq.size(), 0);
  for (std::size_t i = 0; i < seq.size(); ++i) rec.mask_set[i] = seq[i] == vocab.acc_mask() ? 1 : 0;
  Flags labels(seq.size(), 1);

  // Partial Fisher-Yates: the first `count` slots become the chosen set.
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t r = j + uniform_index(rng, candidates.size() - j);
    std::swap(candidates[j], candidates[r]);
    const std::size_t pos = candidates[j];
    const std::span<const double> row = replacement_logits ? replacement_logits->row(pos) : std::span<const double>{};
    rec.corrupted[pos] = pick_replacement(seq[pos], row, options, vocab.acc_size, rng);
    labels[pos] = 0;
  }
  rec.rtd_labels = std::move(labels);
  return rec;
}

}  // namespace dualmask
