#pragma once

#include <optional>
#include <string_view>

#include "dualmask/random.hpp"
#include "dualmask/tensor.hpp"
#include "dualmask/tokens.hpp"

namespace dualmask {

struct CorruptionRecord {
  TokenSeq corrupted;
  Flags mask_set;                   // 1 where corrupted == mask id
  std::optional<Flags> rtd_labels;  // 1 where the token is the clean one
  double t = 0.0;
};

/// Replaces every non-pad position by the mask id independently with
/// probability t in (0, 1].
CorruptionRecord mask_forward(const TokenSeq& clean, double t, const Vocab& vocab, Rng& rng);

enum class RtdMode { argmax, sample };

RtdMode parse_rtd_mode(std::string_view name);
std::string_view to_string(RtdMode mode);

struct RtdOptions {
  double rho = 0.15;
  RtdMode mode = RtdMode::argmax;
  double temperature = 1.0;
};

/// Replaces exactly floor(rho * n) of the n eligible positions, chosen
/// uniformly without replacement, by a real accompaniment id that differs
/// from the token already there.
///
/// `replacement_logits` (rows = sequence length, cols >= acc_size, detached)
/// supplies the proposal; null means uniform over the other real ids.
/// `eligible` restricts the candidates; by default every non-pad position.
/// Mask ids present in `seq` are kept and reflected in mask_set.
CorruptionRecord rtd_corrupt(const TokenSeq& seq, const LogitTable* replacement_logits, const RtdOptions& options,
                             const Vocab& vocab, Rng& rng, const Flags* eligible = nullptr);

}  // namespace dualmask
