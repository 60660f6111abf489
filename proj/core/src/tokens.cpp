#include "dualmask/tokens.hpp"

#include <string>

#include "dualmask/tensor.hpp"

namespace dualmask {

std::size_t nonpad_length(std::span<const int> seq, int pad_id) {
  std::size_t n = seq.size();
  while (n > 0 && seq[n - 1] == pad_id) --n;
  return n;
}

void validate_clean_accomp(std::span<const int> seq, const Vocab& vocab) {
  const std::size_t n = nonpad_length(seq, vocab.acc_pad());
  for (std::size_t i = 0; i < n; ++i) {
    if (seq[i] < 0 || seq[i] >= vocab.acc_size) {
      throw ContractError("clean accompaniment has id " + std::to_string(seq[i]) + " at position " +
                          std::to_string(i) + " (specials and pads must not appear before the pad suffix)");
    }
  }
}

}  // namespace dualmask
