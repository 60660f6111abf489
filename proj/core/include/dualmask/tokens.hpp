#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dualmask {

using TokenSeq = std::vector<int>;

/// Vocabulary layout shared by every module. Real accompaniment ids are
/// [0, acc_size); the two specials follow. Vocal ids are [0, voc_size) with
/// a pad id at voc_size.
struct Vocab {
  int voc_size = 16;
  int acc_size = 64;

  int acc_mask() const { return acc_size; }
  int acc_pad() const { return acc_size + 1; }
  int voc_pad() const { return voc_size; }
  int acc_table_rows() const { return acc_size + 2; }
  int voc_table_rows() const { return voc_size + 1; }
  bool is_acc_special(int id) const { return id >= acc_size; }
};

/// Number of positions before the pad suffix.
std::size_t nonpad_length(std::span<const int> seq, int pad_id);

/// Checks the pad-suffix invariant and id ranges of a clean accompaniment
/// sequence; throws ContractError on violation.
void validate_clean_accomp(std::span<const int> seq, const Vocab& vocab);

/// A logits matrix [rows x cols] in row-major order.
struct LogitTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  LogitTable() = default;
  LogitTable(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
};

}  // namespace dualmask
