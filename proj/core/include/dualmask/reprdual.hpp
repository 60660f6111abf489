#pragma once

#include <optional>
#include <span>

#include "dualmask/random.hpp"
#include "dualmask/tensor.hpp"
#include "dualmask/tokens.hpp"

namespace dualmask {

/// Number of condition rows prepended to every sequence (style, reference).
inline constexpr std::size_t kPrefixLen = 2;

enum class Layout {
  dual,           // vocal and accompaniment share a row, split across features
  single_stream,  // vocal rows precede accompaniment rows, each full width
};

/// Learned lookup tables feeding the backbone. In the dual layout the two
/// token tables are D/2 wide; in the single-stream layout they are D wide.
struct EmbeddingTables {
  Tensor voc;         // (K_voc + 1) x W
  Tensor acc;         // (K_acc + 2) x W
  Tensor pos;         // (P + max_len) x D
  Tensor style;       // S x D
  Tensor null_style;  // 1 x D
  Tensor null_ref;    // 1 x D
  Tensor ref_proj_w;  // W x D
  Tensor ref_proj_b;  // D
  Tensor track;       // 2 x D, single-stream only
};

struct DualEmbedding {
  Tensor e_voc;   // T x W
  Tensor e_acc;   // T x W
  Tensor e_dual;  // T x D (dual layout only)
};

/// Looks up both tracks. In the dual layout rows are concatenated along
/// features, vocal first unless `acc_first`.
DualEmbedding embed_dual(std::span<const int> vocal, std::span<const int> accomp, const EmbeddingTables& tables,
                         Layout layout = Layout::dual, bool acc_first = false);

struct ConditionPrefix {
  Tensor rows;  // 2 x D: style row, reference row
  bool dropped_style = false;
  bool dropped_reference = false;
};

/// Builds the two condition rows. During training each row is swapped for
/// its null embedding with probability `dropout_p` (two uniforms are always
/// drawn); absent conditions always map to the null rows. The reference row
/// is the projected mean accompaniment embedding of `reference`.
ConditionPrefix build_prefix(const EmbeddingTables& tables, std::optional<int> style,
                             std::optional<std::span<const int>> reference, double dropout_p, bool training, Rng& rng);

struct ModelInput {
  Tensor x;                      // batch * seq_len rows of width D
  std::size_t batch = 0;
  std::size_t seq_len = 0;       // rows per item
  std::size_t tokens = 0;        // T
  std::size_t acc_offset = 0;    // first accompaniment row within an item
  std::vector<int> positions;    // position-table row per input row
  std::vector<int> track_ids;    // single-stream only
};

/// Stacks prefix rows and dual rows per item along time: [P rows | T rows].
/// Token i of item b takes position row P + offsets[b] + i (offsets default
/// to 0), so a crop from inside a longer song keeps its song positions.
ModelInput build_input(std::span<const ConditionPrefix> prefixes, std::span<const DualEmbedding> duals,
                       std::span<const std::size_t> offsets = {});

/// Single-stream ablation input: [P rows | T vocal rows | T accompaniment rows].
ModelInput build_single_stream_input(std::span<const ConditionPrefix> prefixes,
                                     std::span<const DualEmbedding> tracks, std::span<const std::size_t> offsets = {});

}  // namespace dualmask
