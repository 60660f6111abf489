#include "dualmask/reprdual.hpp"

#include <string>

namespace dualmask {

DualEmbedding embed_dual(std::span<const int> vocal, std::span<const int> accomp, const EmbeddingTables& tables,
                         Layout layout, bool acc_first) {
  if (vocal.size() != accomp.size()) {
    throw ContractError("embed_dual: vocal length " + std::to_string(vocal.size()) + " != accompaniment length " +
                        std::to_string(accomp.size()));
  }
  DualEmbedding out;
  out.e_voc = embedding(tables.voc, vocal);
  out.e_acc = embedding(tables.acc, accomp);
  if (layout == Layout::dual) {
    out.e_dual = acc_first ? concat_cols(out.e_acc, out.e_voc) : concat_cols(out.e_voc, out.e_acc);
  }
  return out;
}

ConditionPrefix build_prefix(const EmbeddingTables& tables, std::optional<int> style,
                             std::optional<std::span<const int>> reference, double dropout_p, bool training,
                             Rng& rng) {
  if (!(dropout_p >= 0.0 && dropout_p <= 1.0)) throw ContractError("build_prefix: dropout_p must lie in [0, 1]");
  ConditionPrefix p;
  if (training) {
    p.dropped_style = uniform01(rng) < dropout_p;
    p.dropped_reference = uniform01(rng) < dropout_p;
  }
  p.dropped_style = p.dropped_style || !style.has_value();
  p.dropped_reference = p.dropped_reference || !reference.has_value() || reference->empty();

  Tensor style_row = tables.null_style;
  if (!p.dropped_style) {
    const int id = *style;
    style_row = embedding(tables.style, std::span<const int>(&id, 1));
  }
  Tensor ref_row = tables.null_ref;
  if (!p.dropped_reference) {
    ref_row = linear(mean_rows(embedding(tables.acc, *reference)), tables.ref_proj_w, tables.ref_proj_b);
  }
  const Tensor parts[] = {style_row, ref_row};
  p.rows = concat_rows(parts);
  return p;
}

namespace {

void check_prefixes(std::span<const ConditionPrefix> prefixes, std::size_t n_items, std::size_t width) {
  if (prefixes.size() != n_items || n_items == 0) throw ContractError("build_input: need one prefix per item");
  for (const auto& p : prefixes) {
    if (p.rows.rows() != kPrefixLen || p.rows.cols() != width) {
      throw DimensionError("build_input: prefix " + shape_string(p.rows.shape()) + " does not match width " +
                           std::to_string(width));
    }
  }
}

void check_offsets(std::span<const std::size_t> offsets, std::size_t n_items) {
  if (!offsets.empty() && offsets.size() != n_items) throw ContractError("build_input: need one offset per item");
}

}  // namespace

ModelInput build_input(std::span<const ConditionPrefix> prefixes, std::span<const DualEmbedding> duals,
                       std::span<const std::size_t> offsets) {
  if (duals.empty()) throw ContractError("build_input: empty batch");
  const std::size_t width = duals.front().e_dual.cols();
  const std::size_t t = duals.front().e_dual.rows();
  check_prefixes(prefixes, duals.size(), width);
  check_offsets(offsets, duals.size());
  std::vector<Tensor> parts;
  parts.reserve(2 * duals.size());
  for (std::size_t b = 0; b < duals.size(); ++b) {
    if (duals[b].e_dual.rows() != t || duals[b].e_dual.cols() != width) {
      throw DimensionError("build_input: batch items differ in shape");
    }
    parts.push_back(prefixes[b].rows);
    parts.push_back(duals[b].e_dual);
  }
  ModelInput in;
  in.x = concat_rows(parts);
  in.batch = duals.size();
  in.tokens = t;
  in.seq_len = kPrefixLen + t;
  in.acc_offset = kPrefixLen;
  in.positions.reserve(in.batch * in.seq_len);
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t base = offsets.empty() ? 0 : offsets[b];
    for (std::size_t i = 0; i < kPrefixLen; ++i) in.positions.push_back(static_cast<int>(i));
    for (std::size_t i = 0; i < t; ++i) in.positions.push_back(static_cast<int>(kPrefixLen + base + i));
  }
  return in;
}

ModelInput build_single_stream_input(std::span<const ConditionPrefix> prefixes,
                                     std::span<const DualEmbedding> tracks, std::span<const std::size_t> offsets) {
  if (tracks.empty()) throw ContractError("build_single_stream_input: empty batch");
  const std::size_t width = tracks.front().e_acc.cols();
  const std::size_t t = tracks.front().e_acc.rows();
  check_prefixes(prefixes, tracks.size(), width);
  check_offsets(offsets, tracks.size());
  std::vector<Tensor> parts;
  parts.reserve(3 * tracks.size());
  for (std::size_t b = 0; b < tracks.size(); ++b) {
    if (tracks[b].e_voc.cols() != width || tracks[b].e_voc.rows() != t || tracks[b].e_acc.rows() != t) {
      throw DimensionError("build_single_stream_input: batch items differ in shape");
    }
    parts.push_back(prefixes[b].rows);
    parts.push_back(tracks[b].e_voc);
    parts.push_back(tracks[b].e_acc);
  }
  ModelInput in;
  in.x = concat_rows(parts);
  in.batch = tracks.size();
  in.tokens = t;
  in.seq_len = kPrefixLen + 2 * t;
  in.acc_offset = kPrefixLen + t;
  for (std::size_t b = 0; b < in.batch; ++b) {
    const std::size_t base = offsets.empty() ? 0 : offsets[b];
    for (std::size_t i = 0; i < kPrefixLen; ++i) {
      in.positions.push_back(static_cast<int>(i));
      in.track_ids.push_back(0);
    }
    for (int track = 0; track < 2; ++track) {
      for (std::size_t i = 0; i < t; ++i) {
        in.positions.push_back(static_cast<int>(kPrefixLen + base + i));
        in.track_ids.push_back(track);
      }
    }
  }
  return in;
}

}  // namespace dualmask
