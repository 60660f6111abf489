#include <gtest/gtest.h>

#include <cmath>

#include "dualmask/predictor.hpp"
#include "dualmask/reprdual.hpp"
#include "fixtures.hpp"

namespace dualmask {
namespace {

using testing::random_tokens;
using testing::tiny_config;

TEST(EmbedDual, ShapeAndFeatureConcat) {
  Predictor model(tiny_config(64, 1));
  Rng rng(1);
  const TokenSeq v = random_tokens(10, 16, rng);
  const TokenSeq a = random_tokens(10, 66, rng);
  const auto e = embed_dual(v, a, model.tables());
  ASSERT_EQ(e.e_dual.shape(), (Shape{10, 64}));
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t c = 0; c < 32; ++c) {
      EXPECT_EQ(e.e_dual.at(i, c), e.e_voc.at(i, c));
      EXPECT_EQ(e.e_dual.at(i, 32 + c), e.e_acc.at(i, c));
    }
  }
}

TEST(EmbedDual, AccompanimentFirstSwapsHalves) {
  Predictor model(tiny_config(16, 1));
  const TokenSeq v{1, 2, 3};
  const TokenSeq a{4, 5, 6};
  const auto e = embed_dual(v, a, model.tables(), Layout::dual, true);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(e.e_dual.at(1, c), e.e_acc.at(1, c));
}

TEST(EmbedDual, IdenticalTokensGiveIdenticalRows) {
  Predictor model(tiny_config(32, 1));
  const TokenSeq v{3, 7, 3, 0};
  const TokenSeq a{9, 1, 9, 64};
  const auto e = embed_dual(v, a, model.tables());
  for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(e.e_dual.at(0, c), e.e_dual.at(2, c));
}

TEST(EmbedDual, LengthMismatchAndRangeRejected) {
  Predictor model(tiny_config());
  const TokenSeq v{1, 2};
  const TokenSeq a{1};
  EXPECT_THROW(embed_dual(v, a, model.tables()), ContractError);
  const TokenSeq bad{1, 66};
  EXPECT_THROW(embed_dual(v, bad, model.tables()), ContractError);
}

TEST(EmbedDual, PaperScalePresetWidth) {
  const auto c = PredictorConfig::paper_scale();
  EXPECT_EQ(c.dim, 2048);
  EXPECT_NO_THROW(c.validate());
}

TEST(BuildPrefix, ZeroDropoutKeepsRealRows) {
  Predictor model(tiny_config());
  Rng rng(1);
  const TokenSeq ref{5, 6, 7};
  const auto p = build_prefix(model.tables(), 2, std::span<const int>(ref), 0.0, true, rng);
  EXPECT_FALSE(p.dropped_style);
  EXPECT_FALSE(p.dropped_reference);
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(p.rows.at(0, c), model.tables().style.at(2, c));
}

TEST(BuildPrefix, InferenceWithoutConditionsUsesNullRows) {
  Predictor model(tiny_config());
  Rng rng(1);
  const auto p = build_prefix(model.tables(), std::nullopt, std::nullopt, 0.5, false, rng);
  EXPECT_TRUE(p.dropped_style);
  EXPECT_TRUE(p.dropped_reference);
  ASSERT_EQ(p.rows.shape(), (Shape{2, 16}));
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ(p.rows.at(0, c), model.tables().null_style.at(0, c));
    EXPECT_EQ(p.rows.at(1, c), model.tables().null_ref.at(0, c));
  }
}

TEST(BuildPrefix, DropoutFlagsIndependentAtHalf) {
  Predictor model(tiny_config());
  Rng rng(2);
  const TokenSeq ref{5};
  constexpr int kTrials = 100000;
  double s = 0, r = 0, sr = 0;
  for (int k = 0; k < kTrials; ++k) {
    const auto p = build_prefix(model.tables(), 1, std::span<const int>(ref), 0.5, true, rng);
    s += p.dropped_style;
    r += p.dropped_reference;
    sr += p.dropped_style && p.dropped_reference;
  }
  const double n = kTrials;
  const double sigma = std::sqrt(n * 0.25);
  EXPECT_LE(std::abs(s - n / 2), 3 * sigma);
  EXPECT_LE(std::abs(r - n / 2), 3 * sigma);
  const double ms = s / n, mr = r / n;
  const double corr = (sr / n - ms * mr) / std::sqrt(ms * (1 - ms) * mr * (1 - mr));
  EXPECT_LT(std::abs(corr), 0.02);
}

TEST(BuildInput, PrefixRowsLeadTheSequence) {
  Predictor model(tiny_config());
  Rng rng(3);
  const TokenSeq v = random_tokens(10, 16, rng);
  const TokenSeq a = random_tokens(10, 64, rng);
  const ConditionPrefix prefixes[] = {model.null_prefix()};
  const DualEmbedding duals[] = {embed_dual(v, a, model.tables())};
  const auto in = build_input(prefixes, duals);
  ASSERT_EQ(in.x.shape(), (Shape{12, 16}));
  EXPECT_EQ(in.acc_offset, kPrefixLen);
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ(in.x.at(0, c), prefixes[0].rows.at(0, c));
    EXPECT_EQ(in.x.at(1, c), prefixes[0].rows.at(1, c));
    EXPECT_EQ(in.x.at(2, c), duals[0].e_dual.at(0, c));
  }
  EXPECT_EQ(in.positions.front(), 0);
  EXPECT_EQ(in.positions[2], static_cast<int>(kPrefixLen));
}

TEST(BuildInput, OffsetsShiftTokenPositionsOnly) {
  Predictor model(tiny_config());
  const TokenSeq v{1, 2, 3};
  const TokenSeq a{1, 2, 3};
  const ConditionPrefix prefixes[] = {model.null_prefix(), model.null_prefix()};
  const DualEmbedding duals[] = {embed_dual(v, a, model.tables()), embed_dual(v, a, model.tables())};
  const std::size_t offsets[] = {0, 7};
  const auto in = build_input(prefixes, duals, offsets);
  ASSERT_EQ(in.positions.size(), 10u);
  EXPECT_EQ((std::vector<int>(in.positions.begin(), in.positions.begin() + 5)), (std::vector<int>{0, 1, 2, 3, 4}));
  EXPECT_EQ((std::vector<int>(in.positions.begin() + 5, in.positions.end())), (std::vector<int>{0, 1, 9, 10, 11}));
}

TEST(BuildInput, WidthMismatchRejected) {
  Predictor wide(tiny_config(32));
  Predictor narrow(tiny_config(16));
  const TokenSeq v{1};
  const TokenSeq a{1};
  const ConditionPrefix prefixes[] = {wide.null_prefix()};
  const DualEmbedding duals[] = {embed_dual(v, a, narrow.tables())};
  EXPECT_THROW(build_input(prefixes, duals), DimensionError);
}

TEST(SingleStream, VocalRowsPrecedeAccompanimentRows) {
  auto cfg = tiny_config();
  cfg.layout = Layout::single_stream;
  Predictor model(cfg);
  const TokenSeq v{1, 2, 3, 4};
  const TokenSeq a{5, 6, 7, 8};
  const ConditionPrefix prefixes[] = {model.null_prefix()};
  const DualEmbedding tracks[] = {embed_dual(v, a, model.tables(), Layout::single_stream)};
  const auto in = build_single_stream_input(prefixes, tracks);
  ASSERT_EQ(in.x.shape(), (Shape{10, 16}));
  EXPECT_EQ(in.acc_offset, kPrefixLen + 4);
  EXPECT_EQ(in.positions[2], in.positions[6]);
  EXPECT_EQ(in.track_ids[2], 0);
  EXPECT_EQ(in.track_ids[6], 1);
}

}  // namespace
}  // namespace dualmask
