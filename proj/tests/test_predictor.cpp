#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "dualmask/corruption.hpp"
#include "dualmask/predictor.hpp"
#include "dualmask/trainer.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

namespace dualmask {
namespace {

using testing::random_tokens;
using testing::randomize;
using testing::tiny_config;

PredictorOutput run_one(const Predictor& m, const TokenSeq& v, const TokenSeq& a, const ConditionPrefix& prefix,
                        AttentionKind kind = AttentionKind::bidirectional) {
  const Example ex[] = {{v, a, prefix}};
  return m.run(m.encode(ex), kind);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + static_cast<long>(r * t.cols()), t.data().begin() + static_cast<long>((r + 1) * t.cols())};
}

TEST(Predictor, FullModelGradientCheck) {
  const auto start = std::chrono::steady_clock::now();
  Predictor model(tiny_config(16, 1, 8));
  randomize(model, 21);
  Rng rng(5);
  const TokenSeq v{0, 3, 4, 6, 0, 9};
  const TokenSeq clean{50, 13, 26, 40, 49, 5};
  const TokenSeq ref{7, 19, 33};
  auto rec = mask_forward(clean, 0.5, model.config().vocab, rng);
  Flags eligible(6);
  for (std::size_t i = 0; i < 6; ++i) eligible[i] = rec.mask_set[i] ? 0 : 1;
  auto rtd = rtd_corrupt(rec.corrupted, nullptr, {.rho = 0.4}, model.config().vocab, rng, &eligible);
  rtd.t = rec.t;
  ASSERT_GT(std::count(rtd.mask_set.begin(), rtd.mask_set.end(), 1), 0);

  auto loss_fn = [&] {
    Rng r(0);
    const auto prefix = model.prefix(1, std::span<const int>(ref), 0.0, false, r);
    const auto out = run_one(model, v, rtd.corrupted, prefix);
    return add(cml_loss(out.logits, clean, rtd, model.config().vocab),
               scale(rtd_loss(out.rtd_logits, rtd, model.config().vocab), 0.2));
  };
  std::vector<Tensor> inputs;
  for (const auto& p : model.params()) inputs.push_back(p.tensor);
  EXPECT_LT(testing::max_grad_error(loss_fn, inputs), 1e-4);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 30.0);
}

TEST(Predictor, FreshModelOutputsFiniteAndProbabilitiesInside) {
  Predictor model(tiny_config(32, 2, 32));
  Rng rng(1);
  const TokenSeq v = random_tokens(20, 16, rng);
  TokenSeq a = random_tokens(20, 64, rng);
  a[3] = 64;
  const auto out = run_one(model, v, a, model.null_prefix());
  ASSERT_EQ(out.logits.shape(), (Shape{20, 64}));
  for (double x : out.logits.data()) EXPECT_TRUE(std::isfinite(x));
  for (double p : out.rtd_prob()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Predictor, RtdProbabilityClampedForHugeScores) {
  Predictor model(tiny_config());
  randomize(model, 4, 50.0);
  Rng rng(2);
  const auto out = run_one(model, random_tokens(6, 16, rng), random_tokens(6, 64, rng), model.null_prefix());
  for (double p : out.rtd_prob()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Predictor, BidirectionalPerturbationReachesEarlierPositions) {
  Predictor model(tiny_config(32, 2, 16));
  randomize(model, 8, 0.2);
  Rng rng(3);
  const TokenSeq v = random_tokens(12, 16, rng);
  TokenSeq a = random_tokens(12, 64, rng);
  const auto base = run_one(model, v, a, model.null_prefix());
  a[10] = (a[10] + 1) % 64;
  const auto moved = run_one(model, v, a, model.null_prefix());
  EXPECT_NE(row(base.logits, 1), row(moved.logits, 1));
}

TEST(Predictor, CausalForwardIgnoresFuturePositions) {
  Predictor model(tiny_config(32, 2, 16));
  randomize(model, 9, 0.2);
  Rng rng(4);
  const TokenSeq v = random_tokens(12, 16, rng);
  const TokenSeq a = random_tokens(12, 64, rng);
  const auto base = run_one(model, v, a, model.null_prefix(), AttentionKind::causal);
  for (std::size_t j = 1; j < 12; ++j) {
    TokenSeq v2 = v, a2 = a;
    v2[j] = (v2[j] + 5) % 16;
    a2[j] = (a2[j] + 7) % 64;
    const auto moved = run_one(model, v2, a2, model.null_prefix(), AttentionKind::causal);
    for (std::size_t i = 0; i < j; ++i) ASSERT_EQ(row(base.logits, i), row(moved.logits, i)) << "i=" << i << " j=" << j;
    EXPECT_NE(row(base.logits, j), row(moved.logits, j));
  }
}

TEST(Predictor, CausalPrefixIsVisibleEverywhere) {
  Predictor model(tiny_config(32, 1, 16));
  randomize(model, 10, 0.2);
  Rng rng(5);
  const TokenSeq v = random_tokens(8, 16, rng);
  const TokenSeq a = random_tokens(8, 64, rng);
  Rng r(0);
  const auto s0 = model.prefix(0, std::nullopt, 0.0, false, r);
  const auto s1 = model.prefix(1, std::nullopt, 0.0, false, r);
  const auto x = run_one(model, v, a, s0, AttentionKind::causal);
  const auto y = run_one(model, v, a, s1, AttentionKind::causal);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NE(row(x.logits, i), row(y.logits, i));
}

TEST(Predictor, DroppedConditionsMakeOutputIndependentOfThem) {
  Predictor model(tiny_config(32, 1, 16));
  randomize(model, 11, 0.2);
  Rng rng(6);
  const TokenSeq v = random_tokens(8, 16, rng);
  const TokenSeq a = random_tokens(8, 64, rng);
  const TokenSeq ref{1, 2, 3};
  Rng r(0);
  const auto dropped = model.prefix(3, std::span<const int>(ref), 1.0, true, r);
  const auto out1 = run_one(model, v, a, dropped);
  const auto out2 = run_one(model, v, a, model.null_prefix());
  EXPECT_EQ(row(out1.logits, 5), row(out2.logits, 5));
  EXPECT_EQ(out1.rtd_prob(), out2.rtd_prob());
}

TEST(Predictor, VocalTableReceivesGradient) {
  Predictor model(tiny_config(16, 1, 16));
  randomize(model, 12, 0.2);
  const TokenSeq v{0, 4, 5, 6, 0, 2};
  const TokenSeq clean{50, 13, 26, 40, 49, 5};
  CorruptionRecord rec;
  rec.corrupted = TokenSeq(6, 64);
  rec.mask_set = Flags(6, 1);
  rec.rtd_labels = Flags(6, 1);
  rec.t = 1.0;
  for (auto& p : model.params()) p.tensor.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    backward(cml_loss(run_one(model, v, rec.corrupted, model.null_prefix()).logits, clean, rec, model.config().vocab));
  }
  const auto g = model.tables().voc.grad();
  for (int id : {4, 5, 6, 2}) {
    double mx = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mx = std::max(mx, std::abs(g[static_cast<std::size_t>(id) * 8 + c]));
    EXPECT_GT(mx, 0.0) << "vocal id " << id;
  }
}

TEST(Predictor, LengthOverflowRejected) {
  Predictor model(tiny_config(16, 1, 8));
  const TokenSeq v(9, 1);
  const TokenSeq a(9, 1);
  const Example ex[] = {{v, a, model.null_prefix()}};
  EXPECT_THROW(model.encode(ex), ContractError);
  const Example shifted[] = {{std::span<const int>(v).first(4), std::span<const int>(a).first(4), model.null_prefix(), 5}};
  EXPECT_THROW(model.encode(shifted), ContractError);
}

TEST(CountParams, EmbeddingOnlyClosedForm) {
  auto c = tiny_config(32, 0, 16);
  const std::uint64_t d = 32, w = 16, k = 64;
  const std::uint64_t expected = 17 * w + 66 * w             // token tables
                                 + (2 + 16) * d + 4 * d + 2 * d  // positions, styles, null rows
                                 + (w * d + d)                   // reference projection
                                 + 2 * d + (d * k + k) + (d + 1);  // final norm and both heads
  EXPECT_EQ(count_params(c), expected);
  Predictor model(c);
  std::uint64_t actual = 0;
  for (const auto& p : model.params()) actual += p.tensor.numel();
  EXPECT_EQ(actual, expected);
}

TEST(CountParams, BlockParamsScaleWithLayers) {
  const auto base = count_params(tiny_config(32, 0));
  const auto one = count_params(tiny_config(32, 1));
  const auto two = count_params(tiny_config(32, 2));
  const auto four = count_params(tiny_config(32, 4));
  EXPECT_EQ(two - base, 2 * (one - base));
  EXPECT_EQ(four - base, 2 * (two - base));
}

TEST(CountParams, DeskDefaultInRange) {
  const auto n = count_params(PredictorConfig{});
  EXPECT_GE(n, 300000u);
  EXPECT_LE(n, 1000000u);
  Predictor model(PredictorConfig{});
  std::uint64_t actual = 0;
  for (const auto& p : model.params()) actual += p.tensor.numel();
  EXPECT_EQ(actual, n);
}

TEST(MirrorTracks, SwappedHalvesComputeSameFunction) {
  auto ca = tiny_config(16, 2, 16);
  auto cb = ca;
  cb.acc_first = true;
  Predictor a(ca), b(cb);
  randomize(a, 13, 0.3);
  mirror_track_halves(a, b);
  Rng rng(7);
  const TokenSeq v = random_tokens(10, 16, rng);
  const TokenSeq acc = random_tokens(10, 65, rng);
  const TokenSeq ref{3, 4, 5};
  Rng r1(0), r2(0);
  const auto xa = run_one(a, v, acc, a.prefix(2, std::span<const int>(ref), 0.0, false, r1));
  const auto xb = run_one(b, v, acc, b.prefix(2, std::span<const int>(ref), 0.0, false, r2));
  for (std::size_t i = 0; i < xa.logits.numel(); ++i) EXPECT_NEAR(xa.logits.data()[i], xb.logits.data()[i], 1e-10);
  for (std::size_t i = 0; i < xa.rtd_logits.numel(); ++i) {
    EXPECT_NEAR(xa.rtd_logits.data()[i], xb.rtd_logits.data()[i], 1e-10);
  }
}

TEST(MirrorTracks, MirroredTrainingFollowsSameLossTrajectory) {
  auto ca = tiny_config(16, 1, 16);
  auto cb = ca;
  cb.acc_first = true;
  Predictor a(ca), b(cb);
  randomize(a, 14, 0.1);
  mirror_track_halves(a, b);
  TrainConfig tc;
  tc.batch = 4;
  tc.seed = 5;
  Trainer ta(a, tc), tb(b, tc);
  const StageSpec stage{1, 12, 5, {1e-2, 0, 5}, false, 0};
  for (std::int64_t s = 0; s < 5; ++s) {
    const auto items = draw_batch(SynthConfig{}, stage, 4, 4, 3, s);
    const auto la = ta.train_step(items, stage.lr);
    const auto lb = tb.train_step(items, stage.lr);
    EXPECT_NEAR(la.loss.total, lb.loss.total, 1e-9 * std::max(1.0, std::abs(la.loss.total))) << "step " << s;
  }
}

TEST(ArShift, StartTokenThenPrevious) {
  const TokenSeq a{5, 6, 7};
  EXPECT_EQ(ar_shift(a, Vocab{}), (TokenSeq{64, 5, 6}));
}

}  // namespace
}  // namespace dualmask
