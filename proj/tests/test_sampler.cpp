#include <gtest/gtest.h>

#include <array>
#include <chrono>
#include <cmath>
#include <map>

#include "dualmask/sampler.hpp"
#include "fixtures.hpp"
#include "sampler_models.hpp"

namespace dualmask {
namespace {

using testing::enumerate_two_step;
using testing::HashModel;
using testing::kTinyVocab;
using testing::make_table;
using testing::TabulatedModel;

class TwoStepLaw : public ::testing::TestWithParam<double> {};

TEST_P(TwoStepLaw, MatchesEnumeration) {
  const auto start = std::chrono::steady_clock::now();
  auto model = make_table();
  SamplerParams p;
  p.steps = 2;
  p.schedule.kind = ScheduleKind::linear;
  p.top_p = 1.0;
  p.mask_temperature = GetParam();
  const auto law = enumerate_two_step(model, p.mask_temperature);

  constexpr int kRuns = 100000;
  std::array<double, 9> counts{};
  const TokenSeq v{1, 2};
  for (int r = 0; r < kRuns; ++r) {
    p.seed = static_cast<std::uint64_t>(r);
    const auto out = generate(v, Condition::none(), model, p);
    counts[static_cast<std::size_t>(out[0] * 3 + out[1])] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t k = 0; k < 9; ++k) tv += 0.5 * std::abs(counts[k] / kRuns - law[k]);
  EXPECT_LT(tv, 0.02);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 120.0);
}

INSTANTIATE_TEST_SUITE_P(MaskTemperatures, TwoStepLaw, ::testing::Values(10.5, 0.5));

TEST(ReverseStep, LowestConfidenceIsRemasked) {
  SamplerState s;
  s.nonpad = 3;
  s.tokens.assign(3, kTinyVocab.acc_mask());
  s.committed.assign(3, 0);
  s.confidence.assign(3, 0.0);
  s.trajectory = {1.0, 1.0 / 3.0, 0.0};
  LogitTable logits(3, 3);
  const double conf[] = {0.9, 0.5, 0.7};
  for (std::size_t i = 0; i < 3; ++i) {
    logits.row(i)[0] = std::log(conf[i]);
    logits.row(i)[1] = std::log((1 - conf[i]) / 2);
    logits.row(i)[2] = std::log((1 - conf[i]) / 2);
  }
  SamplerParams p;
  p.mask_temperature = 0.0;
  Rng rng(1);
  reverse_step(s, logits, p, kTinyVocab, rng);
  EXPECT_EQ(s.tokens[1], kTinyVocab.acc_mask());
  EXPECT_NE(s.tokens[0], kTinyVocab.acc_mask());
  EXPECT_NE(s.tokens[2], kTinyVocab.acc_mask());
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(s.confidence[i], conf[i], 1e-12);
}

TEST(ReverseStep, EqualConfidenceRemasksLowerIndex) {
  SamplerState s;
  s.nonpad = 2;
  s.tokens.assign(2, kTinyVocab.acc_mask());
  s.committed.assign(2, 0);
  s.confidence.assign(2, 0.0);
  s.trajectory = {1.0, 0.5, 0.0};
  LogitTable logits(2, 3);
  SamplerParams p;
  p.mask_temperature = 0.0;
  Rng rng(1);
  reverse_step(s, logits, p, kTinyVocab, rng);
  EXPECT_EQ(s.tokens[0], kTinyVocab.acc_mask());
  EXPECT_NE(s.tokens[1], kTinyVocab.acc_mask());
}

TEST(RemaskCount, CeilingWithExactProducts) {
  EXPECT_EQ(remask_count(0.5, 4), 2u);
  EXPECT_EQ(remask_count(0.51, 4), 3u);
  EXPECT_EQ(remask_count(1e-3, 64), 1u);
  EXPECT_EQ(remask_count(0.0, 64), 0u);
  EXPECT_EQ(remask_count(1.0, 7), 7u);
}

TEST(FilteredDistribution, HandExamples) {
  const double l[] = {2.0, 1.0, 0.0};
  const auto full = filtered_distribution(l, 1.0, 100, 1.0);
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  EXPECT_NEAR(full[0], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(full[2], 1.0 / z, 1e-15);
  // 0.665 + 0.245 >= 0.9, so the third id is cut.
  const auto nucleus = filtered_distribution(l, 1.0, 100, 0.9);
  EXPECT_NEAR(nucleus[0], std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)), 1e-15);
  EXPECT_EQ(nucleus[2], 0.0);
  const auto top1 = filtered_distribution(l, 1.0, 1, 1.0);
  EXPECT_EQ(top1, (std::vector<double>{1.0, 0.0, 0.0}));
  const auto hot = filtered_distribution(l, 2.0, 100, 1.0);
  EXPECT_NEAR(hot[0] / hot[1], std::exp(0.5), 1e-12);
}

TEST(FilteredDistribution, TiesKeepLowerId) {
  const double l[] = {1.0, 3.0, 3.0, 0.0};
  EXPECT_EQ(filtered_distribution(l, 1.0, 1, 1.0), (std::vector<double>{0.0, 1.0, 0.0, 0.0}));
}


TEST(Generate, StructureForAllSchedulesAndStepCounts) {
  const Vocab vocab{16, 12};
  HashModel model(vocab);
  TokenSeq v{1, 2, 3, 0, 0, 5, 6, 7, 8, 9, 1, 2, 16, 16};  // two pad positions
  for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear, ScheduleKind::power}) {
    for (int n = 1; n <= 200; ++n) {
      SamplerParams p;
      p.steps = n;
      p.schedule.kind = kind;
      p.seed = static_cast<std::uint64_t>(n);
      std::size_t prev_masked = 12;
      std::map<std::size_t, int> committed;
      bool ok = true;
      model.reset_calls();
      const auto out = generate(v, Condition::none(), model, p, [&](std::size_t, const SamplerState& s) {
        const std::size_t m = s.masked_count(vocab);
        ok = ok && m <= prev_masked;
        prev_masked = m;
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
          if (!s.committed[i]) continue;
          auto [it, inserted] = committed.emplace(i, s.tokens[i]);
          ok = ok && it->second == s.tokens[i];
        }
      });
      ASSERT_TRUE(ok) << to_string(kind) << " N=" << n;
      ASSERT_EQ(prev_masked, 0u);
      ASSERT_EQ(out.size(), v.size());
      for (std::size_t i = 0; i < 12; ++i) {
        ASSERT_FALSE(vocab.is_acc_special(out[i]));
        ASSERT_EQ(committed.at(i), out[i]);
      }
      ASSERT_EQ(out[12], vocab.acc_pad());
      ASSERT_EQ(out[13], vocab.acc_pad());
      ASSERT_EQ(model.calls(), static_cast<std::size_t>(n));
    }
  }
}

TEST(Generate, SingleStepCommitsEverything) {
  HashModel model(Vocab{16, 12});
  SamplerParams p;
  p.steps = 1;
  std::size_t masked_after = 99;
  generate(TokenSeq{1, 2, 3, 4}, Condition::none(), model, p,
           [&](std::size_t, const SamplerState& s) { masked_after = s.masked_count(model.vocab()); });
  EXPECT_EQ(masked_after, 0u);
}

TEST(Generate, FixedSeedBitIdentical) {
  Predictor pm(testing::tiny_config(16, 1, 16));
  testing::randomize(pm, 3, 0.5);
  PredictorLogitModel model(pm);
  Rng rng(1);
  const TokenSeq v = testing::random_tokens(12, 16, rng);
  SamplerParams p;
  p.steps = 8;
  p.seed = 99;
  Condition c;
  c.style = 2;
  EXPECT_EQ(generate(v, c, model, p), generate(v, c, model, p));
}

TEST(Generate, BatchMatchesPerSong) {
  Predictor pm(testing::tiny_config(16, 1, 16));
  testing::randomize(pm, 4, 0.5);
  PredictorLogitModel model(pm);
  Rng rng(2);
  const std::vector<TokenSeq> vocals{testing::random_tokens(10, 16, rng), testing::random_tokens(10, 16, rng)};
  const std::vector<Condition> conds{Condition::none(), Condition{1, {3, 4, 5}}};
  const std::vector<std::uint64_t> seeds{5, 6};
  SamplerParams p;
  p.steps = 6;
  const auto batch = generate_batch(vocals, conds, model, p, seeds);
  for (std::size_t b = 0; b < 2; ++b) {
    p.seed = seeds[b];
    const auto single = generate(vocals[b], conds[b], model, p);
    EXPECT_EQ(batch[b], single);
  }
}

TEST(Guidance, UnitAndZeroAreSingleCalls) {
  Predictor pm(testing::tiny_config(16, 1, 16));
  testing::randomize(pm, 5, 0.5);
  PredictorLogitModel model(pm);
  const TokenSeq v{1, 2, 3, 4, 5};
  const TokenSeq a{64, 7, 64, 64, 9};
  const Condition cond{3, {1, 2}};
  const Condition none = Condition::none();
  const LogitModel::Query q[] = {{v, a, &cond}};
  const LogitModel::Query qn[] = {{v, a, &none}};

  model.reset_calls();
  const auto w1 = guided_logits(model, q, 1.0);
  EXPECT_EQ(model.calls(), 1u);
  EXPECT_EQ(w1[0].values, model.logits(q)[0].values);

  model.reset_calls();
  const auto w0 = guided_logits(model, q, 0.0);
  EXPECT_EQ(model.calls(), 1u);
  EXPECT_EQ(w0[0].values, model.logits(qn)[0].values);

  model.reset_calls();
  const auto w2 = guided_logits(model, q, 2.0);
  EXPECT_EQ(model.calls(), 2u);
  const auto c = model.logits(q)[0].values;
  const auto n = model.logits(qn)[0].values;
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(w2[0].values[i], n[i] + 2.0 * (c[i] - n[i]), 1e-12);
}

TEST(ArGenerate, GreedyIsDeterministicAndKeepsLength) {
  Predictor pm(testing::tiny_config(16, 1, 16));
  testing::randomize(pm, 6, 0.5);
  PredictorArModel model(pm);
  const TokenSeq v{1, 2, 3, 0, 4, 16, 16};
  ArParams p;
  p.temperature = 0.0;
  p.seed = 1;
  const auto a = ar_generate(v, Condition::none(), model, p);
  p.seed = 2;
  const auto b = ar_generate(v, Condition::none(), model, p);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), v.size());
  for (std::size_t i = 0; i < 5; ++i) EXPECT_FALSE(Vocab{}.is_acc_special(a[i]));
  EXPECT_EQ(a[5], Vocab{}.acc_pad());
  EXPECT_EQ(a[6], Vocab{}.acc_pad());
}

TEST(ArGenerate, OneCallPerPosition) {
  Predictor pm(testing::tiny_config(16, 1, 16));
  PredictorArModel model(pm);
  ArParams p;
  ar_generate(TokenSeq{1, 2, 3, 4, 5, 6}, Condition::none(), model, p);
  EXPECT_EQ(model.calls(), 6u);
}

TEST(SamplerParams, Validation) {
  SamplerParams p;
  p.steps = 0;
  EXPECT_THROW(p.validate(), ContractError);
  p = {};
  p.top_p = 0.0;
  EXPECT_THROW(p.validate(), ContractError);
  p = {};
  p.mask_temperature = -1;
  EXPECT_THROW(p.validate(), ContractError);
}

}  // namespace
}  // namespace dualmask
