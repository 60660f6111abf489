#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dualmask/random.hpp"
#include "dualmask/schedule.hpp"
#include "dualmask/tensor.hpp"

namespace dualmask {
namespace {

constexpr ScheduleKind kKinds[] = {ScheduleKind::cosine, ScheduleKind::linear, ScheduleKind::power};

// Exact one-dimensional star discrepancy of a point set.
double star_discrepancy(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - x[i], x[i] - static_cast<double>(i) / n});
  }
  return d;
}

TEST(Sobol, FirstFourDraws) {
  SobolState s;
  EXPECT_EQ(s.next(), 0.5);
  EXPECT_EQ(s.next(), 0.75);
  EXPECT_EQ(s.next(), 0.25);
  EXPECT_EQ(s.next(), 0.375);
  EXPECT_EQ(s.index(), 4u);
}

TEST(Sobol, DrawsStayInUnitInterval) {
  SobolState s;
  for (int i = 0; i < 10000; ++i) {
    const double r = s.next();
    ASSERT_GE(r, 0.0);
    ASSERT_LT(r, 1.0);
  }
}

TEST(Sobol, ResumedStateContinuesSequence) {
  SobolState a;
  for (int i = 0; i < 37; ++i) a.next();
  SobolState b(37);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Sobol, CoversEveryDyadicInterval) {
  SobolState s;
  std::vector<int> hits(64, 0);
  for (int i = 0; i < (1 << 14); ++i) ++hits[static_cast<std::size_t>(s.next() * 64.0)];
  for (int h : hits) EXPECT_GT(h, 0);
}

TEST(Sobol, LowerDiscrepancyThanPseudoRandom) {
  SobolState s;
  std::vector<double> q(1024);
  for (auto& v : q) v = s.next();
  const double d_sobol = star_discrepancy(q);

  std::vector<double> d_uniform;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> u(1024);
    for (auto& v : u) v = uniform01(rng);
    d_uniform.push_back(star_discrepancy(u));
  }
  std::nth_element(d_uniform.begin(), d_uniform.begin() + 10, d_uniform.end());
  EXPECT_LT(d_sobol, d_uniform[10]);
}

TEST(MaskRatio, Endpoints) {
  for (auto kind : kKinds) {
    MaskSchedule sched{kind};
    EXPECT_EQ(mask_ratio(0.0, sched), 1.0);
    EXPECT_EQ(mask_ratio(1.0, sched), 1e-3);
  }
}

TEST(MaskRatio, CosineMidpoint) {
  EXPECT_NEAR(mask_ratio(0.5, MaskSchedule{}), std::cos(std::numbers::pi / 4.0), 1e-15);
  EXPECT_NEAR(mask_ratio(0.5, MaskSchedule{}), 0.70711, 5e-6);
}

TEST(MaskRatio, LinearAndPowerFormulas) {
  EXPECT_DOUBLE_EQ(mask_ratio(0.25, MaskSchedule{ScheduleKind::linear}), 0.75);
  EXPECT_DOUBLE_EQ(mask_ratio(0.25, MaskSchedule{ScheduleKind::power}), 0.5625);
  EXPECT_DOUBLE_EQ(mask_ratio(0.5, MaskSchedule{ScheduleKind::power, 3.0}), 0.125);
}

TEST(MaskRatio, RejectsProgressOutsideUnitInterval) {
  EXPECT_THROW(mask_ratio(-0.01, MaskSchedule{}), ContractError);
  EXPECT_THROW(mask_ratio(1.01, MaskSchedule{}), ContractError);
}

TEST(MaskRatio, MonotoneOnFineGrid) {
  for (auto kind : kKinds) {
    MaskSchedule sched{kind};
    double prev = mask_ratio(0.0, sched);
    for (int i = 1; i <= 10000; ++i) {
      const double t = mask_ratio(i / 10000.0, sched);
      ASSERT_LE(t, prev) << to_string(kind) << " at " << i;
      prev = t;
    }
  }
}

TEST(RemaskTrajectory, SingleStep) { EXPECT_EQ(remask_trajectory(1, MaskSchedule{}), (std::vector<double>{1.0, 0.0})); }

TEST(RemaskTrajectory, TwoStepCosine) {
  const auto tr = remask_trajectory(2, MaskSchedule{});
  ASSERT_EQ(tr.size(), 3u);
  EXPECT_EQ(tr[0], 1.0);
  EXPECT_NEAR(tr[1], std::cos(std::numbers::pi / 4.0), 1e-15);
  EXPECT_EQ(tr[2], 0.0);
}

TEST(RemaskTrajectory, StrictlyDecreasingToZeroForAllKindsAndSteps) {
  for (auto kind : kKinds) {
    for (int n = 1; n <= 200; ++n) {
      const auto tr = remask_trajectory(n, MaskSchedule{kind});
      ASSERT_EQ(tr.size(), static_cast<std::size_t>(n) + 1);
      ASSERT_EQ(tr.front(), 1.0);
      ASSERT_EQ(tr.back(), 0.0);
      for (std::size_t k = 1; k < tr.size(); ++k) ASSERT_LT(tr[k], tr[k - 1]) << to_string(kind) << " N=" << n;
    }
  }
}

TEST(RemaskTrajectory, ZeroStepsRejected) { EXPECT_THROW(remask_trajectory(0, MaskSchedule{}), ContractError); }

TEST(LrSchedule, WarmupAndDecayEndpoints) {
  const LrSchedule sched{1e-5, 10000, 150000};
  EXPECT_EQ(lr_at(0, sched), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(10000, sched), 1e-5);
  EXPECT_NEAR(lr_at(150000, sched), 0.0, 1e-20);
  EXPECT_DOUBLE_EQ(lr_at(5000, sched), 5e-6);
}

TEST(LrSchedule, NonIncreasingAfterWarmup) {
  const LrSchedule sched{3e-3, 50, 1000};
  double prev = lr_at(50, sched);
  for (std::int64_t s = 51; s <= 1000; ++s) {
    const double lr = lr_at(s, sched);
    ASSERT_LE(lr, prev);
    prev = lr;
  }
}

}  // namespace
}  // namespace dualmask
