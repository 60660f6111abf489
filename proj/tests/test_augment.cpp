#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dualmask/augment.hpp"
#include "dualmask/tensor.hpp"

namespace dualmask {
namespace {

constexpr double kFs = 48000.0;

std::vector<double> sine(double freq, double amp, std::size_t n, double fs = kFs) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs);
  return x;
}

// Amplitude of the tail of a steady-state sine (least-squares fit on whole
// periods).
double tail_amplitude(const std::vector<double>& y, double freq, std::size_t tail, double fs = kFs) {
  double s = 0.0, c = 0.0;
  for (std::size_t i = y.size() - tail; i < y.size(); ++i) {
    const double w = 2.0 * std::numbers::pi * freq * static_cast<double>(i) / fs;
    s += y[i] * std::sin(w);
    c += y[i] * std::cos(w);
  }
  return 2.0 * std::hypot(s, c) / static_cast<double>(tail);
}

double db(double ratio) { return 20.0 * std::log10(ratio); }

TEST(Biquad, ZeroGainIsIdentity) {
  for (auto kind : {FilterKind::low_shelf, FilterKind::peaking, FilterKind::high_shelf}) {
    const auto c = biquad_coeffs(kind, 0.0, 1000.0, 0.8, kFs);
    EXPECT_NEAR(c.b0, 1.0, 1e-12);
    EXPECT_NEAR(c.b1, 0.0, 1e-12);
    EXPECT_NEAR(c.b2, 0.0, 1e-12);
    EXPECT_NEAR(c.a1, 0.0, 1e-12);
    EXPECT_NEAR(c.a2, 0.0, 1e-12);
  }
}

TEST(Biquad, PeakingGainAtCenter) {
  for (double f0 : {1200.0, 1800.0, 2600.0}) {
    const auto c = biquad_coeffs(FilterKind::peaking, 6.0, f0, 0.9, kFs);
    EXPECT_NEAR(magnitude_db(c, f0, kFs), 6.0, 0.01);
    // Steady-state sine through the filter agrees with the analytic response.
    const auto y = apply_biquad(c, sine(f0, 0.5, 48000));
    EXPECT_NEAR(db(tail_amplitude(y, f0, 24000) / 0.5), 6.0, 0.01);
  }
}

TEST(Biquad, StableAcrossSampledParameters) {
  Rng rng(1);
  for (int k = 0; k < 10000; ++k) {
    const auto p = sample_aug_params(rng);
    ASSERT_LT(pole_radius(biquad_coeffs(FilterKind::low_shelf, p.bass.gain_db, p.bass.f0, p.bass.q, kFs)), 1.0);
    ASSERT_LT(pole_radius(biquad_coeffs(FilterKind::peaking, p.mid.gain_db, p.mid.f0, p.mid.q, kFs)), 1.0);
    ASSERT_LT(pole_radius(biquad_coeffs(FilterKind::high_shelf, p.treble.gain_db, p.treble.f0, p.treble.q, kFs)),
              1.0);
  }
}

TEST(Biquad, NyquistRejected) {
  EXPECT_THROW(biquad_coeffs(FilterKind::peaking, 3.0, 24000.0, 0.7, kFs), ContractError);
  EXPECT_THROW(biquad_coeffs(FilterKind::peaking, 3.0, 1000.0, 0.0, kFs), ContractError);
}

TEST(SampleAugParams, WithinRanges) {
  Rng rng(2);
  for (int k = 0; k < 10000; ++k) {
    const auto p = sample_aug_params(rng);
    ASSERT_GE(p.bass.gain_db, -5.0);
    ASSERT_LE(p.bass.gain_db, -2.0);
    ASSERT_GE(p.bass.f0, 80.0);
    ASSERT_LE(p.bass.f0, 180.0);
    ASSERT_GE(p.bass.q, 0.6);
    ASSERT_LE(p.bass.q, 1.1);
    ASSERT_GE(p.mid.gain_db, 1.0);
    ASSERT_LE(p.mid.gain_db, 3.0);
    ASSERT_GE(p.mid.f0, 1200.0);
    ASSERT_LE(p.mid.f0, 2600.0);
    ASSERT_GE(p.mid.q, 0.6);
    ASSERT_LE(p.mid.q, 1.2);
    ASSERT_GE(p.treble.gain_db, 1.0);
    ASSERT_LE(p.treble.gain_db, 3.5);
    ASSERT_GE(p.treble.f0, 3200.0);
    ASSERT_LE(p.treble.f0, 5800.0);
    ASSERT_GE(p.treble.q, 0.6);
    ASSERT_LE(p.treble.q, 1.0);
  }
}

TEST(FilterChain, ZeroGainsPassThrough) {
  Rng rng(3);
  AudioBuffer buf;
  for (int i = 0; i < 4800; ++i) buf.samples.push_back(uniform_range(rng, -1.0, 1.0));
  AugParams p;
  const auto out = apply_filter_chain(buf, p);
  for (std::size_t i = 0; i < buf.samples.size(); ++i) EXPECT_NEAR(out.samples[i], buf.samples[i], 1e-10);
}

TEST(FilterChain, BassShelfSteadyStateMatchesCookbookResponse) {
  AugParams p;
  p.bass = {-5.0, 100.0, 0.8};
  AudioBuffer buf;
  buf.samples = sine(100.0, 0.5, 96000);
  const auto out = apply_filter_chain(buf, p);
  const auto c = biquad_coeffs(FilterKind::low_shelf, -5.0, 100.0, 0.8, kFs);
  // The cookbook shelf sits at half its gain (in dB) at f0 ...
  EXPECT_NEAR(magnitude_db(c, 100.0, kFs), -2.5, 1e-9);
  EXPECT_NEAR(db(tail_amplitude(out.samples, 100.0, 48000) / 0.5), magnitude_db(c, 100.0, kFs), 0.1);
  // ... and reaches the full -5 dB well below it.
  AudioBuffer low;
  low.samples = sine(10.0, 0.5, 480000);
  const auto out_low = apply_filter_chain(low, p);
  EXPECT_NEAR(db(tail_amplitude(out_low.samples, 10.0, 240000) / 0.5), -5.0, 0.1);
}

TEST(FilterChain, Linear) {
  Rng rng(4);
  AudioBuffer x, y, xy;
  for (int i = 0; i < 4000; ++i) {
    x.samples.push_back(uniform_range(rng, -1, 1));
    y.samples.push_back(uniform_range(rng, -1, 1));
    xy.samples.push_back(x.samples.back() + y.samples.back());
  }
  const auto p = sample_aug_params(rng);
  const auto fx = apply_filter_chain(x, p), fy = apply_filter_chain(y, p), fxy = apply_filter_chain(xy, p);
  for (std::size_t i = 0; i < fx.samples.size(); ++i) EXPECT_NEAR(fxy.samples[i], fx.samples[i] + fy.samples[i], 1e-9);
}

TEST(Normalize, FullScaleSine) {
  AudioBuffer buf;
  buf.samples = sine(440.0, 1.0, 48000);
  const auto r = loudness_normalize(buf);
  EXPECT_NEAR(rms(r.buffer.samples), std::pow(10.0, -16.0 / 20.0), 1e-6);
  EXPECT_NEAR(rms(r.buffer.samples), 0.15849, 1e-5);
  EXPECT_FALSE(r.peak_capped);
}

TEST(Normalize, CrestFactorTriggersPeakCap) {
  AudioBuffer buf;
  buf.samples.assign(1000, 0.0);
  buf.samples[500] = 1.0;
  const auto r = loudness_normalize(buf);
  EXPECT_TRUE(r.peak_capped);
  EXPECT_NEAR(peak(r.buffer.samples), std::pow(10.0, -1.0 / 20.0), 1e-6);
  EXPECT_NEAR(peak(r.buffer.samples), 0.89125, 1e-5);
  EXPECT_LT(rms(r.buffer.samples), std::pow(10.0, -16.0 / 20.0));
}

TEST(Normalize, CompliantBufferHasUnitGain) {
  AudioBuffer buf;
  const double target = std::pow(10.0, -16.0 / 20.0);
  buf.samples = {target, -target, target, -target};
  const auto r = loudness_normalize(buf);
  EXPECT_EQ(r.gain, 1.0);
  EXPECT_EQ(r.buffer.samples, buf.samples);
}

TEST(Normalize, SilenceUnchanged) {
  AudioBuffer buf;
  buf.samples.assign(64, 0.0);
  const auto r = loudness_normalize(buf);
  EXPECT_TRUE(r.silent);
  EXPECT_EQ(r.buffer.samples, buf.samples);
}

TEST(Normalize, RmsOrPeakInvariant) {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    AudioBuffer buf;
    const double spike = uniform_range(rng, 0.0, 20.0);
    for (int i = 0; i < 2000; ++i) buf.samples.push_back(0.1 * normal(rng));
    buf.samples[static_cast<std::size_t>(uniform_index(rng, 2000))] += spike;
    const auto r = loudness_normalize(buf);
    if (r.peak_capped) {
      EXPECT_NEAR(peak(r.buffer.samples), std::pow(10.0, -1.0 / 20.0), 1e-6);
    } else {
      EXPECT_NEAR(rms(r.buffer.samples), std::pow(10.0, -16.0 / 20.0), 1e-6);
    }
  }
}

AudioBuffer noise_buffer(Rng& rng, int n = 480) {
  AudioBuffer b;
  for (int i = 0; i < n; ++i) b.samples.push_back(0.3 * normal(rng));
  return b;
}

TEST(MaybeAugment, ProbabilityEndpoints) {
  Rng rng(6);
  const auto buf = noise_buffer(rng);
  for (int k = 0; k < 200; ++k) {
    const auto off = maybe_augment(buf, {0.0, -16.0, -1.0}, rng);
    ASSERT_FALSE(off.applied);
    ASSERT_NEAR(rms(off.buffer.samples), std::pow(10.0, -16.0 / 20.0), 1e-6);
    ASSERT_TRUE(maybe_augment(buf, {1.0, -16.0, -1.0}, rng).applied);
  }
}

TEST(MaybeAugment, ActivationRateNearConfigured) {
  Rng rng(7);
  AudioBuffer buf;
  buf.samples = {0.1, -0.2, 0.3, -0.1};
  constexpr int kTrials = 100000;
  int on = 0;
  for (int k = 0; k < kTrials; ++k) on += maybe_augment(buf, AugConfig{}, rng).applied;
  const double sigma = std::sqrt(kTrials * 0.7 * 0.3);
  EXPECT_LE(std::abs(on - 0.7 * kTrials), 3.0 * sigma);
}

TEST(MaybeAugment, StreamIndependentOfProbability) {
  Rng a(8), b(8);
  AudioBuffer buf;
  buf.samples = {0.1, 0.2};
  maybe_augment(buf, {0.0, -16, -1}, a);
  maybe_augment(buf, {1.0, -16, -1}, b);
  EXPECT_EQ(a(), b());
}

TEST(ParamsJson, CarriesAllBands) {
  const std::string js = params_json(AugParams{}, true, 1.5);
  for (const char* key : {"bass", "mid", "treble", "applied", "gain"}) EXPECT_NE(js.find(key), std::string::npos) << key;
}

}  // namespace
}  // namespace dualmask
