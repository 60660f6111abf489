#include "dualmask/augment.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "dualmask/tensor.hpp"

namespace dualmask {

Biquad biquad_coeffs(FilterKind kind, double gain_db, double f0, double q, double fs) {
  if (!(fs > 0.0)) throw ContractError("biquad_coeffs: sample rate must be positive");
  if (!(f0 > 0.0 && f0 < fs / 2.0)) {
    throw ContractError("biquad_coeffs: f0 " + std::to_string(f0) + " Hz outside (0, fs/2)");
  }
  if (!(q > 0.0)) throw ContractError("biquad_coeffs: Q must be positive");
  if (gain_db == 0.0) return {};

  const double a = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * std::numbers::pi * f0 / fs;
  const double cw = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  const double sa = 2.0 * std::sqrt(a) * alpha;
  double b0, b1, b2, a0, a1, a2;
  switch (kind) {
    case FilterKind::peaking:
      b0 = 1.0 + alpha * a;
      b1 = -2.0 * cw;
      b2 = 1.0 - alpha * a;
      a0 = 1.0 + alpha / a;
      a1 = -2.0 * cw;
      a2 = 1.0 - alpha / a;
      break;
    case FilterKind::low_shelf:
      b0 = a * ((a + 1.0) - (a - 1.0) * cw + sa);
      b1 = 2.0 * a * ((a - 1.0) - (a + 1.0) * cw);
      b2 = a * ((a + 1.0) - (a - 1.0) * cw - sa);
      a0 = (a + 1.0) + (a - 1.0) * cw + sa;
      a1 = -2.0 * ((a - 1.0) + (a + 1.0) * cw);
      a2 = (a + 1.0) + (a - 1.0) * cw - sa;
      break;
    case FilterKind::high_shelf:
      b0 = a * ((a + 1.0) + (a - 1.0) * cw + sa);
      b1 = -2.0 * a * ((a - 1.0) + (a + 1.0) * cw);
      b2 = a * ((a + 1.0) + (a - 1.0) * cw - sa);
      a0 = (a + 1.0) - (a - 1.0) * cw + sa;
      a1 = 2.0 * ((a - 1.0) - (a + 1.0) * cw);
      a2 = (a + 1.0) - (a - 1.0) * cw - sa;
      break;
    default:
      throw ContractError("biquad_coeffs: unknown filter kind");
  }
  return {b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0};
}

double magnitude_db(const Biquad& c, double f, double fs) {
  const std::complex<double> z1 = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
  const std::complex<double> z2 = z1 * z1;
  const auto h = (c.b0 + c.b1 * z1 + c.b2 * z2) / (1.0 + c.a1 * z1 + c.a2 * z2);
  return 20.0 * std::log10(std::abs(h));
}

double pole_radius(const Biquad& c) {
  // Roots of z^2 + a1 z + a2.
  const std::complex<double> disc = std::sqrt(std::complex<double>(c.a1 * c.a1 - 4.0 * c.a2, 0.0));
  const auto r1 = (-c.a1 + disc) / 2.0;
  const auto r2 = (-c.a1 - disc) / 2.0;
  return std::max(std::abs(r1), std::abs(r2));
}

AugParams sample_aug_params(Rng& rng) {
  AugParams p;
  p.bass = {uniform_range(rng, -5.0, -2.0), uniform_range(rng, 80.0, 180.0), uniform_range(rng, 0.6, 1.1)};
  p.mid = {uniform_range(rng, 1.0, 3.0), uniform_range(rng, 1200.0, 2600.0), uniform_range(rng, 0.6, 1.2)};
  p.treble = {uniform_range(rng, 1.0, 3.5), uniform_range(rng, 3200.0, 5800.0), uniform_range(rng, 0.6, 1.0)};
  return p;
}

std::vector<double> apply_biquad(const Biquad& c, const std::vector<double>& x) {
  std::vector<double> y(x.size());
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double out = c.b0 * x[n] + s1;
    s1 = c.b1 * x[n] - c.a1 * out + s2;
    s2 = c.b2 * x[n] - c.a2 * out;
    y[n] = out;
  }
  return y;
}

AudioBuffer apply_filter_chain(const AudioBuffer& buf, const AugParams& p) {
  const double fs = buf.sample_rate;
  AudioBuffer out{buf.samples, fs};
  out.samples = apply_biquad(biquad_coeffs(FilterKind::low_shelf, p.bass.gain_db, p.bass.f0, p.bass.q, fs), out.samples);
  out.samples = apply_biquad(biquad_coeffs(FilterKind::peaking, p.mid.gain_db, p.mid.f0, p.mid.q, fs), out.samples);
  out.samples =
      apply_biquad(biquad_coeffs(FilterKind::high_shelf, p.treble.gain_db, p.treble.f0, p.treble.q, fs), out.samples);
  return out;
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

double peak(const std::vector<double>& x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

NormalizeResult loudness_normalize(const AudioBuffer& buf, double target_rms_db, double peak_cap_db) {
  NormalizeResult r;
  r.buffer = buf;
  const double level = rms(buf.samples);
  if (level == 0.0) {
    spdlog::warn("loudness_normalize: silent buffer left unchanged");
    r.silent = true;
    return r;
  }
  const double target = std::pow(10.0, target_rms_db / 20.0);
  const double cap = std::pow(10.0, peak_cap_db / 20.0);
  double gain = target / level;
  // A buffer already at the target keeps gain exactly 1.
  if (std::abs(gain - 1.0) < 1e-12) gain = 1.0;
  const double pk = peak(buf.samples);
  if (pk * gain > cap) {
    gain = cap / pk;
    r.peak_capped = true;
  }
  r.gain = gain;
  if (gain != 1.0) {
    for (auto& v : r.buffer.samples) v *= gain;
  }
  return r;
}

AugmentResult maybe_augment(const AudioBuffer& buf, const AugConfig& config, Rng& rng) {
  if (!(config.activation_p >= 0.0 && config.activation_p <= 1.0)) {
    throw ContractError("maybe_augment: p must lie in [0, 1]");
  }
  AugmentResult r;
  r.applied = uniform01(rng) < config.activation_p;
  const AugParams sampled = sample_aug_params(rng);
  AudioBuffer work = buf;
  if (r.applied) {
    r.params = sampled;
    work = apply_filter_chain(buf, sampled);
  }
  NormalizeResult n = loudness_normalize(work, config.target_rms_db, config.peak_cap_db);
  r.buffer = std::move(n.buffer);
  r.gain = n.gain;
  return r;
}

std::string params_json(const AugParams& p, bool applied, double gain) {
  auto band = [](const BandParams& b) { return nlohmann::json{{"gain_db", b.gain_db}, {"f0", b.f0}, {"q", b.q}}; };
  nlohmann::ordered_json j;
  j["applied"] = applied;
  if (applied) {
    j["bass"] = band(p.bass);
    j["mid"] = band(p.mid);
    j["treble"] = band(p.treble);
  }
  j["normalize_gain"] = gain;
  return j.dump();
}

}  // namespace dualmask
