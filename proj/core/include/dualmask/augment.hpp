#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dualmask/random.hpp"

namespace dualmask {

struct AudioBuffer {
  std::vector<double> samples;  // mono
  double sample_rate = 48000.0;
};

enum class FilterKind { low_shelf, peaking, high_shelf };

/// Biquad coefficients normalized by a0; transfer function
/// (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;
};

/// Audio-EQ-cookbook shelf and peaking filters; shelf slope set through Q.
/// A zero gain yields the exact identity filter.
Biquad biquad_coeffs(FilterKind kind, double gain_db, double f0, double q, double fs);

/// Magnitude response in dB at frequency f.
double magnitude_db(const Biquad& c, double f, double fs);

/// Largest pole magnitude.
double pole_radius(const Biquad& c);

struct BandParams {
  double gain_db = 0.0;
  double f0 = 1000.0;
  double q = 0.707;
};

struct AugParams {
  BandParams bass{0.0, 100.0, 0.8};
  BandParams mid{0.0, 1800.0, 0.9};
  BandParams treble{0.0, 4500.0, 0.8};
};

struct AugConfig {
  double activation_p = 0.7;
  double target_rms_db = -16.0;
  double peak_cap_db = -1.0;
};

/// Draws each band from its range: bass gain U(-5,-2) dB, f0 U(80,180), Q U(0.6,1.1);
/// mid gain U(1,3), f0 U(1200,2600), Q U(0.6,1.2); treble gain U(1,3.5),
/// f0 U(3200,5800), Q U(0.6,1.0).
AugParams sample_aug_params(Rng& rng);

/// Transposed direct form II, zero initial state.
std::vector<double> apply_biquad(const Biquad& c, const std::vector<double>& x);

/// Bass shelf, then mid peaking, then treble shelf.
AudioBuffer apply_filter_chain(const AudioBuffer& buf, const AugParams& params);

struct NormalizeResult {
  AudioBuffer buffer;
  double gain = 1.0;
  bool peak_capped = false;
  bool silent = false;
};

/// Single linear gain to the target RMS, lowered if the peak would exceed
/// the cap. A silent buffer is returned unchanged.
NormalizeResult loudness_normalize(const AudioBuffer& buf, double target_rms_db = -16.0, double peak_cap_db = -1.0);

struct AugmentResult {
  AudioBuffer buffer;
  bool applied = false;
  AugParams params;
  double gain = 1.0;
};

/// With probability p filters through a freshly sampled chain; always ends
/// loudness-normalized. The activation draw and the parameter draws are
/// always consumed so the rng stream does not depend on p.
AugmentResult maybe_augment(const AudioBuffer& buf, const AugConfig& config, Rng& rng);

std::string params_json(const AugParams& params, bool applied, double gain);

double rms(const std::vector<double>& x);
double peak(const std::vector<double>& x);

}  // namespace dualmask
