#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dualmask/random.hpp"
#include "dualmask/tokens.hpp"

namespace dualmask {

/// Synthetic vocal -> accompaniment grammar.
///
/// Vocal ids: 0 = rest, 1..15 = pitch. Accompaniment ids: 1..48 harmony
/// (12 chord classes x 4 metric phases), 49..52 ostinato, 0 = rest,
/// 53..63 unused. For style s at position i:
///   V[i] != 0 : A[i] = 1 + ((V[i] - 1 + 3s) mod 12) + 12 (i mod 4)
///   V[i] == 0 : A[i] = 49 + ((s + i) mod 4)
/// With probability `label_noise` a token is redrawn uniformly from its
/// category (the 12 harmony ids of its phase, or the 4 ostinato ids).
struct SynthConfig {
  Vocab vocab{};
  int styles = 4;
  int rest_span_min = 4;
  int rest_span_max = 8;
  int melody_span_min = 12;
  int melody_span_max = 28;
  int walk_step = 2;
  double label_noise = 0.0;
  /// Probability that an instance opens with an over-long intro drawn from
  /// [long_intro_min, long_intro_max]; these fail the quality filter.
  double long_intro_p = 0.2;
  int long_intro_min = 13;
  int long_intro_max = 24;
};

inline constexpr int kAccRest = 0;
inline constexpr int kHarmonyFirst = 1;
inline constexpr int kHarmonyLast = 48;
inline constexpr int kOstinatoFirst = 49;
inline constexpr int kOstinatoLast = 52;

inline bool is_harmony(int id) { return id >= kHarmonyFirst && id <= kHarmonyLast; }
inline bool is_ostinato(int id) { return id >= kOstinatoFirst && id <= kOstinatoLast; }

int harmony_token(int pitch, int style, std::size_t position);
int ostinato_token(int style, std::size_t position);
/// Grammar token for (V[i], style, i).
int grammar_token(int vocal, int style, std::size_t position);

/// Style implied by a harmony token over a sung pitch, or nullopt when no
/// style in [0, styles) produces it.
std::optional<int> implied_style(int accomp, int pitch, int styles = 4);

struct RestSpan {
  std::size_t start = 0;
  std::size_t length = 0;
  bool operator==(const RestSpan&) const = default;
};

struct SynthInstance {
  TokenSeq vocal;
  TokenSeq accomp;
  int style = 0;
  std::vector<std::size_t> events;
  std::vector<RestSpan> rest_spans;
  std::uint64_t seed = 0;
};

SynthInstance gen_pair(int style, std::size_t length, const SynthConfig& cfg, Rng& rng);

/// Positions where a sequence enters a harmony token from a non-harmony one.
std::vector<std::size_t> events_from_accomp(std::span<const int> accomp, int pad_id = -1);
std::vector<RestSpan> rest_spans_of(std::span<const int> vocal, int pad_id = -1);

/// Desk analogue of the long-form data-quality filter: intro rest span of at
/// most 12 tokens and at least one sung segment.
bool passes_quality_filter(const SynthInstance& inst);

struct Snippet {
  std::size_t start = 0;
  TokenSeq tokens;
};

/// An accompaniment slice of `length` tokens that does not overlap the
/// training crop [crop_begin, crop_begin + crop_length).
Snippet reference_snippet(const SynthInstance& inst, std::size_t crop_begin, std::size_t crop_length,
                          std::size_t length, Rng& rng);

/// Majority style over the harmony tokens of a span of an instance, decoded
/// by grammar inversion against the instance's vocal line.
std::optional<int> majority_style(const SynthInstance& inst, std::size_t begin, std::size_t length);

/// Exact conditional distribution of A[i] over the real accompaniment ids
/// given V, the style (nullopt = uniform mixture over styles) and i.
std::vector<double> oracle_posterior(std::span<const int> vocal, std::optional<int> style, std::size_t position,
                                     const SynthConfig& cfg);

/// Crops positions [begin, begin + length) of an instance; events and rest
/// spans are recomputed relative to the crop.
SynthInstance crop(const SynthInstance& inst, std::size_t begin, std::size_t length);

/// One structured-text (JSON) line per instance.
std::string to_record(const SynthInstance& inst);
SynthInstance from_record(const std::string& line);

}  // namespace dualmask
