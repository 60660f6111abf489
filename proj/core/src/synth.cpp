#include "dualmask/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>

#include "dualmask/tensor.hpp"

namespace dualmask {

namespace {

int wrap(int v, int m) { return ((v % m) + m) % m; }

int redraw_in_category(int token, std::size_t position, Rng& rng) {
  if (is_harmony(token)) {
    const int phase = static_cast<int>(position % 4);
    return 1 + uniform_int(rng, 0, 11) + 12 * phase;
  }
  return kOstinatoFirst + uniform_int(rng, 0, 3);
}

}  // namespace

int harmony_token(int pitch, int style, std::size_t position) {
  return 1 + wrap(pitch - 1 + 3 * style, 12) + 12 * static_cast<int>(position % 4);
}

int ostinato_token(int style, std::size_t position) {
  return kOstinatoFirst + static_cast<int>((static_cast<std::size_t>(style) + position) % 4);
}

int grammar_token(int vocal, int style, std::size_t position) {
  return vocal != 0 ? harmony_token(vocal, style, position) : ostinato_token(style, position);
}

std::optional<int> implied_style(int accomp, int pitch, int styles) {
  if (!is_harmony(accomp) || pitch <= 0) return std::nullopt;
  const int chord = (accomp - 1) % 12;
  const int offset = wrap(chord - (pitch - 1), 12);
  if (offset % 3 != 0 || offset / 3 >= styles) return std::nullopt;
  return offset / 3;
}

std::vector<std::size_t> events_from_accomp(std::span<const int> accomp, int pad_id) {
  std::vector<std::size_t> events;
  for (std::size_t i = 0; i < accomp.size(); ++i) {
    if (accomp[i] == pad_id) break;
    if (is_harmony(accomp[i]) && (i == 0 || !is_harmony(accomp[i - 1]))) events.push_back(i);
  }
  return events;
}

std::vector<RestSpan> rest_spans_of(std::span<const int> vocal, int pad_id) {
  std::vector<RestSpan> spans;
  for (std::size_t i = 0; i < vocal.size() && vocal[i] != pad_id; ++i) {
    if (vocal[i] != 0) continue;
    if (!spans.empty() && spans.back().start + spans.back().length == i) {
      ++spans.back().length;
    } else {
      spans.push_back({i, 1});
    }
  }
  return spans;
}

SynthInstance gen_pair(int style, std::size_t length, const SynthConfig& cfg, Rng& rng) {
  if (length < 8) throw ContractError("gen_pair: length must be at least 8");
  if (style < 0 || style >= cfg.styles) throw ContractError("gen_pair: style out of range");
  SynthInstance inst;
  inst.style = style;
  inst.vocal.reserve(length);

  const bool long_intro = bernoulli(rng, cfg.long_intro_p);
  const int intro = long_intro ? uniform_int(rng, cfg.long_intro_min, cfg.long_intro_max)
                               : uniform_int(rng, cfg.rest_span_min, cfg.rest_span_max);
  for (int i = 0; i < intro && inst.vocal.size() < length; ++i) inst.vocal.push_back(0);
  int pitch = uniform_int(rng, 1, cfg.vocab.voc_size - 1);
  while (inst.vocal.size() < length) {
    const int seg = uniform_int(rng, cfg.melody_span_min, cfg.melody_span_max);
    for (int i = 0; i < seg && inst.vocal.size() < length; ++i) {
      inst.vocal.push_back(pitch);
      pitch = std::clamp(pitch + uniform_int(rng, -cfg.walk_step, cfg.walk_step), 1, cfg.vocab.voc_size - 1);
    }
    const int rest = uniform_int(rng, cfg.rest_span_min, cfg.rest_span_max);
    for (int i = 0; i < rest && inst.vocal.size() < length; ++i) inst.vocal.push_back(0);
  }

  inst.accomp.resize(length);
  for (std::size_t i = 0; i < length; ++i) {
    int tok = grammar_token(inst.vocal[i], style, i);
    if (cfg.label_noise > 0.0 && bernoulli(rng, cfg.label_noise)) tok = redraw_in_category(tok, i, rng);
    inst.accomp[i] = tok;
  }
  inst.events = events_from_accomp(inst.accomp);
  inst.rest_spans = rest_spans_of(inst.vocal);
  return inst;
}

bool passes_quality_filter(const SynthInstance& inst) {
  std::size_t intro = 0;
  while (intro < inst.vocal.size() && inst.vocal[intro] == 0) ++intro;
  const bool has_segment = intro < inst.vocal.size();
  return intro <= 12 && has_segment;
}

Snippet reference_snippet(const SynthInstance& inst, std::size_t crop_begin, std::size_t crop_length,
                          std::size_t length, Rng& rng) {
  const std::size_t n = inst.accomp.size();
  const std::size_t crop_end = crop_begin + crop_length;
  if (length == 0 || crop_end > n) throw ContractError("reference_snippet: crop outside instance");
  // Candidate starts: before the crop, or after it.
  const std::size_t before = crop_begin >= length ? crop_begin - length + 1 : 0;
  const std::size_t after = n >= crop_end + length ? n - crop_end - length + 1 : 0;
  if (before + after == 0) {
    throw ContractError("reference_snippet: no room for a " + std::to_string(length) +
                        "-token snippet disjoint from the crop");
  }
  const std::size_t pick = uniform_index(rng, before + after);
  Snippet s;
  s.start = pick < before ? pick : crop_end + (pick - before);
  s.tokens.assign(inst.accomp.begin() + static_cast<std::ptrdiff_t>(s.start),
                  inst.accomp.begin() + static_cast<std::ptrdiff_t>(s.start + length));
  return s;
}

std::optional<int> majority_style(const SynthInstance& inst, std::size_t begin, std::size_t length) {
  std::array<int, 64> votes{};
  bool any = false;
  for (std::size_t i = begin; i < begin + length && i < inst.accomp.size(); ++i) {
    if (auto s = implied_style(inst.accomp[i], inst.vocal[i])) {
      ++votes[static_cast<std::size_t>(*s)];
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::vector<double> oracle_posterior(std::span<const int> vocal, std::optional<int> style, std::size_t position,
                                     const SynthConfig& cfg) {
  if (position >= vocal.size()) throw ContractError("oracle_posterior: position outside the vocal line");
  std::vector<double> dist(static_cast<std::size_t>(cfg.vocab.acc_size), 0.0);
  const double eps = cfg.label_noise;
  auto add_style = [&](int s, double weight) {
    const int tok = grammar_token(vocal[position], s, position);
    dist[static_cast<std::size_t>(tok)] += weight * (1.0 - eps);
    if (eps <= 0.0) return;
    if (is_harmony(tok)) {
      const int phase = static_cast<int>(position % 4);
      for (int c = 0; c < 12; ++c) dist[static_cast<std::size_t>(1 + c + 12 * phase)] += weight * eps / 12.0;
    } else {
      for (int o = kOstinatoFirst; o <= kOstinatoLast; ++o) dist[static_cast<std::size_t>(o)] += weight * eps / 4.0;
    }
  };
  if (style) {
    add_style(*style, 1.0);
  } else {
    for (int s = 0; s < cfg.styles; ++s) add_style(s, 1.0 / cfg.styles);
  }
  return dist;
}

SynthInstance crop(const SynthInstance& inst, std::size_t begin, std::size_t length) {
  if (begin + length > inst.vocal.size()) throw ContractError("crop: range outside instance");
  SynthInstance out;
  out.style = inst.style;
  out.seed = inst.seed;
  out.vocal.assign(inst.vocal.begin() + static_cast<std::ptrdiff_t>(begin),
                   inst.vocal.begin() + static_cast<std::ptrdiff_t>(begin + length));
  out.accomp.assign(inst.accomp.begin() + static_cast<std::ptrdiff_t>(begin),
                    inst.accomp.begin() + static_cast<std::ptrdiff_t>(begin + length));
  out.events = events_from_accomp(out.accomp);
  out.rest_spans = rest_spans_of(out.vocal);
  return out;
}

std::string to_record(const SynthInstance& inst) {
  nlohmann::json j;
  j["version"] = 1;
  j["seed"] = inst.seed;
  j["style"] = inst.style;
  j["V"] = inst.vocal;
  j["A0"] = inst.accomp;
  j["events"] = inst.events;
  auto spans = nlohmann::json::array();
  for (const auto& s : inst.rest_spans) spans.push_back({s.start, s.length});
  j["rest_spans"] = spans;
  return j.dump();
}

SynthInstance from_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  if (j.at("version").get<int>() != 1) throw ContractError("unsupported dataset record version");
  SynthInstance inst;
  inst.seed = j.at("seed").get<std::uint64_t>();
  inst.style = j.at("style").get<int>();
  inst.vocal = j.at("V").get<TokenSeq>();
  inst.accomp = j.at("A0").get<TokenSeq>();
  if (inst.vocal.size() != inst.accomp.size()) throw ContractError("dataset record: V and A0 lengths differ");
  inst.events = j.at("events").get<std::vector<std::size_t>>();
  for (const auto& s : j.at("rest_spans")) inst.rest_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  return inst;
}

}  // namespace dualmask
