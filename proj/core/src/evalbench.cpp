#include "dualmask/evalbench.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <array>
#include <fstream>
#include <map>
#include <sstream>

namespace dualmask {

std::optional<double> token_accuracy(std::span<const int> predicted, std::span<const int> truth, const Flags* filter,
                                     int pad_id) {
  if (predicted.size() != truth.size()) {
    throw ContractError("token_accuracy: lengths differ (" + std::to_string(predicted.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
  }
  if (filter && filter->size() != truth.size()) throw ContractError("token_accuracy: filter length mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pad_id || (filter && !(*filter)[i])) continue;
    ++total;
    hit += predicted[i] == truth[i] ? 1 : 0;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

OnsetScore onset_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, std::size_t tol) {
  std::size_t i = 0, j = 0, matched = 0;
  while (i < predicted.size() && j < truth.size()) {
    const std::size_t p = predicted[i], t = truth[j];
    if ((p > t ? p - t : t - p) <= tol) {
      ++matched;
      ++i;
      ++j;
    } else if (p < t) {
      ++i;
    } else {
      ++j;
    }
  }
  OnsetScore s;
  s.precision = predicted.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(predicted.size());
  s.recall = truth.empty() ? 0.0 : static_cast<double>(matched) / static_cast<double>(truth.size());
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

namespace {

std::optional<int> majority(std::span<const int> predicted, std::span<const int> vocal, int styles,
                            std::size_t* decoded = nullptr, std::size_t* agreeing = nullptr) {
  std::vector<std::size_t> votes(static_cast<std::size_t>(styles), 0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < predicted.size() && i < vocal.size(); ++i) {
    if (auto s = implied_style(predicted[i], vocal[i], styles)) {
      ++votes[static_cast<std::size_t>(*s)];
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  const auto best = std::max_element(votes.begin(), votes.end());
  if (decoded) *decoded = n;
  if (agreeing) *agreeing = *best;
  return static_cast<int>(best - votes.begin());
}

}  // namespace

std::optional<double> style_consistency(std::span<const int> predicted, std::span<const int> vocal, int styles) {
  std::size_t decoded = 0, agreeing = 0;
  if (!majority(predicted, vocal, styles, &decoded, &agreeing)) return std::nullopt;
  return static_cast<double>(agreeing) / static_cast<double>(decoded);
}

std::optional<double> rest_region_density(std::span<const int> predicted, std::span<const int> vocal, int pad_id) {
  std::size_t rest = 0, busy = 0;
  for (std::size_t i = 0; i < vocal.size() && vocal[i] != pad_id; ++i) {
    if (vocal[i] != 0) continue;
    ++rest;
    busy += predicted[i] != kAccRest ? 1 : 0;
  }
  if (rest == 0) return std::nullopt;
  return static_cast<double>(busy) / static_cast<double>(rest);
}

std::optional<double> harmony_accuracy_self_style(std::span<const int> predicted, std::span<const int> vocal,
                                                  int styles) {
  const auto s = majority(predicted, vocal, styles);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < vocal.size() && i < predicted.size(); ++i) {
    if (vocal[i] <= 0 || vocal[i] >= Vocab{}.voc_size) continue;
    ++total;
    if (s && predicted[i] == harmony_token(vocal[i], *s, i)) ++hit;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

SongMetrics score_song(std::span<const int> predicted, const SynthInstance& truth, int styles) {
  const std::span<const int> v(truth.vocal), a0(truth.accomp);
  Flags sung(v.size()), rest(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    sung[i] = v[i] != 0 ? 1 : 0;
    rest[i] = v[i] == 0 ? 1 : 0;
  }
  SongMetrics m;
  m.token_accuracy = token_accuracy(predicted, a0);
  m.harmony_accuracy = token_accuracy(predicted, a0, &sung);
  m.harmony_accuracy_self_style = harmony_accuracy_self_style(predicted, v, styles);
  m.rest_region_accuracy = token_accuracy(predicted, a0, &rest);
  m.onset = onset_f1(events_from_accomp(predicted), events_from_accomp(a0));
  m.style_consistency = style_consistency(predicted, v, styles);
  m.rest_region_density = rest_region_density(predicted, v);
  return m;
}

EvalCondition parse_condition(std::string_view name) {
  if (name == "full") return EvalCondition::full;
  if (name == "zero_shot") return EvalCondition::zero_shot;
  throw ContractError("unknown condition '" + std::string(name) + "' (expected full or zero_shot)");
}

std::string_view to_string(EvalCondition c) { return c == EvalCondition::full ? "full" : "zero_shot"; }

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols = {
      "condition",       "schedule",          "steps",        "songs",
      "token_accuracy",  "harmony_accuracy",  "harmony_accuracy_self_style",
      "rest_region_accuracy", "onset_precision", "onset_recall", "onset_f1",
      "style_consistency", "rest_region_density", "model_calls_per_token",
      "fad",             "hpcp_sim",          "clamp",        "songeval",
      "status"};
  return cols;
}

std::string report_csv_header() {
  std::string s;
  for (const auto& c : report_columns()) s += (s.empty() ? "" : ",") + c;
  return s;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
  return out + "\"";
}

nlohmann::json jopt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string report_csv_row(const EvalReport& r) {
  const std::vector<std::string> cells = {r.condition,
                                          r.schedule,
                                          std::to_string(r.steps),
                                          std::to_string(r.songs),
                                          opt(r.token_accuracy),
                                          opt(r.harmony_accuracy),
                                          opt(r.harmony_accuracy_self_style),
                                          opt(r.rest_region_accuracy),
                                          num(r.onset_precision),
                                          num(r.onset_recall),
                                          num(r.onset_f1),
                                          opt(r.style_consistency),
                                          opt(r.rest_region_density),
                                          num(r.model_calls_per_token),
                                          "NA",
                                          "NA",
                                          "NA",
                                          "NA",
                                          csv_escape(r.status)};
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["condition"] = r.condition;
  j["schedule"] = r.schedule;
  j["steps"] = r.steps;
  j["songs"] = r.songs;
  j["token_accuracy"] = jopt(r.token_accuracy);
  j["harmony_accuracy"] = jopt(r.harmony_accuracy);
  j["harmony_accuracy_self_style"] = jopt(r.harmony_accuracy_self_style);
  j["rest_region_accuracy"] = jopt(r.rest_region_accuracy);
  j["onset_precision"] = r.onset_precision;
  j["onset_recall"] = r.onset_recall;
  j["onset_f1"] = r.onset_f1;
  j["style_consistency"] = jopt(r.style_consistency);
  j["rest_region_density"] = jopt(r.rest_region_density);
  j["model_calls_per_token"] = r.model_calls_per_token;
  j["fad"] = nullptr;
  j["hpcp_sim"] = nullptr;
  j["clamp"] = nullptr;
  j["songeval"] = nullptr;
  j["status"] = r.status;
  return j.dump();
}

std::vector<EvalSong> make_eval_songs(std::span<const SynthInstance> instances, std::size_t seq_len,
                                      std::size_t ref_len, std::uint64_t seed) {
  std::vector<EvalSong> songs;
  songs.reserve(instances.size());
  for (std::size_t n = 0; n < instances.size(); ++n) {
    const SynthInstance& inst = instances[n];
    if (inst.vocal.size() < seq_len) {
      throw ContractError("evaluation song " + std::to_string(n) + " is shorter than " + std::to_string(seq_len));
    }
    Rng rng(mix_seed(seed, n));
    EvalSong s;
    s.crop = crop(inst, 0, seq_len);
    s.full.style = inst.style;
    if (inst.vocal.size() >= seq_len + ref_len) s.full.reference = reference_snippet(inst, 0, seq_len, ref_len, rng).tokens;
    songs.push_back(std::move(s));
  }
  return songs;
}

EvalReport aggregate(std::span<const SongMetrics> metrics, std::size_t model_calls, std::size_t tokens) {
  EvalReport r;
  r.songs = metrics.size();
  auto mean = [&](auto getter) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& m : metrics) {
      if (const std::optional<double> v = getter(m)) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  r.token_accuracy = mean([](const SongMetrics& m) { return m.token_accuracy; });
  r.harmony_accuracy = mean([](const SongMetrics& m) { return m.harmony_accuracy; });
  r.harmony_accuracy_self_style = mean([](const SongMetrics& m) { return m.harmony_accuracy_self_style; });
  r.rest_region_accuracy = mean([](const SongMetrics& m) { return m.rest_region_accuracy; });
  r.style_consistency = mean([](const SongMetrics& m) { return m.style_consistency; });
  r.rest_region_density = mean([](const SongMetrics& m) { return m.rest_region_density; });
  r.onset_precision = mean([](const SongMetrics& m) { return std::optional<double>(m.onset.precision); }).value_or(0.0);
  r.onset_recall = mean([](const SongMetrics& m) { return std::optional<double>(m.onset.recall); }).value_or(0.0);
  r.onset_f1 = mean([](const SongMetrics& m) { return std::optional<double>(m.onset.f1); }).value_or(0.0);
  r.model_calls_per_token = tokens ? static_cast<double>(model_calls) / static_cast<double>(tokens) : 0.0;
  return r;
}

namespace {

const Condition& pick(const EvalSong& s, EvalCondition c) {
  static const Condition none = Condition::none();
  return c == EvalCondition::full ? s.full : none;
}

std::size_t nonpad_tokens(std::span<const EvalSong> songs) {
  std::size_t n = 0;
  for (const auto& s : songs) n += nonpad_length(s.crop.vocal, Vocab{}.voc_pad());
  return n;
}

}  // namespace

EvalReport evaluate_cell(LogitModel& model, std::span<const EvalSong> songs, EvalCondition condition,
                         const SamplerParams& params, std::size_t batch, std::uint64_t seed) {
  if (batch == 0) throw ContractError("evaluate_cell: batch must be positive");
  const std::size_t calls_before = model.calls();
  std::vector<SongMetrics> metrics;
  for (std::size_t begin = 0; begin < songs.size(); begin += batch) {
    const std::size_t end = std::min(songs.size(), begin + batch);
    std::vector<TokenSeq> vocals;
    std::vector<Condition> conds;
    std::vector<std::uint64_t> seeds;
    for (std::size_t n = begin; n < end; ++n) {
      vocals.push_back(songs[n].crop.vocal);
      conds.push_back(pick(songs[n], condition));
      seeds.push_back(mix_seed(seed, n));
    }
    const auto outputs = generate_batch(vocals, conds, model, params, seeds);
    for (std::size_t n = begin; n < end; ++n) metrics.push_back(score_song(outputs[n - begin], songs[n].crop));
  }
  EvalReport r = aggregate(metrics, model.calls() - calls_before, nonpad_tokens(songs));
  r.condition = std::string(to_string(condition));
  r.schedule = std::string(to_string(params.schedule.kind));
  r.steps = params.steps;
  return r;
}

EvalReport evaluate_ar(ArLogitModel& model, std::span<const EvalSong> songs, EvalCondition condition,
                       const ArParams& params, std::size_t batch, std::uint64_t seed) {
  if (batch == 0) throw ContractError("evaluate_ar: batch must be positive");
  const std::size_t calls_before = model.calls();
  std::vector<SongMetrics> metrics;
  for (std::size_t begin = 0; begin < songs.size(); begin += batch) {
    const std::size_t end = std::min(songs.size(), begin + batch);
    std::vector<TokenSeq> vocals;
    std::vector<Condition> conds;
    std::vector<std::uint64_t> seeds;
    for (std::size_t n = begin; n < end; ++n) {
      vocals.push_back(songs[n].crop.vocal);
      conds.push_back(pick(songs[n], condition));
      seeds.push_back(mix_seed(seed, n));
    }
    const auto outputs = ar_generate_batch(vocals, conds, model, params, seeds);
    for (std::size_t n = begin; n < end; ++n) metrics.push_back(score_song(outputs[n - begin], songs[n].crop));
  }
  EvalReport r = aggregate(metrics, model.calls() - calls_before, nonpad_tokens(songs));
  r.condition = std::string(to_string(condition));
  r.schedule = "ar";
  r.steps = songs.empty() ? 0 : static_cast<int>(songs.front().crop.vocal.size());
  return r;
}

std::vector<EvalReport> run_suite(LogitModel& model, std::span<const EvalSong> songs, const SuiteConfig& config) {
  std::vector<EvalReport> reports;
  for (const auto condition : config.conditions) {
    for (const auto kind : config.schedules) {
      for (const int steps : config.steps) {
        SamplerParams p = config.sampler;
        p.schedule.kind = kind;
        p.steps = steps;
        try {
          reports.push_back(evaluate_cell(model, songs, condition, p, config.batch, config.seed));
        } catch (const std::exception& e) {
          spdlog::error("eval cell {}/{}/{} failed: {}", to_string(condition), to_string(kind), steps, e.what());
          EvalReport r;
          r.condition = std::string(to_string(condition));
          r.schedule = std::string(to_string(kind));
          r.steps = steps;
          r.songs = songs.size();
          r.status = std::string("error: ") + e.what();
          reports.push_back(std::move(r));
        }
      }
    }
  }
  return reports;
}

void write_reports(const std::filesystem::path& dir, std::span<const EvalReport> reports,
                   std::string_view config_hash) {
  std::filesystem::create_directories(dir);
  std::string csv = report_csv_header() + "\n";
  std::string jsonl;
  for (const auto& r : reports) {
    csv += report_csv_row(r) + "\n";
    if (config_hash.empty()) {
      jsonl += report_json(r) + "\n";
    } else {
      auto j = nlohmann::ordered_json::parse(report_json(r));
      j["config_hash"] = config_hash;
      jsonl += j.dump() + "\n";
    }
  }
  // Steps-vs-quality curve: one record per (condition, schedule), points by steps.
  std::map<std::pair<std::string, std::string>, std::vector<const EvalReport*>> curves;
  for (const auto& r : reports) curves[{r.condition, r.schedule}].push_back(&r);
  std::string curve;
  for (auto& [key, rows] : curves) {
    std::sort(rows.begin(), rows.end(), [](const EvalReport* a, const EvalReport* b) { return a->steps < b->steps; });
    nlohmann::ordered_json j;
    j["condition"] = key.first;
    j["schedule"] = key.second;
    auto points = nlohmann::json::array();
    for (const auto* r : rows) {
      points.push_back({{"steps", r->steps},
                        {"token_accuracy", jopt(r->token_accuracy)},
                        {"style_consistency", jopt(r->style_consistency)},
                        {"onset_f1", r->onset_f1},
                        {"model_calls_per_token", r->model_calls_per_token},
                        {"status", r->status}});
    }
    j["points"] = points;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    curve += j.dump() + "\n";
  }
  write_atomic(dir / "report.csv", csv);
  write_atomic(dir / "report.jsonl", jsonl);
  write_atomic(dir / "curve.jsonl", curve);
}

}  // namespace dualmask
