#include "dualmask_cli/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "dualmask_cli/manifest.hpp"

extern char** environ;

namespace dualmask::cli {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

}  // namespace

std::string env_name(std::string_view key) {
  std::string out(kEnvPrefix);
  for (char c : key) {
    out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = {
      {"seed", "0"},
      {"out", "run"},
      {"threads", "1"},
      {"log_level", "info"},

      {"model.dim", "128"},
      {"model.layers", "4"},
      {"model.heads", "4"},
      {"model.ffn_mult", "2"},
      {"model.max_len", "256"},
      {"model.layout", "dual"},
      {"model.acc_first", "false"},

      {"train.batch", "16"},
      {"train.accum", "1"},
      {"train.lambda", "0.2"},
      {"train.rtd_rho", "0.15"},
      {"train.rtd_mode", "argmax"},
      {"train.rtd_temperature", "1.0"},
      {"train.mask_schedule", "cosine"},
      {"train.mask_floor", "0.001"},
      {"train.cond_dropout", "0.5"},
      {"train.beta1", "0.9"},
      {"train.beta2", "0.999"},
      {"train.eps", "1e-8"},
      {"train.weight_decay", "0.01"},
      {"train.clip", "1.0"},
      {"train.objective", "masked"},

      {"stage1.seq_len", "64"},
      {"stage1.span", "256"},
      {"stage1.steps", "1000"},
      {"stage1.lr", "0.003"},
      {"stage1.warmup", "50"},
      {"stage2.enabled", "true"},
      {"stage2.seq_len", "256"},
      {"stage2.steps", "100"},
      {"stage2.lr", "0.001"},
      {"stage2.warmup", "10"},
      {"stage2.filtered", "true"},

      {"data.seed", "1"},
      {"data.ref_len", "16"},
      {"data.styles", "4"},
      {"data.label_noise", "0"},
      {"data.long_intro_p", "0.2"},
      {"data.songs", "200"},
      {"data.length", "280"},
      {"data.output", "dataset.jsonl"},

      {"sampler.steps", "60"},
      {"sampler.top_k", "100"},
      {"sampler.top_p", "0.9"},
      {"sampler.temperature", "1.0"},
      {"sampler.mask_temperature", "10.5"},
      {"sampler.guidance", "1.0"},
      {"sampler.schedule", "cosine"},

      {"ar.temperature", "1.0"},
      {"ar.top_k", "100"},
      {"ar.top_p", "0.9"},

      {"checkpoint", ""},
      {"input", ""},
      {"zero_shot", "false"},
      {"ar_mode", "false"},

      {"eval.songs", "200"},
      {"eval.seq_len", "256"},
      {"eval.data_seed", "1001"},
      {"eval.conditions", "full,zero_shot"},
      {"eval.schedules", "cosine,linear,power"},
      {"eval.steps", "1,5,20,60"},
      {"eval.batch", "16"},

      {"ablate.arms", "full,no_stage2,ar,single_stream,no_rtd"},
      {"ablate.seeds", "3"},
      {"ablate.songs", "64"},

      {"augment.p", "0.7"},
      {"augment.target_db", "-16"},
      {"augment.peak_db", "-1"},
      {"augment.rate", "48000"},
      {"augment.output", "augmented.wav"},
      {"augment.format", "float32"},
  };
  return table;
}

bool RunConfig::known(std::string_view key) {
  const auto& d = defaults();
  return std::any_of(d.begin(), d.end(), [&](const auto& kv) { return kv.first == key; });
}

RunConfig::RunConfig() {
  for (const auto& [k, v] : defaults()) values_[k] = v;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError(key, "unknown key");
  values_[key] = value;
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(body, origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  load_text(ss.str(), path.string());
}

void RunConfig::apply_env() {
  std::map<std::string, std::string> by_env;
  for (const auto& [k, v] : defaults()) by_env[env_name(k)] = k;
  for (char** e = environ; e && *e; ++e) {
    const std::string_view entry(*e);
    if (!entry.starts_with(kEnvPrefix)) continue;
    const auto eq = entry.find('=');
    const std::string name(entry.substr(0, eq));
    const auto it = by_env.find(name);
    if (it == by_env.end()) throw ConfigError(name, "unknown environment override");
    set(it->second, eq == std::string_view::npos ? "" : std::string(entry.substr(eq + 1)));
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(key, "unknown key");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key, "expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& s = get(key);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(key, "expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + s + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream is(get(key));
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  // Where and how a run executes does not change what it computes.
  std::string content;
  for (const auto& [k, v] : values_) {
    if (k != "out" && k != "threads" && k != "log_level") content += k + " = " + v + "\n";
  }
  return git_blob_hash(content);
}

CurriculumConfig RunConfig::curriculum() const {
  CurriculumConfig c;
  const std::uint64_t seed = get_u64("seed");
  auto positive = [&](const std::string& key) {
    const auto v = get_int(key);
    if (v <= 0) throw ConfigError(key, "must be positive");
    return static_cast<std::size_t>(v);
  };
  auto non_negative = [&](const std::string& key) {
    const auto v = get_int(key);
    if (v < 0) throw ConfigError(key, "must be non-negative");
    return v;
  };

  c.model.dim = positive("model.dim");
  c.model.layers = static_cast<int>(positive("model.layers"));
  c.model.heads = static_cast<int>(positive("model.heads"));
  c.model.ffn_mult = static_cast<int>(positive("model.ffn_mult"));
  c.model.max_len = positive("model.max_len");
  c.model.styles = static_cast<int>(positive("data.styles"));
  c.model.seed = seed;
  const std::string& layout = get("model.layout");
  if (layout == "dual") {
    c.model.layout = Layout::dual;
  } else if (layout == "single_stream") {
    c.model.layout = Layout::single_stream;
  } else {
    throw ConfigError("model.layout", "expected dual or single_stream, got '" + layout + "'");
  }
  c.model.acc_first = get_bool("model.acc_first");
  try {
    c.model.validate();
  } catch (const std::exception& e) {
    throw ConfigError("model.dim", e.what());
  }

  c.train.batch = positive("train.batch");
  c.train.accum = static_cast<int>(positive("train.accum"));
  c.train.lambda = get_double("train.lambda");
  if (c.train.lambda < 0.0) throw ConfigError("train.lambda", "must be non-negative");
  c.train.rtd.rho = get_double("train.rtd_rho");
  if (c.train.rtd.rho < 0.0 || c.train.rtd.rho > 1.0) throw ConfigError("train.rtd_rho", "must lie in [0,1]");
  try {
    c.train.rtd.mode = parse_rtd_mode(get("train.rtd_mode"));
    c.train.schedule.kind = parse_schedule_kind(get("train.mask_schedule"));
  } catch (const std::exception& e) {
    throw ConfigError("train.rtd_mode/train.mask_schedule", e.what());
  }
  c.train.rtd.temperature = get_double("train.rtd_temperature");
  c.train.schedule.floor = get_double("train.mask_floor");
  c.train.cond_dropout = get_double("train.cond_dropout");
  if (c.train.cond_dropout < 0.0 || c.train.cond_dropout > 1.0) {
    throw ConfigError("train.cond_dropout", "must lie in [0,1]");
  }
  c.train.adam.beta1 = get_double("train.beta1");
  c.train.adam.beta2 = get_double("train.beta2");
  c.train.adam.eps = get_double("train.eps");
  c.train.adam.weight_decay = get_double("train.weight_decay");
  c.train.clip = get_double("train.clip");
  const std::string& obj = get("train.objective");
  if (obj == "masked") {
    c.train.objective = Objective::masked;
  } else if (obj == "autoregressive") {
    c.train.objective = Objective::autoregressive;
  } else {
    throw ConfigError("train.objective", "expected masked or autoregressive, got '" + obj + "'");
  }
  c.train.seed = seed;

  c.stage1.seq_len = positive("stage1.seq_len");
  c.stage1.span = static_cast<std::size_t>(non_negative("stage1.span"));
  c.stage1.steps = non_negative("stage1.steps");
  c.stage1.lr = {get_double("stage1.lr"), non_negative("stage1.warmup"), c.stage1.steps};
  c.stage1.filtered = false;
  c.run_stage2 = get_bool("stage2.enabled");
  c.stage2.seq_len = positive("stage2.seq_len");
  c.stage2.steps = non_negative("stage2.steps");
  c.stage2.lr = {get_double("stage2.lr"), non_negative("stage2.warmup"), c.stage2.steps};
  c.stage2.filtered = get_bool("stage2.filtered");

  c.data.styles = c.model.styles;
  c.data.label_noise = get_double("data.label_noise");
  c.data.long_intro_p = get_double("data.long_intro_p");
  c.ref_len = positive("data.ref_len");
  c.data_seed = get_u64("data.seed");
  c.out_dir = get("out");
  c.config_echo = echo();
  return c;
}

SamplerParams RunConfig::sampler() const {
  SamplerParams p;
  p.steps = static_cast<int>(get_int("sampler.steps"));
  p.top_k = static_cast<int>(get_int("sampler.top_k"));
  p.top_p = get_double("sampler.top_p");
  p.temperature = get_double("sampler.temperature");
  p.mask_temperature = get_double("sampler.mask_temperature");
  p.guidance = get_double("sampler.guidance");
  try {
    p.schedule.kind = parse_schedule_kind(get("sampler.schedule"));
    p.validate();
  } catch (const std::exception& e) {
    throw ConfigError("sampler.*", e.what());
  }
  p.seed = get_u64("seed");
  return p;
}

ArParams RunConfig::ar() const {
  ArParams p;
  p.temperature = get_double("ar.temperature");
  p.top_k = static_cast<int>(get_int("ar.top_k"));
  p.top_p = get_double("ar.top_p");
  if (p.temperature < 0.0) throw ConfigError("ar.temperature", "must be non-negative");
  if (p.top_k < 1) throw ConfigError("ar.top_k", "must be at least 1");
  if (!(p.top_p > 0.0 && p.top_p <= 1.0)) throw ConfigError("ar.top_p", "must lie in (0,1]");
  p.seed = get_u64("seed");
  return p;
}

SuiteConfig RunConfig::suite() const {
  SuiteConfig s;
  s.sampler = sampler();
  s.conditions.clear();
  for (const auto& c : get_list("eval.conditions")) {
    try {
      s.conditions.push_back(parse_condition(c));
    } catch (const std::exception& e) {
      throw ConfigError("eval.conditions", e.what());
    }
  }
  s.schedules.clear();
  for (const auto& k : get_list("eval.schedules")) {
    try {
      s.schedules.push_back(parse_schedule_kind(k));
    } catch (const std::exception& e) {
      throw ConfigError("eval.schedules", e.what());
    }
  }
  s.steps.clear();
  for (const auto& n : get_list("eval.steps")) {
    int v = 0;
    const auto [p, ec] = std::from_chars(n.data(), n.data() + n.size(), v);
    if (ec != std::errc() || p != n.data() + n.size() || v < 1) {
      throw ConfigError("eval.steps", "expected positive integers, got '" + n + "'");
    }
    s.steps.push_back(v);
  }
  if (s.conditions.empty() || s.schedules.empty() || s.steps.empty()) {
    throw ConfigError("eval.*", "conditions, schedules and steps must be non-empty");
  }
  const auto batch = get_int("eval.batch");
  if (batch < 1) throw ConfigError("eval.batch", "must be positive");
  s.batch = static_cast<std::size_t>(batch);
  s.seed = get_u64("seed");
  return s;
}

AugConfig RunConfig::augment() const {
  AugConfig a;
  a.activation_p = get_double("augment.p");
  if (a.activation_p < 0.0 || a.activation_p > 1.0) throw ConfigError("augment.p", "must lie in [0,1]");
  a.target_rms_db = get_double("augment.target_db");
  a.peak_cap_db = get_double("augment.peak_db");
  return a;
}

}  // namespace dualmask::cli
