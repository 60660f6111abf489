#include "dualmask_cli/commands.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "dualmask/audio_io.hpp"
#include "dualmask/checkpoint.hpp"
#include "dualmask_cli/manifest.hpp"

namespace dualmask::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

RunManifest base_manifest(const std::string& command, const RunConfig& cfg) {
  RunManifest m;
  m.command = command;
  m.config_echo = cfg.echo();
  m.config_hash = cfg.hash();
  m.dataset_seed = cfg.get_u64("data.seed");
  return m;
}

void finish(RunManifest& m, const fs::path& out, Clock::time_point t0, int code) {
  m.seconds = seconds_since(t0);
  m.exit_code = code;
  write_manifest(out, m);
}

void attach_checkpoint(RunManifest& m, const fs::path& ckpt) {
  m.checkpoint = ckpt.string();
  m.checkpoint_hash = git_blob_hash_file(ckpt);
}

/// Model described by the run config, filled from `checkpoint`; a shape
/// mismatch surfaces as a DimensionError naming every differing field.
struct LoadedModel {
  Predictor model;
  CheckpointMeta meta;
};

LoadedModel load_model(const RunConfig& cfg) {
  const std::string& path = cfg.get("checkpoint");
  if (path.empty()) throw ConfigError("checkpoint", "a checkpoint path is required");
  LoadedModel lm{Predictor(cfg.curriculum().model), {}};
  lm.meta = load_into(path, lm.model);
  return lm;
}

struct TrainOutcome {
  fs::path checkpoint;
  std::vector<std::string> outputs;
};

/// Runs the curriculum into cfg.out, streaming one log line per step to
/// loss.jsonl. Stage 2 runs only when enabled and given a positive budget.
TrainOutcome train_into(const RunConfig& cfg) {
  CurriculumConfig cc = cfg.curriculum();
  cc.run_stage2 = cc.run_stage2 && cc.stage2.steps > 0;
  fs::create_directories(cc.out_dir);
  const fs::path log_path = cc.out_dir / "loss.jsonl";
  const fs::path tmp = log_path.string() + ".tmp";
  TrainOutcome outcome;
  {
    std::ofstream log(tmp, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + tmp.string());
    const CurriculumResult res = run_curriculum(cc, [&](const LossRecord& r) { log << to_log_line(r) << '\n'; });
    outcome.checkpoint = res.stage2_checkpoint.value_or(res.stage1_checkpoint);
    outcome.outputs.push_back(res.stage1_checkpoint.string());
    if (res.stage2_checkpoint) outcome.outputs.push_back(res.stage2_checkpoint->string());
  }
  fs::rename(tmp, log_path);
  outcome.outputs.push_back(log_path.string());
  return outcome;
}

std::vector<EvalReport> evaluate_model(const Predictor& model, bool autoregressive, std::span<const EvalSong> songs,
                                       const RunConfig& cfg, const SuiteConfig& suite) {
  if (!autoregressive) {
    PredictorLogitModel lm(model);
    return run_suite(lm, songs, suite);
  }
  PredictorArModel am(model);
  const ArParams ap = cfg.ar();
  std::vector<EvalReport> reports;
  for (const auto c : suite.conditions) {
    try {
      reports.push_back(evaluate_ar(am, songs, c, ap, suite.batch, suite.seed));
    } catch (const std::exception& e) {
      spdlog::error("ar eval {} failed: {}", to_string(c), e.what());
      EvalReport r;
      r.condition = std::string(to_string(c));
      r.schedule = "ar";
      r.status = std::string("error: ") + e.what();
      reports.push_back(r);
    }
  }
  return reports;
}

bool all_ok(std::span<const EvalReport> reports) {
  return std::all_of(reports.begin(), reports.end(), [](const EvalReport& r) { return r.status == "ok"; });
}

}  // namespace

std::vector<SynthInstance> held_out_instances(std::size_t count, std::size_t length, const SynthConfig& data,
                                              std::uint64_t data_seed) {
  SynthConfig clean = data;
  clean.label_noise = 0.0;
  std::vector<SynthInstance> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint64_t seed = mix_seed(data_seed, n);
    Rng rng(seed);
    const int style = uniform_int(rng, 0, clean.styles - 1);
    SynthInstance inst = gen_pair(style, length, clean, rng);
    inst.seed = seed;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<SynthInstance> read_dataset(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read dataset " + path.string());
  std::vector<SynthInstance> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(from_record(line));
  }
  return out;
}

std::vector<EvalSong> load_eval_songs(const RunConfig& cfg, std::size_t count) {
  const auto seq_len = static_cast<std::size_t>(cfg.get_int("eval.seq_len"));
  const auto ref_len = static_cast<std::size_t>(cfg.get_int("data.ref_len"));
  const std::uint64_t seed = cfg.get_u64("eval.data_seed");
  std::vector<SynthInstance> instances;
  if (const std::string& input = cfg.get("input"); !input.empty()) {
    instances = read_dataset(input);
    if (instances.size() > count) instances.resize(count);
  } else {
    instances = held_out_instances(count, seq_len + ref_len + 8, cfg.curriculum().data, seed);
  }
  return make_eval_songs(instances, seq_len, ref_len, seed);
}

int cmd_train(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const fs::path out = cfg.get("out");
  RunManifest m = base_manifest("train", cfg);
  try {
    const TrainOutcome res = train_into(cfg);
    attach_checkpoint(m, res.checkpoint);
    m.outputs = res.outputs;
  } catch (const TrainingError& e) {
    spdlog::error("training aborted at step {}: {}", e.step(), e.what());
    finish(m, out, t0, kNanAbort);
    return kNanAbort;
  }
  finish(m, out, t0, kOk);
  spdlog::info("train finished in {:.1f}s; checkpoint {}", m.seconds, m.checkpoint);
  return kOk;
}

int cmd_sample(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const fs::path out = cfg.get("out");
  RunManifest m = base_manifest("sample", cfg);
  const LoadedModel lm = load_model(cfg);
  const bool ar_mode = cfg.get_bool("ar_mode");
  const bool autoregressive = lm.meta.objective == "autoregressive";
  if (ar_mode != autoregressive) {
    throw std::runtime_error(std::string("checkpoint objective is '") + lm.meta.objective + "' but ar_mode is " +
                             (ar_mode ? "true" : "false"));
  }
  const bool zero_shot = cfg.get_bool("zero_shot");
  const auto songs = load_eval_songs(cfg, static_cast<std::size_t>(cfg.get_int("eval.songs")));
  const auto batch = static_cast<std::size_t>(cfg.get_int("eval.batch"));
  const std::uint64_t seed = cfg.get_u64("seed");
  const std::string hash = cfg.hash();

  const SamplerParams sp = cfg.sampler();
  const ArParams ap = cfg.ar();
  PredictorLogitModel masked_model(lm.model);
  PredictorArModel ar_model(lm.model);
  std::string records;
  for (std::size_t begin = 0; begin < songs.size(); begin += batch) {
    const std::size_t end = std::min(songs.size(), begin + batch);
    std::vector<TokenSeq> vocals;
    std::vector<Condition> conds;
    std::vector<std::uint64_t> seeds;
    for (std::size_t n = begin; n < end; ++n) {
      vocals.push_back(songs[n].crop.vocal);
      conds.push_back(zero_shot ? Condition::none() : songs[n].full);
      seeds.push_back(mix_seed(seed, n));
    }
    std::size_t calls_before = ar_mode ? ar_model.calls() : masked_model.calls();
    const auto outputs = ar_mode ? ar_generate_batch(vocals, conds, ar_model, ap, seeds)
                                 : generate_batch(vocals, conds, masked_model, sp, seeds);
    const std::size_t calls = (ar_mode ? ar_model.calls() : masked_model.calls()) - calls_before;
    for (std::size_t n = begin; n < end; ++n) {
      nlohmann::ordered_json j;
      j["index"] = n;
      j["V"] = vocals[n - begin];
      j["A_hat"] = outputs[n - begin];
      j["condition"] = zero_shot ? "zero_shot" : "full";
      j["decoder"] = ar_mode ? "ar" : "masked";
      j["seed"] = seeds[n - begin];
      j["model_calls"] = calls / (end - begin);
      j["config_hash"] = hash;
      records += j.dump() + "\n";
    }
  }
  const fs::path path = out / "samples.jsonl";
  write_file_atomic(path, records);
  m.checkpoint = cfg.get("checkpoint");
  m.checkpoint_hash = git_blob_hash_file(m.checkpoint);
  m.outputs = {path.string()};
  finish(m, out, t0, kOk);
  spdlog::info("wrote {} samples to {}", songs.size(), path.string());
  return kOk;
}

int cmd_eval(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const fs::path out = cfg.get("out");
  RunManifest m = base_manifest("eval", cfg);
  const LoadedModel lm = load_model(cfg);
  const SuiteConfig suite = cfg.suite();
  const auto songs = load_eval_songs(cfg, static_cast<std::size_t>(cfg.get_int("eval.songs")));
  const auto reports = evaluate_model(lm.model, lm.meta.objective == "autoregressive", songs, cfg, suite);
  write_reports(out, reports, cfg.hash());
  m.checkpoint = cfg.get("checkpoint");
  m.checkpoint_hash = git_blob_hash_file(m.checkpoint);
  m.outputs = {(out / "report.csv").string(), (out / "report.jsonl").string(), (out / "curve.jsonl").string()};
  const int code = all_ok(reports) ? kOk : kFailed;
  finish(m, out, t0, code);
  spdlog::info("eval: {} cells, {}", reports.size(), code == kOk ? "all ok" : "some cells failed");
  return code;
}

RunConfig arm_config(const RunConfig& base, const std::string& arm, std::uint64_t seed, const fs::path& out) {
  RunConfig c = base;
  c.set("seed", std::to_string(seed));
  c.set("out", out.string());
  if (arm == "full") {
  } else if (arm == "no_stage2") {
    c.set("stage2.enabled", "false");
  } else if (arm == "ar") {
    c.set("train.objective", "autoregressive");
  } else if (arm == "single_stream") {
    c.set("model.layout", "single_stream");
  } else if (arm == "no_rtd") {
    c.set("train.lambda", "0");
  } else {
    throw ConfigError("ablate.arms", "unknown arm '" + arm + "'");
  }
  return c;
}

ArmResult run_arm(const RunConfig& base, const std::string& arm, std::uint64_t seed, const fs::path& root,
                  std::span<const EvalSong> songs) {
  ArmResult res;
  res.arm = arm;
  res.seed = seed;
  const fs::path dir = root / arm / ("seed_" + std::to_string(seed));
  try {
    const RunConfig cfg = arm_config(base, arm, seed, dir);
    fs::path ckpt;
    // The no-stage-2 arm is the full arm's stage-1 model when that exists.
    const fs::path shared = root / "full" / ("seed_" + std::to_string(seed)) / "stage1.ckpt";
    if (arm == "no_stage2" && fs::exists(shared)) {
      spdlog::info("arm no_stage2 seed {}: reusing {}", seed, shared.string());
      ckpt = shared;
    } else {
      spdlog::info("arm {} seed {}: training into {}", arm, seed, dir.string());
      ckpt = train_into(cfg).checkpoint;
    }
    Predictor model(cfg.curriculum().model);
    const CheckpointMeta meta = load_into(ckpt, model);
    SuiteConfig suite = cfg.suite();
    suite.schedules = {suite.sampler.schedule.kind};
    suite.steps = {suite.sampler.steps};
    res.reports = evaluate_model(model, meta.objective == "autoregressive", songs, cfg, suite);
    write_reports(dir / "eval", res.reports, cfg.hash());
    if (!all_ok(res.reports)) res.status = "failed: evaluation cell error";
  } catch (const std::exception& e) {
    spdlog::error("arm {} seed {} failed: {}", arm, seed, e.what());
    res.status = std::string("failed: ") + e.what();
  }
  return res;
}

int cmd_ablate(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const fs::path out = cfg.get("out");
  RunManifest m = base_manifest("ablate", cfg);
  const auto arms = cfg.get_list("ablate.arms");
  const std::set<std::string> allowed(ablation_arms().begin(), ablation_arms().end());
  for (const auto& a : arms) {
    if (!allowed.count(a)) throw ConfigError("ablate.arms", "unknown arm '" + a + "'");
  }
  const auto n_seeds = cfg.get_int("ablate.seeds");
  if (n_seeds < 1) throw ConfigError("ablate.seeds", "must be positive");
  const auto songs = load_eval_songs(cfg, static_cast<std::size_t>(cfg.get_int("ablate.songs")));
  const std::uint64_t seed0 = cfg.get_u64("seed");

  // Full first so the no-stage-2 arm can reuse its stage-1 checkpoint.
  std::vector<std::string> order = arms;
  std::stable_partition(order.begin(), order.end(), [](const std::string& a) { return a == "full"; });

  std::vector<ArmResult> results;
  for (std::int64_t k = 0; k < n_seeds; ++k) {
    for (const auto& arm : order) results.push_back(run_arm(cfg, arm, seed0 + static_cast<std::uint64_t>(k), out, songs));
  }

  std::string csv = "arm,seed,arm_status," + report_csv_header() + "\n";
  std::string jsonl;
  const std::string hash = cfg.hash();
  bool ok = true;
  for (const auto& r : results) {
    ok = ok && r.status == "ok";
    if (r.reports.empty()) {
      EvalReport blank;
      blank.status = r.status;
      csv += r.arm + "," + std::to_string(r.seed) + "," + r.status + "," + report_csv_row(blank) + "\n";
    }
    for (const auto& rep : r.reports) {
      csv += r.arm + "," + std::to_string(r.seed) + "," + r.status + "," + report_csv_row(rep) + "\n";
      auto j = nlohmann::ordered_json::parse(report_json(rep));
      j["arm"] = r.arm;
      j["seed"] = r.seed;
      j["arm_status"] = r.status;
      j["config_hash"] = hash;
      jsonl += j.dump() + "\n";
    }
  }
  write_file_atomic(out / "ablate.csv", csv);
  write_file_atomic(out / "ablate.jsonl", jsonl);
  m.outputs = {(out / "ablate.csv").string(), (out / "ablate.jsonl").string()};
  const int code = ok ? kOk : kFailed;
  finish(m, out, t0, code);
  return code;
}

int cmd_augment(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const fs::path out = cfg.get("out");
  RunManifest m = base_manifest("augment", cfg);
  const fs::path input = cfg.get("input");
  if (input.empty()) throw ConfigError("input", "an input audio path is required");
  const double rate = cfg.get_double("augment.rate");
  if (!(rate > 0.0)) throw ConfigError("augment.rate", "must be positive");
  const std::string ext = input.extension().string();
  AudioBuffer buf;
  if (ext == ".wav") {
    buf = read_wav(input);
  } else if (ext == ".f32" || ext == ".raw") {
    buf = read_raw_f32(input, rate);
  } else {
    throw std::runtime_error("unsupported audio format '" + ext + "' (expected .wav, .f32 or .raw)");
  }

  Rng rng(mix_seed(cfg.get_u64("seed"), 0xa06));
  const AugmentResult res = maybe_augment(buf, cfg.augment(), rng);

  const fs::path output = out / cfg.get("augment.output");
  fs::create_directories(output.parent_path());
  const std::string fmt = cfg.get("augment.format");
  if (output.extension() == ".wav") {
    if (fmt != "float32" && fmt != "pcm16") throw ConfigError("augment.format", "expected float32 or pcm16");
    write_wav(output, res.buffer, fmt == "pcm16" ? WavFormat::pcm16 : WavFormat::float32);
  } else {
    write_raw_f32(output, res.buffer);
  }
  auto j = nlohmann::ordered_json::parse(params_json(res.params, res.applied, res.gain));
  j["input"] = input.string();
  j["config_hash"] = cfg.hash();
  const fs::path log = out / "augment_params.jsonl";
  write_file_atomic(log, j.dump() + "\n");
  m.outputs = {output.string(), log.string()};
  finish(m, out, t0, kOk);
  spdlog::info("augment: applied={} gain={:.6f}", res.applied, res.gain);
  return kOk;
}

int cmd_gen_data(const RunConfig& cfg) {
  const auto t0 = Clock::now();
  const fs::path out = cfg.get("out");
  RunManifest m = base_manifest("gen-data", cfg);
  const auto count = cfg.get_int("data.songs");
  const auto length = cfg.get_int("data.length");
  if (count < 0) throw ConfigError("data.songs", "must be non-negative");
  if (length < 8) throw ConfigError("data.length", "must be at least 8");
  const auto instances = held_out_instances(static_cast<std::size_t>(count), static_cast<std::size_t>(length),
                                            cfg.curriculum().data, cfg.get_u64("data.seed"));
  std::string text;
  for (const auto& inst : instances) text += to_record(inst) + "\n";
  const fs::path path = out / cfg.get("data.output");
  write_file_atomic(path, text);
  m.outputs = {path.string()};
  finish(m, out, t0, kOk);
  return kOk;
}

int run_command(const std::string& name, const RunConfig& cfg) {
  if (name == "train") return cmd_train(cfg);
  if (name == "sample") return cmd_sample(cfg);
  if (name == "eval") return cmd_eval(cfg);
  if (name == "ablate") return cmd_ablate(cfg);
  if (name == "augment") return cmd_augment(cfg);
  if (name == "gen-data") return cmd_gen_data(cfg);
  throw std::runtime_error("unknown command '" + name + "'");
}

int cmd_replay(const fs::path& manifest, const std::optional<fs::path>& out) {
  const RunManifest m = read_manifest(manifest);
  RunConfig cfg;
  cfg.load_text(m.config_echo, manifest.string());
  cfg.set("out", (out ? *out : manifest.parent_path() / "replay").string());
  spdlog::info("replaying '{}' (config {}) into {}", m.command, m.config_hash, cfg.get("out"));
  return run_command(m.command, cfg);
}

}  // namespace dualmask::cli
