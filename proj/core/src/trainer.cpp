#include "dualmask/trainer.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>

#include "dualmask/checkpoint.hpp"

namespace dualmask {

LossBreakdown total_loss(double cml, double rtd, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("total_loss: lambda must be non-negative");
  LossBreakdown lb;
  lb.cml = cml;
  lb.rtd = rtd;
  lb.lambda = lambda;
  lb.total = cml + lambda * rtd;
  return lb;
}

std::vector<double> cml_weights(const TokenSeq& clean, const CorruptionRecord& rec, const Vocab& vocab, double scale) {
  if (clean.size() != rec.corrupted.size() || rec.mask_set.size() != clean.size()) {
    throw ContractError("cml_loss: record and clean sequence lengths differ");
  }
  if (!(rec.t > 0.0 && rec.t <= 1.0)) throw ContractError("cml_loss: record t outside (0, 1]");
  const std::size_t n = nonpad_length(clean, vocab.acc_pad());
  std::vector<double> w(clean.size(), 0.0);
  const double weight = scale / (std::max(rec.t, kMinLossRatio) * static_cast<double>(n));
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (!rec.mask_set[i]) continue;
    if (i >= n) throw ContractError("cml_loss: mask set contains pad position " + std::to_string(i));
    w[i] = weight;
  }
  return w;
}

Flags rtd_scored(const CorruptionRecord& rec, const Vocab& vocab) {
  Flags scored(rec.corrupted.size(), 0);
  const std::size_t n = nonpad_length(rec.corrupted, vocab.acc_pad());
  for (std::size_t i = 0; i < n; ++i) scored[i] = rec.mask_set[i] ? 0 : 1;
  return scored;
}

Tensor cml_loss(const Tensor& logits, const TokenSeq& clean, const CorruptionRecord& rec, const Vocab& vocab) {
  return weighted_cross_entropy(logits, clean, cml_weights(clean, rec, vocab));
}

Tensor rtd_loss(const Tensor& rtd_logits, const CorruptionRecord& rec, const Vocab& vocab) {
  if (!rec.rtd_labels) throw ContractError("rtd_loss: record carries no replaced-token labels");
  const Flags scored = rtd_scored(rec, vocab);
  std::size_t count = 0;
  for (auto s : scored) count += s;
  std::vector<double> w(scored.size(), 0.0);
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i]) w[i] = 1.0 / static_cast<double>(count);
  }
  return weighted_bce_with_logits(rtd_logits, *rec.rtd_labels, w);
}

// -------------------------------------------------------------------- Trainer

Trainer::Trainer(Predictor& model, TrainConfig config) : model_(model), config_(config), adam_(config.adam) {
  if (config_.batch == 0 || config_.accum < 1) throw ContractError("train.batch and train.accum must be positive");
  if (!(config_.lambda >= 0.0)) throw ContractError("train.lambda must be non-negative");
}

namespace {

struct PrefixChoice {
  std::optional<int> style;
  std::optional<std::span<const int>> reference;
};

PrefixChoice choose_prefix(const TrainItem& item, double dropout_p, bool training, Rng& rng) {
  PrefixChoice c{item.style, std::nullopt};
  if (!item.reference.empty()) c.reference = std::span<const int>(item.reference);
  if (training) {
    // Both uniforms are drawn unconditionally so the stream does not depend on p.
    const bool drop_style = uniform01(rng) < dropout_p;
    const bool drop_ref = uniform01(rng) < dropout_p;
    if (drop_style) c.style.reset();
    if (drop_ref) c.reference.reset();
  }
  return c;
}

std::vector<Example> make_examples(const Predictor& model, std::span<const TrainItem> items,
                                   std::span<const PrefixChoice> choices, const std::vector<TokenSeq>& accomp_inputs) {
  Rng unused(0);
  std::vector<Example> ex;
  ex.reserve(items.size());
  for (std::size_t b = 0; b < items.size(); ++b) {
    ex.push_back({items[b].vocal, accomp_inputs[b],
                  model.prefix(choices[b].style, choices[b].reference, 0.0, false, unused), items[b].offset});
  }
  return ex;
}

LogitTable item_logits(const Tensor& logits, std::size_t item, std::size_t t) {
  LogitTable table(t, logits.cols());
  const auto src = logits.data().subspan(item * t * logits.cols(), t * logits.cols());
  std::copy(src.begin(), src.end(), table.values.begin());
  return table;
}

}  // namespace

LossBreakdown Trainer::accumulate(std::span<const TrainItem> items, Rng& rng, SobolState* sobol, bool training,
                                  double factor) const {
  const Vocab& vocab = model_.config().vocab;
  const std::size_t batch = items.size();
  const std::size_t t_len = items.front().vocal.size();
  for (const auto& it : items) {
    if (it.vocal.size() != t_len || it.accomp.size() != t_len) {
      throw ContractError("train_step: batch sequences must share one length");
    }
  }

  std::vector<PrefixChoice> choices;
  choices.reserve(batch);
  for (const auto& it : items) choices.push_back(choose_prefix(it, config_.cond_dropout, training, rng));

  LossBreakdown lb;
  lb.lambda = config_.lambda;

  if (config_.objective == Objective::autoregressive) {
    std::vector<TokenSeq> inputs;
    TokenSeq targets;
    Flags active;
    for (const auto& it : items) {
      inputs.push_back(ar_shift(it.accomp, vocab));
      const std::size_t n = nonpad_length(it.accomp, vocab.acc_pad());
      for (std::size_t i = 0; i < t_len; ++i) {
        targets.push_back(i < n ? it.accomp[i] : 0);
        active.push_back(i < n ? 1 : 0);
      }
    }
    Tape tape;
    std::optional<TapeScope> scope;
    if (training) scope.emplace(tape);
    const auto ex = make_examples(model_, items, choices, inputs);
    const PredictorOutput out = model_.ar_forward(model_.encode(ex));
    const Tensor loss = scale(softmax_cross_entropy(out.logits, targets, active), factor);
    lb.cml = loss.item();
    lb.total = lb.cml;
    for (auto a : active) lb.masked_count += a;
    if (!std::isfinite(lb.total)) return lb;
    if (training) backward(loss);
    return lb;
  }

  // Forward masking with a per-item progress draw.
  std::vector<CorruptionRecord> recs;
  std::vector<TokenSeq> masked;
  double t_sum = 0.0;
  for (const auto& it : items) {
    const double r = sobol ? sobol->next() : uniform01(rng);
    const double t = mask_ratio(r, config_.schedule);
    recs.push_back(mask_forward(it.accomp, t, vocab, rng));
    masked.push_back(recs.back().corrupted);
    t_sum += t;
    for (auto m : recs.back().mask_set) lb.masked_count += m;
  }
  lb.t_used = t_sum / static_cast<double>(batch);

  // Replacement proposals from a detached pass over the masked input.
  const PredictorOutput proposal = model_.forward(model_.encode(make_examples(model_, items, choices, masked)));
  std::vector<TokenSeq> corrupted;
  for (std::size_t b = 0; b < batch; ++b) {
    const LogitTable table = item_logits(proposal.logits, b, t_len);
    CorruptionRecord rtd = rtd_corrupt(recs[b].corrupted, &table, config_.rtd, vocab, rng);
    recs[b].corrupted = rtd.corrupted;
    recs[b].rtd_labels = std::move(rtd.rtd_labels);
    corrupted.push_back(recs[b].corrupted);
  }

  TokenSeq targets;
  std::vector<double> cml_w;
  Flags labels;
  std::vector<double> rtd_w;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto w = cml_weights(items[b].accomp, recs[b], vocab, factor / static_cast<double>(batch));
    cml_w.insert(cml_w.end(), w.begin(), w.end());
    const std::size_t n = nonpad_length(items[b].accomp, vocab.acc_pad());
    for (std::size_t i = 0; i < t_len; ++i) targets.push_back(i < n ? items[b].accomp[i] : 0);
    const Flags scored = rtd_scored(recs[b], vocab);
    std::size_t count = 0;
    for (auto s : scored) count += s;
    for (std::size_t i = 0; i < t_len; ++i) {
      labels.push_back((*recs[b].rtd_labels)[i]);
      rtd_w.push_back(scored[i] ? factor / (static_cast<double>(batch) * static_cast<double>(count)) : 0.0);
    }
  }

  Tape tape;
  std::optional<TapeScope> scope;
  if (training) scope.emplace(tape);
  const PredictorOutput out = model_.forward(model_.encode(make_examples(model_, items, choices, corrupted)));
  const Tensor cml = weighted_cross_entropy(out.logits, targets, cml_w);
  const Tensor rtd = weighted_bce_with_logits(out.rtd_logits, labels, rtd_w);
  lb.cml = cml.item();
  lb.rtd = rtd.item();
  lb.total = lb.cml + config_.lambda * lb.rtd;
  if (!std::isfinite(lb.total)) return lb;
  if (training) {
    const Tensor total = config_.lambda > 0.0 ? add(cml, scale(rtd, config_.lambda)) : cml;
    backward(total);
  }
  return lb;
}

StepResult Trainer::train_step(const std::vector<TrainItem>& items, const LrSchedule& lr) {
  if (items.size() != config_.batch * static_cast<std::size_t>(config_.accum)) {
    throw ContractError("train_step: expected " + std::to_string(config_.batch * config_.accum) + " items, got " +
                        std::to_string(items.size()));
  }
  StepResult res;
  res.batch_seed = mix_seed(config_.seed, static_cast<std::uint64_t>(step_));
  Rng rng(res.batch_seed);
  ParamList& params = model_.params();
  const SobolState saved = sobol_;
  auto abort = [&](const std::string& why) {
    zero_grads(params);
    sobol_ = saved;
    throw TrainingError(why + " at step " + std::to_string(step_) + " (batch seed " + std::to_string(res.batch_seed) +
                            ")",
                        step_, res.batch_seed);
  };

  zero_grads(params);
  const double share = 1.0 / config_.accum;
  std::span<const TrainItem> all(items);
  for (int a = 0; a < config_.accum; ++a) {
    const LossBreakdown lb = accumulate(all.subspan(static_cast<std::size_t>(a) * config_.batch, config_.batch), rng,
                                        &sobol_, true, share);
    if (!std::isfinite(lb.total)) abort("non-finite loss");
    res.loss.cml += lb.cml;
    res.loss.rtd += lb.rtd;
    res.loss.total += lb.total;
    res.loss.t_used += lb.t_used * share;
    res.loss.masked_count += lb.masked_count;
  }
  res.loss.lambda = config_.lambda;
  res.grad_norm = clip_grad_norm(params, config_.clip);
  if (!std::isfinite(res.grad_norm)) abort("non-finite gradient norm");
  res.lr = lr_at(step_, lr);
  try {
    adam_.step(params, res.lr);
  } catch (const OptimizerError& e) {
    abort(e.what());
  }
  zero_grads(params);
  ++step_;
  return res;
}

LossBreakdown Trainer::evaluate(const std::vector<TrainItem>& items, std::uint64_t seed) const {
  Rng rng(seed);
  return accumulate(items, rng, nullptr, false, 1.0);
}

// ----------------------------------------------------------------- curriculum

std::string to_log_line(const LossRecord& rec) {
  nlohmann::json j;
  j["stage"] = rec.stage;
  j["step"] = rec.step;
  j["cml"] = rec.result.loss.cml;
  j["rtd"] = rec.result.loss.rtd;
  j["total"] = rec.result.loss.total;
  j["lambda"] = rec.result.loss.lambda;
  j["t"] = rec.result.loss.t_used;
  j["masked"] = rec.result.loss.masked_count;
  j["grad_norm"] = rec.result.grad_norm;
  j["lr"] = rec.result.lr;
  j["batch_seed"] = rec.result.batch_seed;
  return j.dump();
}

std::vector<TrainItem> draw_batch(const SynthConfig& data, const StageSpec& stage, std::size_t count,
                                  std::size_t ref_len, std::uint64_t data_seed, std::int64_t step) {
  Rng rng(mix_seed(data_seed, (static_cast<std::uint64_t>(stage.id) << 40) ^ static_cast<std::uint64_t>(step)));
  std::vector<TrainItem> items;
  items.reserve(count);
  const std::size_t span = std::max(stage.span, stage.seq_len);
  const std::size_t song_len = span + ref_len + 8;
  for (std::size_t b = 0; b < count; ++b) {
    const int style = uniform_int(rng, 0, data.styles - 1);
    SynthInstance inst = gen_pair(style, song_len, data, rng);
    int attempts = 1;
    while (stage.filtered && !passes_quality_filter(inst)) {
      if (++attempts > 10000) throw ContractError("draw_batch: quality filter rejects every instance");
      inst = gen_pair(style, song_len, data, rng);
    }
    TrainItem item;
    item.offset = span > stage.seq_len ? static_cast<std::size_t>(uniform_index(rng, span - stage.seq_len + 1)) : 0;
    const auto first = static_cast<std::ptrdiff_t>(item.offset);
    const auto last = static_cast<std::ptrdiff_t>(item.offset + stage.seq_len);
    item.vocal.assign(inst.vocal.begin() + first, inst.vocal.begin() + last);
    item.accomp.assign(inst.accomp.begin() + first, inst.accomp.begin() + last);
    item.style = style;
    item.reference = reference_snippet(inst, item.offset, stage.seq_len, ref_len, rng).tokens;
    items.push_back(std::move(item));
  }
  return items;
}

namespace {

CheckpointMeta make_meta(const Trainer& trainer, int stage, const CurriculumConfig& cfg) {
  CheckpointMeta meta;
  meta.step = trainer.step();
  meta.stage = stage;
  meta.sobol_index = trainer.sobol().index();
  meta.seed = cfg.train.seed;
  meta.objective = cfg.train.objective == Objective::autoregressive ? "autoregressive" : "masked";
  meta.config_echo = cfg.config_echo;
  return meta;
}

void run_stage(Trainer& trainer, const CurriculumConfig& cfg, const StageSpec& stage, const LossSink& sink) {
  if (stage.steps < 0) throw ContractError("stage step budget must be non-negative");
  if (std::max(stage.span, stage.seq_len) > cfg.model.max_len) throw ContractError("stage span exceeds model.max_len");
  const std::size_t count = cfg.train.batch * static_cast<std::size_t>(cfg.train.accum);
  for (std::int64_t s = 0; s < stage.steps; ++s) {
    const auto items = draw_batch(cfg.data, stage, count, cfg.ref_len, cfg.data_seed, s);
    const StepResult res = trainer.train_step(items, stage.lr);
    if (sink) sink({stage.id, s, res});
    if ((s + 1) % 100 == 0) {
      spdlog::debug("stage {} step {}: total {:.4f} cml {:.4f} rtd {:.4f}", stage.id, s + 1, res.loss.total,
                    res.loss.cml, res.loss.rtd);
    }
  }
}

}  // namespace

CurriculumResult run_curriculum(const CurriculumConfig& cfg, const LossSink& sink) {
  std::filesystem::create_directories(cfg.out_dir);
  Predictor model(cfg.model);
  Trainer trainer(model, cfg.train);
  run_stage(trainer, cfg, cfg.stage1, sink);
  CurriculumResult result;
  result.stage1_checkpoint = cfg.out_dir / "stage1.ckpt";
  save_checkpoint(result.stage1_checkpoint, model, make_meta(trainer, 1, cfg));
  if (cfg.run_stage2) result.stage2_checkpoint = run_stage2(cfg, result.stage1_checkpoint, sink);
  return result;
}

std::filesystem::path run_stage2(const CurriculumConfig& cfg, const std::filesystem::path& stage1_checkpoint,
                                 const LossSink& sink) {
  if (!std::filesystem::exists(stage1_checkpoint)) {
    throw std::runtime_error("stage 2 needs the stage-1 checkpoint, not found: " + stage1_checkpoint.string());
  }
  if (cfg.stage2.seq_len <= cfg.stage1.seq_len) throw ContractError("stage 2 seq_len must exceed stage 1 seq_len");
  Predictor model(cfg.model);
  const CheckpointMeta meta = load_into(stage1_checkpoint, model);
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.train.seed, 2);
  Trainer trainer(model, tc);
  trainer.set_sobol(SobolState(meta.sobol_index));
  run_stage(trainer, cfg, cfg.stage2, sink);
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = cfg.out_dir / "stage2.ckpt";
  CheckpointMeta out = make_meta(trainer, 2, cfg);
  out.seed = cfg.train.seed;
  save_checkpoint(path, model, out);
  return path;
}

}  // namespace dualmask
