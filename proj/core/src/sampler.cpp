#include "dualmask/sampler.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace dualmask {

void SamplerParams::validate() const {
  if (steps < 1) throw ContractError("sample.steps must be at least 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ContractError("sample.top_p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ContractError("sample.temperature must be positive");
  if (!(mask_temperature >= 0.0)) throw ContractError("sample.mask_temperature must be non-negative");
  if (!(guidance >= 0.0)) throw ContractError("sample.guidance must be non-negative");
  if (top_k < 1) throw ContractError("sample.top_k must be at least 1");
}

std::vector<LogitTable> LogitModel::logits(std::span<const Query> queries) {
  calls_ += queries.size();
  return compute(queries);
}

std::vector<std::vector<double>> ArLogitModel::next_logits(std::span<const Query> queries) {
  calls_ += queries.size();
  return compute(queries);
}

namespace {

ConditionPrefix prefix_for(const Predictor& model, const Condition& cond) {
  Rng unused(0);
  std::optional<std::span<const int>> ref;
  if (!cond.reference.empty()) ref = std::span<const int>(cond.reference);
  return model.prefix(cond.style, ref, 0.0, false, unused);
}

}  // namespace

std::vector<LogitTable> PredictorLogitModel::compute(std::span<const Query> queries) {
  std::vector<LogitTable> out;
  out.reserve(queries.size());
  std::size_t begin = 0;
  while (begin < queries.size()) {
    std::size_t end = begin + 1;
    while (end < queries.size() && queries[end].vocal.size() == queries[begin].vocal.size()) ++end;
    std::vector<Example> batch;
    for (std::size_t q = begin; q < end; ++q) {
      batch.push_back({queries[q].vocal, queries[q].accomp, prefix_for(model_, *queries[q].cond)});
    }
    const PredictorOutput res = model_.forward(model_.encode(batch));
    const std::size_t t = res.tokens, k = res.logits.cols();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      LogitTable table(t, k);
      const auto src = res.logits.data().subspan(b * t * k, t * k);
      std::copy(src.begin(), src.end(), table.values.begin());
      out.push_back(std::move(table));
    }
    begin = end;
  }
  return out;
}

std::vector<std::vector<double>> PredictorArModel::compute(std::span<const Query> queries) {
  const Vocab& vocab = model_.config().vocab;
  std::vector<std::vector<double>> out;
  out.reserve(queries.size());
  std::size_t begin = 0;
  while (begin < queries.size()) {
    std::size_t end = begin + 1;
    while (end < queries.size() && queries[end].vocal.size() == queries[begin].vocal.size()) ++end;
    std::vector<TokenSeq> shifted;
    shifted.reserve(end - begin);
    for (std::size_t q = begin; q < end; ++q) {
      if (queries[q].accomp.size() + 1 != queries[q].vocal.size()) {
        throw ContractError("ar query: accompaniment must be one token shorter than the vocal prefix");
      }
      TokenSeq s;
      s.reserve(queries[q].vocal.size());
      s.push_back(vocab.acc_mask());
      s.insert(s.end(), queries[q].accomp.begin(), queries[q].accomp.end());
      shifted.push_back(std::move(s));
    }
    std::vector<Example> batch;
    for (std::size_t q = begin; q < end; ++q) {
      batch.push_back({queries[q].vocal, shifted[q - begin], prefix_for(model_, *queries[q].cond)});
    }
    const PredictorOutput res = model_.ar_forward(model_.encode(batch));
    const std::size_t t = res.tokens, k = res.logits.cols();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto row = res.logits.data().subspan((b * t + t - 1) * k, k);
      out.emplace_back(row.begin(), row.end());
    }
    begin = end;
  }
  return out;
}

std::vector<LogitTable> guided_logits(LogitModel& model, std::span<const LogitModel::Query> queries, double w) {
  if (!(w >= 0.0)) throw ContractError("guided_logits: guidance scale must be non-negative");
  const Condition null_cond = Condition::none();
  std::vector<LogitModel::Query> null_queries(queries.begin(), queries.end());
  for (auto& q : null_queries) q.cond = &null_cond;
  if (w == 1.0) return model.logits(queries);
  if (w == 0.0) return model.logits(null_queries);
  auto cond = model.logits(queries);
  const auto null = model.logits(null_queries);
  for (std::size_t q = 0; q < cond.size(); ++q) {
    for (std::size_t i = 0; i < cond[q].values.size(); ++i) {
      cond[q].values[i] = null[q].values[i] + w * (cond[q].values[i] - null[q].values[i]);
    }
  }
  return cond;
}

std::vector<double> filtered_distribution(std::span<const double> logits, double temperature, int top_k,
                                          double top_p) {
  const std::size_t k = logits.size();
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  const std::size_t keep_k = std::min<std::size_t>(k, static_cast<std::size_t>(std::max(top_k, 1)));

  const double mx = logits[order.front()] / temperature;
  std::vector<double> p(k, 0.0);
  double z = 0.0;
  for (std::size_t r = 0; r < keep_k; ++r) {
    const std::size_t v = order[r];
    p[v] = std::exp(logits[v] / temperature - mx);
    z += p[v];
  }
  // Nucleus over the top-k survivors: smallest prefix whose mass reaches top_p.
  double cum = 0.0;
  std::size_t keep_p = keep_k;
  for (std::size_t r = 0; r < keep_k; ++r) {
    cum += p[order[r]] / z;
    if (cum >= top_p) {
      keep_p = r + 1;
      break;
    }
  }
  double z2 = 0.0;
  for (std::size_t r = 0; r < keep_k; ++r) {
    if (r < keep_p) {
      z2 += p[order[r]];
    } else {
      p[order[r]] = 0.0;
    }
  }
  for (auto& x : p) x /= z2;
  return p;
}

int sample_index(std::span<const double> probs, Rng& rng) {
  double u = uniform01(rng);
  int last = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = static_cast<int>(i);
    u -= probs[i];
    if (u < 0.0) return last;
  }
  return last;
}

std::size_t remask_count(double t_next, std::size_t nonpad) {
  if (t_next <= 0.0) return 0;
  // Tolerance keeps exact products such as 0.5 * 4 from rounding up.
  const double x = t_next * static_cast<double>(nonpad) - 1e-9;
  return static_cast<std::size_t>(std::max(0.0, std::ceil(x)));
}

std::size_t SamplerState::masked_count(const Vocab& vocab) const {
  return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), vocab.acc_mask()));
}

SamplerState initial_state(std::span<const int> vocal, const Vocab& vocab, const SamplerParams& params) {
  SamplerState s;
  s.nonpad = nonpad_length(vocal, vocab.voc_pad());
  s.tokens.assign(vocal.size(), vocab.acc_pad());
  std::fill(s.tokens.begin(), s.tokens.begin() + static_cast<std::ptrdiff_t>(s.nonpad), vocab.acc_mask());
  s.committed.assign(vocal.size(), 0);
  s.confidence.assign(vocal.size(), 0.0);
  s.trajectory = remask_trajectory(params.steps, params.schedule);
  return s;
}

void reverse_step(SamplerState& state, const LogitTable& logits, const SamplerParams& params, const Vocab& vocab,
                  Rng& rng) {
  if (static_cast<std::size_t>(state.step) + 1 >= state.trajectory.size()) {
    throw ContractError("reverse_step: trajectory exhausted");
  }
  if (logits.rows != state.tokens.size() || logits.cols < static_cast<std::size_t>(vocab.acc_size)) {
    throw DimensionError("reverse_step: logits shape does not match the state");
  }
  const double t_cur = state.trajectory[static_cast<std::size_t>(state.step)];
  const double t_next = state.trajectory[static_cast<std::size_t>(state.step) + 1];
  const auto k_acc = static_cast<std::size_t>(vocab.acc_size);

  struct Candidate {
    std::size_t pos;
    int token;
    double confidence;
    double score;
  };
  std::vector<Candidate> fresh;
  for (std::size_t i = 0; i < state.nonpad; ++i) {
    if (state.tokens[i] != vocab.acc_mask()) continue;
    const auto row = logits.row(i).first(k_acc);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double conf = 1.0 / z;  // max_v softmax(row)
    const auto probs = filtered_distribution(row, params.temperature, params.top_k, params.top_p);
    const int token = sample_index(probs, rng);
    const double g = gumbel(rng);
    fresh.push_back({i, token, conf, std::log(conf) + params.mask_temperature * t_cur * g});
  }
  if (fresh.empty()) throw ContractError("reverse_step: no masked positions");

  std::size_t remask = remask_count(t_next, state.nonpad);
  if (remask > fresh.size()) {
    spdlog::debug("reverse_step: target mask count {} exceeds {} open positions", remask, fresh.size());
    remask = fresh.size();
  }
  std::vector<std::size_t> order(fresh.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Candidate& x = fresh[a];
    const Candidate& y = fresh[b];
    if (x.score != y.score) return x.score < y.score;
    if (x.confidence != y.confidence) return x.confidence < y.confidence;
    return x.pos < y.pos;
  });
  for (std::size_t r = 0; r < order.size(); ++r) {
    const Candidate& c = fresh[order[r]];
    state.confidence[c.pos] = c.confidence;
    if (r < remask) continue;
    state.tokens[c.pos] = c.token;
    state.committed[c.pos] = 1;
  }
  ++state.step;
}

TokenSeq generate(std::span<const int> vocal, const Condition& cond, LogitModel& model, const SamplerParams& params,
                  const StepObserver& observer) {
  const TokenSeq v(vocal.begin(), vocal.end());
  const std::uint64_t seed = params.seed;
  return generate_batch(std::span<const TokenSeq>(&v, 1), std::span<const Condition>(&cond, 1), model, params,
                        std::span<const std::uint64_t>(&seed, 1), observer)
      .front();
}

std::vector<TokenSeq> generate_batch(std::span<const TokenSeq> vocals, std::span<const Condition> conds,
                                     LogitModel& model, const SamplerParams& params,
                                     std::span<const std::uint64_t> seeds, const StepObserver& observer) {
  params.validate();
  if (vocals.size() != conds.size() || vocals.size() != seeds.size()) {
    throw ContractError("generate_batch: vocals, conditions and seeds must align");
  }
  const Vocab& vocab = model.vocab();
  std::vector<SamplerState> states;
  std::vector<Rng> rngs;
  for (std::size_t b = 0; b < vocals.size(); ++b) {
    for (std::size_t i = 0; i < vocals[b].size(); ++i) {
      const int id = vocals[b][i];
      if (id < 0 || id > vocab.voc_size) throw ContractError("generate: vocal id out of range");
    }
    states.push_back(initial_state(vocals[b], vocab, params));
    rngs.emplace_back(mix_seed(seeds[b], 0x5a3d));
  }
  for (int step = 0; step < params.steps; ++step) {
    std::vector<std::size_t> active;
    std::vector<LogitModel::Query> queries;
    for (std::size_t b = 0; b < states.size(); ++b) {
      if (states[b].masked_count(vocab) == 0) {
        ++states[b].step;
        continue;
      }
      active.push_back(b);
      queries.push_back({vocals[b], states[b].tokens, &conds[b]});
    }
    if (!queries.empty()) {
      const auto logits = guided_logits(model, queries, params.guidance);
      for (std::size_t a = 0; a < active.size(); ++a) {
        reverse_step(states[active[a]], logits[a], params, vocab, rngs[active[a]]);
      }
    }
    if (observer) {
      for (std::size_t b = 0; b < states.size(); ++b) observer(b, states[b]);
    }
  }
  std::vector<TokenSeq> out;
  out.reserve(states.size());
  for (auto& s : states) out.push_back(std::move(s.tokens));
  return out;
}

TokenSeq ar_generate(std::span<const int> vocal, const Condition& cond, ArLogitModel& model, const ArParams& params) {
  const TokenSeq v(vocal.begin(), vocal.end());
  const std::uint64_t seed = params.seed;
  return ar_generate_batch(std::span<const TokenSeq>(&v, 1), std::span<const Condition>(&cond, 1), model, params,
                           std::span<const std::uint64_t>(&seed, 1))
      .front();
}

std::vector<TokenSeq> ar_generate_batch(std::span<const TokenSeq> vocals, std::span<const Condition> conds,
                                        ArLogitModel& model, const ArParams& params,
                                        std::span<const std::uint64_t> seeds) {
  if (vocals.size() != conds.size() || vocals.size() != seeds.size()) {
    throw ContractError("ar_generate_batch: vocals, conditions and seeds must align");
  }
  if (!(params.temperature >= 0.0) || !(params.top_p > 0.0 && params.top_p <= 1.0)) {
    throw ContractError("ar_generate: invalid sampling parameters");
  }
  const Vocab& vocab = model.vocab();
  std::vector<TokenSeq> out;
  std::vector<std::size_t> nonpad;
  std::vector<Rng> rngs;
  std::size_t longest = 0;
  for (std::size_t b = 0; b < vocals.size(); ++b) {
    nonpad.push_back(nonpad_length(vocals[b], vocab.voc_pad()));
    out.emplace_back(vocals[b].size(), vocab.acc_pad());
    rngs.emplace_back(mix_seed(seeds[b], 0xa12));
    longest = std::max(longest, nonpad.back());
  }
  for (std::size_t i = 0; i < longest; ++i) {
    std::vector<std::size_t> active;
    std::vector<ArLogitModel::Query> queries;
    for (std::size_t b = 0; b < vocals.size(); ++b) {
      if (i >= nonpad[b]) continue;
      active.push_back(b);
      queries.push_back({std::span<const int>(vocals[b]).first(i + 1), std::span<const int>(out[b]).first(i), &conds[b]});
    }
    const auto rows = model.next_logits(queries);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const auto row = std::span<const double>(rows[a]).first(static_cast<std::size_t>(vocab.acc_size));
      int token;
      if (params.temperature == 0.0) {
        token = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      } else {
        token = sample_index(filtered_distribution(row, params.temperature, params.top_k, params.top_p), rngs[active[a]]);
      }
      out[active[a]][i] = token;
    }
  }
  return out;
}

}  // namespace dualmask
