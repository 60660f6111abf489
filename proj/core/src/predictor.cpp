#include "dualmask/predictor.hpp"

#include <algorithm>
#include <string>
#include <string_view>

namespace dualmask {

PredictorConfig PredictorConfig::paper_scale() {
  PredictorConfig c;
  c.dim = 2048;
  c.layers = 24;
  c.heads = 16;
  c.ffn_mult = 4;
  c.vocab.acc_size = 16384;
  c.max_len = 4096;
  return c;
}

void PredictorConfig::validate() const {
  if (dim <= 0 || dim % 2 != 0) throw ContractError("model.dim must be positive and even");
  if (heads <= 0 || dim % heads != 0) throw ContractError("model.dim must be divisible by model.heads");
  if (layers < 0 || ffn_mult <= 0 || styles <= 0 || max_len == 0) throw ContractError("invalid predictor config");
  if (dropout != 0.0) throw ContractError("model.dropout other than 0 is not supported");
}

std::vector<double> PredictorOutput::rtd_prob() const {
  std::vector<double> p(rtd_logits.numel());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = clamped_sigmoid(rtd_logits.data()[i]);
  return p;
}

namespace {

Tensor normal_init(Shape shape, Rng& rng) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = 0.02 * normal(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace

Predictor::Predictor(const PredictorConfig& config) : config_(config) {
  config_.validate();
  const auto d = static_cast<std::size_t>(config_.dim);
  const std::size_t w = config_.layout == Layout::dual ? d / 2 : d;
  const std::size_t f = d * static_cast<std::size_t>(config_.ffn_mult);
  const auto k = static_cast<std::size_t>(config_.vocab.acc_size);
  Rng rng(mix_seed(config_.seed, 0x1417));

  auto add = [&](const std::string& name, Tensor t) {
    params_.push_back({name, t});
    return t;
  };
  tables_.voc = add("emb.voc", normal_init({static_cast<std::size_t>(config_.vocab.voc_table_rows()), w}, rng));
  tables_.acc = add("emb.acc", normal_init({static_cast<std::size_t>(config_.vocab.acc_table_rows()), w}, rng));
  tables_.pos = add("emb.pos", normal_init({kPrefixLen + config_.max_len, d}, rng));
  tables_.style = add("emb.style", normal_init({static_cast<std::size_t>(config_.styles), d}, rng));
  tables_.null_style = add("emb.null_style", normal_init({1, d}, rng));
  tables_.null_ref = add("emb.null_ref", normal_init({1, d}, rng));
  tables_.ref_proj_w = add("emb.ref_proj.w", normal_init({w, d}, rng));
  tables_.ref_proj_b = add("emb.ref_proj.b", zeros_param({d}));
  if (config_.layout == Layout::single_stream) tables_.track = add("emb.track", normal_init({2, d}, rng));

  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    Block b;
    b.ln1_g = add(p + "ln1.g", ones_param({d}));
    b.ln1_b = add(p + "ln1.b", zeros_param({d}));
    b.qkv_w = add(p + "attn.qkv.w", normal_init({d, 3 * d}, rng));
    b.qkv_b = add(p + "attn.qkv.b", zeros_param({3 * d}));
    b.out_w = add(p + "attn.out.w", normal_init({d, d}, rng));
    b.out_b = add(p + "attn.out.b", zeros_param({d}));
    b.ln2_g = add(p + "ln2.g", ones_param({d}));
    b.ln2_b = add(p + "ln2.b", zeros_param({d}));
    b.ffn_w1 = add(p + "ffn.w1", normal_init({d, f}, rng));
    b.ffn_b1 = add(p + "ffn.b1", zeros_param({f}));
    b.ffn_w2 = add(p + "ffn.w2", normal_init({f, d}, rng));
    b.ffn_b2 = add(p + "ffn.b2", zeros_param({d}));
    blocks_.push_back(std::move(b));
  }
  final_g_ = add("final_ln.g", ones_param({d}));
  final_b_ = add("final_ln.b", zeros_param({d}));
  head_w_ = add("head.w", zeros_param({d, k}));
  head_b_ = add("head.b", zeros_param({k}));
  rtd_w_ = add("rtd.w", zeros_param({d, 1}));
  rtd_b_ = add("rtd.b", zeros_param({1}));
}

ConditionPrefix Predictor::prefix(std::optional<int> style, std::optional<std::span<const int>> reference,
                                  double dropout_p, bool training, Rng& rng) const {
  if (style && (*style < 0 || *style >= config_.styles)) {
    throw ContractError("style id " + std::to_string(*style) + " outside [0, " + std::to_string(config_.styles) + ")");
  }
  return build_prefix(tables_, style, reference, dropout_p, training, rng);
}

ConditionPrefix Predictor::null_prefix() const {
  Rng unused(0);
  return build_prefix(tables_, std::nullopt, std::nullopt, 0.0, false, unused);
}

ModelInput Predictor::encode(std::span<const Example> batch) const {
  if (batch.empty()) throw ContractError("Predictor::encode: empty batch");
  const std::size_t t = batch.front().vocal.size();
  if (t == 0) throw ContractError("Predictor::encode: empty sequence");
  std::vector<ConditionPrefix> prefixes;
  std::vector<std::size_t> offsets;
  std::vector<DualEmbedding> tracks;
  prefixes.reserve(batch.size());
  tracks.reserve(batch.size());
  for (const auto& ex : batch) {
    if (ex.vocal.size() != t) throw ContractError("Predictor::encode: batch items must share one length");
    if (ex.offset + t > config_.max_len) {
      throw ContractError("sequence end " + std::to_string(ex.offset + t) + " exceeds model max_len " +
                          std::to_string(config_.max_len));
    }
    prefixes.push_back(ex.prefix);
    offsets.push_back(ex.offset);
    tracks.push_back(embed_dual(ex.vocal, ex.accomp, tables_, config_.layout, config_.acc_first));
  }
  return config_.layout == Layout::dual ? build_input(prefixes, tracks, offsets)
                                        : build_single_stream_input(prefixes, tracks, offsets);
}

PredictorOutput Predictor::forward(const ModelInput& x) const { return run(x, AttentionKind::bidirectional); }

PredictorOutput Predictor::ar_forward(const ModelInput& x) const { return run(x, AttentionKind::causal); }

PredictorOutput Predictor::run(const ModelInput& x, AttentionKind kind) const {
  return run_impl(x, kind, 0, nullptr);
}

std::vector<double> Predictor::last_attention(const ModelInput& x, std::size_t layer, AttentionKind kind) const {
  std::vector<double> probs;
  run_impl(x, kind, layer, &probs);
  return probs;
}

PredictorOutput Predictor::run_impl(const ModelInput& in, AttentionKind kind, std::size_t probe_layer,
                                    std::vector<double>* probe) const {
  if (in.tokens > config_.max_len) {
    throw ContractError("sequence length " + std::to_string(in.tokens) + " exceeds model max_len " +
                        std::to_string(config_.max_len));
  }
  if (in.x.cols() != static_cast<std::size_t>(config_.dim)) {
    throw DimensionError("model input width " + std::to_string(in.x.cols()) + " != model.dim " +
                         std::to_string(config_.dim));
  }
  Tensor x = add(in.x, embedding(tables_.pos, in.positions));
  if (config_.layout == Layout::single_stream) x = add(x, embedding(tables_.track, in.track_ids));

  const auto heads = static_cast<std::size_t>(config_.heads);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    const Tensor qkv = linear(layer_norm(x, b.ln1_g, b.ln1_b), b.qkv_w, b.qkv_b);
    const Tensor a = attention(qkv, heads, in.seq_len, kind, probe && l == probe_layer ? probe : nullptr);
    x = add(x, linear(a, b.out_w, b.out_b));
    const Tensor h = gelu(linear(layer_norm(x, b.ln2_g, b.ln2_b), b.ffn_w1, b.ffn_b1));
    x = add(x, linear(h, b.ffn_w2, b.ffn_b2));
  }

  std::vector<std::size_t> rows;
  rows.reserve(in.batch * in.tokens);
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t i = 0; i < in.tokens; ++i) rows.push_back(b * in.seq_len + in.acc_offset + i);
  }
  const Tensor hn = layer_norm(select_rows(x, rows), final_g_, final_b_);
  PredictorOutput out;
  out.logits = linear(hn, head_w_, head_b_);
  out.rtd_logits = linear(hn, rtd_w_, rtd_b_);
  out.hidden = x;
  out.batch = in.batch;
  out.tokens = in.tokens;
  return out;
}

std::uint64_t count_params(const PredictorConfig& c) {
  const std::uint64_t d = static_cast<std::uint64_t>(c.dim);
  const std::uint64_t w = c.layout == Layout::dual ? d / 2 : d;
  const std::uint64_t f = d * static_cast<std::uint64_t>(c.ffn_mult);
  const std::uint64_t k = static_cast<std::uint64_t>(c.vocab.acc_size);
  std::uint64_t emb = static_cast<std::uint64_t>(c.vocab.voc_table_rows()) * w +
                      static_cast<std::uint64_t>(c.vocab.acc_table_rows()) * w +
                      (kPrefixLen + c.max_len) * d + static_cast<std::uint64_t>(c.styles) * d + 2 * d + (w * d + d);
  if (c.layout == Layout::single_stream) emb += 2 * d;
  const std::uint64_t block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  const std::uint64_t head = 2 * d + (d * k + k) + (d + 1);
  return emb + static_cast<std::uint64_t>(c.layers) * block + head;
}

TokenSeq ar_shift(std::span<const int> accomp, const Vocab& vocab) {
  TokenSeq shifted(accomp.size());
  if (accomp.empty()) return shifted;
  shifted[0] = vocab.acc_mask();
  for (std::size_t i = 1; i < accomp.size(); ++i) shifted[i] = accomp[i - 1];
  return shifted;
}

void mirror_track_halves(const Predictor& from, Predictor& to) {
  const auto& fc = from.config();
  const auto& tc = to.config();
  if (fc.layout != Layout::dual || tc.layout != Layout::dual || fc.acc_first == tc.acc_first ||
      count_params(fc) != count_params(tc)) {
    throw ContractError("mirror_track_halves: configs must differ only in acc_first");
  }
  const auto d = static_cast<std::size_t>(fc.dim);
  const std::size_t half = d / 2;
  auto src_index = [&](std::size_t j) { return (j + half) % d; };

  const ParamList& src = from.params();
  ParamList& dst = to.params();
  for (std::size_t p = 0; p < src.size(); ++p) {
    const std::string& name = src[p].name;
    const auto in = src[p].tensor.data();
    auto out = dst[p].tensor.mutable_data();
    const std::size_t rows = src[p].tensor.rows();
    const std::size_t cols = src[p].tensor.cols();
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    // Which axis (if any) lives in the residual stream.
    const bool permute_rows = ends_with("attn.qkv.w") || ends_with("ffn.w1") || name == "head.w" || name == "rtd.w";
    const bool vector_in_stream = src[p].tensor.rank() == 1 && src[p].tensor.numel() == d &&
                                  (ends_with(".g") || ends_with("ln1.b") || ends_with("ln2.b") ||
                                   name == "final_ln.b" || ends_with("attn.out.b") || ends_with("ffn.b2") ||
                                   name == "emb.ref_proj.b");
    const bool permute_cols = name == "emb.pos" || name == "emb.style" || name == "emb.null_style" ||
                              name == "emb.null_ref" || name == "emb.ref_proj.w" || ends_with("attn.out.w") ||
                              ends_with("ffn.w2");
    if (vector_in_stream) {
      for (std::size_t j = 0; j < d; ++j) out[j] = in[src_index(j)];
    } else if (permute_rows) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[src_index(r) * cols + c];
      }
    } else if (permute_cols) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[r * cols + src_index(c)];
      }
    } else {
      std::copy(in.begin(), in.end(), out.begin());
    }
  }
}

}  // namespace dualmask
