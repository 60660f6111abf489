#include "dualmask/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dualmask {

namespace {

constexpr std::string_view kMagic = "DUALMASK-CKPT";

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

nlohmann::json model_json(const PredictorConfig& c) {
  return {{"dim", c.dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_mult", c.ffn_mult},
          {"voc_size", c.vocab.voc_size},
          {"acc_size", c.vocab.acc_size},
          {"styles", c.styles},
          {"max_len", c.max_len},
          {"layout", c.layout == Layout::dual ? "dual" : "single_stream"},
          {"acc_first", c.acc_first}};
}

PredictorConfig model_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.dim = j.at("dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.vocab.voc_size = j.at("voc_size").get<int>();
  c.vocab.acc_size = j.at("acc_size").get<int>();
  c.styles = j.at("styles").get<int>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.layout = j.at("layout").get<std::string>() == "dual" ? Layout::dual : Layout::single_stream;
  c.acc_first = j.at("acc_first").get<bool>();
  return c;
}

void write_le_doubles(std::ostream& os, std::span<const double> values) {
  static_assert(sizeof(double) == 8);
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    os.write(reinterpret_cast<const char*>(&bits), 8);
  }
}

void read_le_doubles(std::istream& is, std::span<double> values) {
  for (double& v : values) {
    std::uint64_t bits = 0;
    if (!is.read(reinterpret_cast<char*>(&bits), 8)) throw std::runtime_error("checkpoint: truncated parameter data");
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v = std::bit_cast<double>(bits);
  }
}

struct Parsed {
  nlohmann::json header;
  std::ifstream stream;
};

Parsed open_checkpoint(const std::filesystem::path& path) {
  Parsed p;
  p.stream.open(path, std::ios::binary);
  if (!p.stream) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic, header;
  std::getline(p.stream, magic);
  if (magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint file");
  std::getline(p.stream, header);
  p.header = nlohmann::json::parse(header);
  if (p.header.at("format_version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint format version " + p.header.at("format_version").dump() +
                             " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  return p;
}

CheckpointMeta meta_from(const nlohmann::json& h) {
  CheckpointMeta m;
  m.step = h.at("step").get<std::int64_t>();
  m.stage = h.at("stage").get<int>();
  m.sobol_index = h.at("sobol_index").get<std::uint32_t>();
  m.seed = h.at("seed").get<std::uint64_t>();
  m.objective = h.at("objective").get<std::string>();
  m.config_echo = h.at("config").get<std::string>();
  return m;
}

void read_params(Parsed& p, Predictor& model, const std::filesystem::path& path) {
  const auto& names = p.header.at("params");
  ParamList& params = model.params();
  if (names.size() != params.size()) {
    throw DimensionError("checkpoint " + path.string() + " has " + std::to_string(names.size()) +
                         " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto name = names[i].at("name").get<std::string>();
    const auto shape = names[i].at("shape").get<Shape>();
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      throw DimensionError("checkpoint parameter " + name + " " + shape_string(shape) + " does not match model " +
                           params[i].name + " " + shape_string(params[i].tensor.shape()));
    }
    read_le_doubles(p.stream, params[i].tensor.mutable_data());
    params[i].tensor.zero_grad();
  }
}

}  // namespace

std::string model_config_hash(const PredictorConfig& config) {
  const std::string s = model_json(config).dump();
  return hex64(fnv1a(s.data(), s.size()));
}

void save_checkpoint(const std::filesystem::path& path, const Predictor& model, const CheckpointMeta& meta) {
  nlohmann::json h;
  h["format_version"] = kCheckpointVersion;
  h["model"] = model_json(model.config());
  h["config_hash"] = model_config_hash(model.config());
  h["step"] = meta.step;
  h["stage"] = meta.stage;
  h["sobol_index"] = meta.sobol_index;
  h["seed"] = meta.seed;
  h["objective"] = meta.objective;
  h["config"] = meta.config_echo;
  auto params = nlohmann::json::array();
  for (const auto& p : model.params()) params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  h["params"] = params;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    os << kMagic << '\n' << h.dump() << '\n';
    for (const auto& p : model.params()) write_le_doubles(os, p.tensor.data());
    if (!os) throw std::runtime_error("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Parsed p = open_checkpoint(path);
  const PredictorConfig cfg = model_from_json(p.header.at("model"));
  if (p.header.at("config_hash").get<std::string>() != model_config_hash(cfg)) {
    throw std::runtime_error("checkpoint " + path.string() + ": config hash does not match its model header");
  }
  LoadedCheckpoint out{cfg, meta_from(p.header), Predictor(cfg)};
  read_params(p, out.model, path);
  return out;
}

CheckpointMeta load_into(const std::filesystem::path& path, Predictor& model) {
  Parsed p = open_checkpoint(path);
  const PredictorConfig stored = model_from_json(p.header.at("model"));
  const PredictorConfig& want = model.config();
  std::string diff;
  auto cmp = [&](const char* key, auto a, auto b) {
    if (a != b) diff += std::string(diff.empty() ? "" : ", ") + key + " " + std::to_string(a) + " vs " + std::to_string(b);
  };
  cmp("model.dim", stored.dim, want.dim);
  cmp("model.layers", stored.layers, want.layers);
  cmp("model.heads", stored.heads, want.heads);
  cmp("model.ffn_mult", stored.ffn_mult, want.ffn_mult);
  cmp("vocab.voc_size", stored.vocab.voc_size, want.vocab.voc_size);
  cmp("vocab.acc_size", stored.vocab.acc_size, want.vocab.acc_size);
  cmp("model.styles", stored.styles, want.styles);
  cmp("model.max_len", stored.max_len, want.max_len);
  cmp("model.layout", static_cast<int>(stored.layout), static_cast<int>(want.layout));
  cmp("model.acc_first", static_cast<int>(stored.acc_first), static_cast<int>(want.acc_first));
  if (!diff.empty()) throw DimensionError("checkpoint " + path.string() + " incompatible with model (checkpoint vs model): " + diff);
  read_params(p, model, path);
  return meta_from(p.header);
}

std::string parameter_hash(const Predictor& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.params()) {
    const auto d = p.tensor.data();
    h = fnv1a(d.data(), d.size() * sizeof(double), h);
  }
  return hex64(h);
}

}  // namespace dualmask
