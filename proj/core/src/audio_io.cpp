#include "dualmask/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace dualmask {

namespace {

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint32_t le32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

std::uint16_t le16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) | (static_cast<unsigned char>(p[1]) << 8));
}

void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

float float_from_le(const char* p) { return std::bit_cast<float>(le32(p)); }

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error(path.string() + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = bytes.data() + pos;
    const std::size_t len = le32(id + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw std::runtime_error(path.string() + ": truncated chunk");
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (len < 16) throw std::runtime_error(path.string() + ": short fmt chunk");
      format = le16(bytes.data() + body);
      channels = le16(bytes.data() + body + 2);
      rate = le32(bytes.data() + body + 4);
      bits = le16(bytes.data() + body + 14);
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = bytes.data() + body;
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (!data || rate == 0) throw std::runtime_error(path.string() + ": missing fmt or data chunk");
  if (channels != 1) throw std::runtime_error(path.string() + ": only mono WAV is supported");
  AudioBuffer buf;
  buf.sample_rate = rate;
  if (format == 1 && bits == 16) {
    buf.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < buf.samples.size(); ++i) {
      buf.samples[i] = static_cast<std::int16_t>(le16(data + 2 * i)) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    buf.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < buf.samples.size(); ++i) buf.samples[i] = float_from_le(data + 4 * i);
  } else {
    throw std::runtime_error(path.string() + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                             std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
  }
  return buf;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavFormat format) {
  const std::uint16_t bits = format == WavFormat::pcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(buf.samples.size() * bits / 8);
  const auto rate = static_cast<std::uint32_t>(std::lround(buf.sample_rate));
  std::string out;
  out += "RIFF";
  put32(out, 36 + data_len);
  out += "WAVEfmt ";
  put32(out, 16);
  put16(out, format == WavFormat::pcm16 ? 1 : 3);
  put16(out, 1);
  put32(out, rate);
  put32(out, rate * bits / 8);
  put16(out, bits / 8);
  put16(out, bits);
  out += "data";
  put32(out, data_len);
  for (double v : buf.samples) {
    if (format == WavFormat::pcm16) {
      const long q = std::lround(std::clamp(v, -1.0, 1.0) * 32767.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  write_file(path, out);
}

AudioBuffer read_raw_f32(const std::filesystem::path& path, double sample_rate) {
  if (!(sample_rate > 0.0)) throw std::runtime_error("raw audio needs a positive --rate");
  const auto bytes = read_all(path);
  if (bytes.size() % 4 != 0) throw std::runtime_error(path.string() + ": size is not a multiple of 4 bytes");
  AudioBuffer buf;
  buf.sample_rate = sample_rate;
  buf.samples.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < buf.samples.size(); ++i) buf.samples[i] = float_from_le(bytes.data() + 4 * i);
  return buf;
}

void write_raw_f32(const std::filesystem::path& path, const AudioBuffer& buf) {
  std::string out;
  out.reserve(buf.samples.size() * 4);
  for (double v : buf.samples) put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  write_file(path, out);
}

}  // namespace dualmask
