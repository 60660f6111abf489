#pragma once

#include <filesystem>

#include "dualmask/augment.hpp"

namespace dualmask {

enum class WavFormat { pcm16, float32 };

/// Mono RIFF/WAVE reader (16-bit PCM or 32-bit IEEE float).
AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioBuffer& buf, WavFormat format);

/// Headerless little-endian float32 samples.
AudioBuffer read_raw_f32(const std::filesystem::path& path, double sample_rate);
void write_raw_f32(const std::filesystem::path& path, const AudioBuffer& buf);

}  // namespace dualmask
