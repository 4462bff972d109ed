#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace v2m::io {

struct Pcm {
  std::vector<double> samples;  // mono, full scale = 1.0
  int sample_rate = 0;
};

/// 16-bit PCM RIFF/WAVE. Multi-channel input is averaged to mono.
Pcm read_wav(const std::filesystem::path& path);
/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate);

}  // namespace v2m::io
