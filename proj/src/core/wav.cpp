#include "v2m/core/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>

#include "v2m/core/error.hpp"
#include "v2m/core/serialize.hpp"

namespace v2m::io {

namespace {

std::uint32_t rd32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t rd16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | p[1] << 8); }

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void tag(std::vector<std::uint8_t>& out, const char* t) { out.insert(out.end(), t, t + 4); }

}  // namespace

Pcm read_wav(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> b = read_file(path);
  const std::string name = path.string();
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw InputError(name + ": not a RIFF/WAVE file");
  }
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t len = rd32(&b[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + len > b.size()) throw InputError(name + ": truncated chunk");
    if (std::memcmp(&b[pos], "fmt ", 4) == 0 && len >= 16) {
      format = rd16(&b[body]);
      channels = rd16(&b[body + 2]);
      rate = rd32(&b[body + 4]);
      bits = rd16(&b[body + 14]);
    } else if (std::memcmp(&b[pos], "data", 4) == 0) {
      data = &b[body];
      data_len = len;
    }
    pos = body + len + (len & 1u);
  }
  if (format != 1 || bits != 16 || channels == 0) throw InputError(name + ": only 16-bit PCM WAV is supported");
  if (data == nullptr) throw InputError(name + ": missing data chunk");
  const std::size_t frames = data_len / (2u * channels);
  Pcm pcm;
  pcm.sample_rate = static_cast<int>(rate);
  pcm.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      acc += static_cast<std::int16_t>(rd16(data + 2 * (i * channels + c))) / 32768.0;
    }
    pcm.samples[i] = acc / channels;
  }
  return pcm;
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  if (sample_rate <= 0) throw InputError("write_wav: sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * samples.size());
  tag(out, "RIFF");
  put32(out, 36 + 2 * n);
  tag(out, "WAVE");
  tag(out, "fmt ");
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, static_cast<std::uint32_t>(sample_rate));
  put32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put16(out, 2);
  put16(out, 16);
  tag(out, "data");
  put32(out, 2 * n);
  for (double s : samples) {
    const double c = std::clamp(s, -1.0, 1.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  write_file(path, out);
}

}  // namespace v2m::io
