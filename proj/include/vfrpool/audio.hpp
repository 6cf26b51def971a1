#pragma once

#include "vfrpool/binary_io.hpp"
#include "vfrpool/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace vfrpool {

struct AudioBuffer {
  std::vector<double> samples;  // normalized to [-1, 1]
  int sample_rate_hz = 16000;

  std::size_t size() const noexcept { return samples.size(); }
};

inline void validate(const AudioBuffer& audio) {
  if (audio.samples.empty()) throw Error(ErrorKind::EmptyAudio, "audio buffer has no samples");
  if (audio.sample_rate_hz <= 0) throw Error(ErrorKind::MalformedHeader, "sample rate must be positive");
  for (double s : audio.samples) {
    if (!std::isfinite(s)) throw Error(ErrorKind::MalformedHeader, "non-finite sample");
  }
}

/// Reads a RIFF/WAVE file holding mono 16-bit PCM. Samples are scaled by
/// 1/32768; unknown chunks between "fmt " and "data" are skipped.
inline AudioBuffer load_wav(const std::string& path) {
  auto is = io::open_in(path);
  constexpr auto bad = ErrorKind::MalformedHeader;

  char tag[4];
  auto read_tag = [&]() {
    is.read(tag, 4);
    if (is.gcount() != 4) throw Error(bad, "truncated chunk tag in '" + path + "'");
    return std::string(tag, 4);
  };

  if (read_tag() != "RIFF") throw Error(bad, "missing RIFF tag in '" + path + "'");
  io::get_u32(is, bad);
  if (read_tag() != "WAVE") throw Error(bad, "missing WAVE tag in '" + path + "'");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (true) {
    const std::string id = read_tag();
    const std::uint32_t len = io::get_u32(is, bad);
    if (id == "fmt ") {
      if (len < 16) throw Error(bad, "fmt chunk too short");
      const std::uint16_t format = io::get_u16(is, bad);
      channels = io::get_u16(is, bad);
      rate = io::get_u32(is, bad);
      io::get_u32(is, bad);  // byte rate
      io::get_u16(is, bad);  // block align
      bits = io::get_u16(is, bad);
      is.ignore(static_cast<std::streamsize>(len - 16 + (len & 1)));
      if (format != 1) throw Error(ErrorKind::UnsupportedEncoding, "audio format " + std::to_string(format) + " is not PCM");
      if (bits != 16) throw Error(ErrorKind::UnsupportedEncoding, std::to_string(bits) + "-bit samples, expected 16");
      if (channels != 1) throw Error(ErrorKind::UnsupportedEncoding, std::to_string(channels) + " channels, expected mono");
      if (rate == 0) throw Error(bad, "zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw Error(bad, "data chunk before fmt chunk");
      if (len == 0) throw Error(ErrorKind::EmptyAudio, "'" + path + "' has an empty data chunk");
      const std::size_t n = len / 2;
      std::vector<unsigned char> raw(n * 2);
      if (!io::get_bytes(is, raw.data(), raw.size())) throw Error(bad, "truncated data chunk");
      AudioBuffer audio;
      audio.sample_rate_hz = static_cast<int>(rate);
      audio.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        audio.samples[i] = static_cast<double>(v) / 32768.0;
      }
      if (audio.samples.empty()) throw Error(ErrorKind::EmptyAudio, "'" + path + "' has no samples");
      return audio;
    } else {
      is.ignore(static_cast<std::streamsize>(len + (len & 1)));
      if (!is) throw Error(bad, "truncated chunk '" + id + "'");
    }
  }
}

inline std::int16_t quantize_pcm16(double x) {
  const double q = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
}

/// Writes mono PCM16. Values outside [-1, 1) saturate.
inline void write_wav(const std::string& path, const AudioBuffer& audio) {
  auto os = io::open_out(path);
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  os.write("RIFF", 4);
  io::put_u32(os, 36 + 2 * n);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  io::put_u32(os, 16);
  io::put_u16(os, 1);
  io::put_u16(os, 1);
  io::put_u32(os, static_cast<std::uint32_t>(audio.sample_rate_hz));
  io::put_u32(os, static_cast<std::uint32_t>(audio.sample_rate_hz) * 2);
  io::put_u16(os, 2);
  io::put_u16(os, 16);
  os.write("data", 4);
  io::put_u32(os, 2 * n);
  for (double s : audio.samples) io::put_u16(os, static_cast<std::uint16_t>(quantize_pcm16(s)));
  if (!os) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

}  // namespace vfrpool
