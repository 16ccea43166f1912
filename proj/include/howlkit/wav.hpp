/*
Copyright 2026 The howlkit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS-IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

// Mono RIFF/WAVE reader and writer: 16-bit PCM and 32-bit IEEE float.

#ifndef HOWLKIT_WAV_HPP_
#define HOWLKIT_WAV_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "howlkit/errors.hpp"
#include "howlkit/signal.hpp"

namespace howlkit {

static_assert(std::endian::native == std::endian::little,
              "howlkit file formats assume a little-endian host");

enum class WavFormat { kPcm16, kFloat32 };

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u16(std::string& s, std::uint16_t v) { s.append(reinterpret_cast<const char*>(&v), 2); }

template <typename T>
T read_le(const std::string& buf, std::size_t pos) {
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void dump(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

inline std::int16_t to_pcm16(double v) {
  const double scaled = std::round(std::clamp(v, -1.0, 1.0) * 32767.0);
  return static_cast<std::int16_t>(scaled);
}

inline void write_wav(const std::filesystem::path& path, const TimeSignal& signal,
                      WavFormat format = WavFormat::kFloat32) {
  const bool pcm = format == WavFormat::kPcm16;
  const std::uint16_t bytes_per_sample = pcm ? 2 : 4;
  const auto data_bytes = static_cast<std::uint32_t>(signal.size() * bytes_per_sample);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, pcm ? 1 : 3);
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(signal.sample_rate) * bytes_per_sample);
  detail::put_u16(out, bytes_per_sample);
  detail::put_u16(out, static_cast<std::uint16_t>(bytes_per_sample * 8));
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double v : signal.samples) {
    if (pcm) {
      detail::put_u16(out, static_cast<std::uint16_t>(to_pcm16(v)));
    } else {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  detail::dump(path, out);
}

struct WavData {
  TimeSignal signal;
  WavFormat format = WavFormat::kFloat32;
};

inline WavData read_wav_with_format(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  const auto bad = [&](const std::string& why) {
    return IoError("'" + path.string() + "': " + why);
  };
  if (buf.size() < 12 || buf.compare(0, 4, "RIFF") != 0 || buf.compare(8, 4, "WAVE") != 0) {
    throw bad("not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  std::uint16_t tag = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (pos + 8 <= buf.size()) {
    const std::string id = buf.substr(pos, 4);
    const auto len = detail::read_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) throw bad("truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw bad("short fmt chunk");
      tag = detail::read_le<std::uint16_t>(buf, body);
      channels = detail::read_le<std::uint16_t>(buf, body + 2);
      rate = detail::read_le<std::uint32_t>(buf, body + 4);
      bits = detail::read_le<std::uint16_t>(buf, body + 14);
      if (tag == 0xFFFE && len >= 26) tag = detail::read_le<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw bad("data chunk before fmt chunk");
      if (channels != 1) throw bad("only mono files are supported");
      WavData out;
      out.signal.sample_rate = static_cast<int>(rate);
      if (tag == 1 && bits == 16) {
        out.format = WavFormat::kPcm16;
        out.signal.samples.resize(len / 2);
        for (std::size_t i = 0; i < out.signal.size(); ++i) {
          out.signal.samples[i] = detail::read_le<std::int16_t>(buf, body + 2 * i) / 32768.0;
        }
      } else if (tag == 3 && bits == 32) {
        out.format = WavFormat::kFloat32;
        out.signal.samples.resize(len / 4);
        for (std::size_t i = 0; i < out.signal.size(); ++i) {
          out.signal.samples[i] = detail::read_le<float>(buf, body + 4 * i);
        }
      } else {
        throw bad("unsupported sample format (need 16-bit PCM or 32-bit float)");
      }
      return out;
    }
    pos = body + len + (len & 1u);
  }
  throw bad("no data chunk");
}

// Reads a mono WAV file; refuses files whose rate differs from
// expected_rate (no resampling is performed).
inline TimeSignal read_wav(const std::filesystem::path& path, int expected_rate = 0) {
  auto data = read_wav_with_format(path);
  if (expected_rate > 0 && data.signal.sample_rate != expected_rate) {
    throw ConfigError("'" + path.string() + "' has sample rate " +
                      std::to_string(data.signal.sample_rate) + ", expected " +
                      std::to_string(expected_rate) + " (resampling is not supported)");
  }
  return std::move(data.signal);
}

}  // namespace howlkit

#endif  // HOWLKIT_WAV_HPP_
