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

// Shoebox room impulse responses (Allen & Berkley image method) and the
// streaming direct-form convolver that applies them.

#ifndef HOWLKIT_ROOM_HPP_
#define HOWLKIT_ROOM_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "howlkit/errors.hpp"
#include "howlkit/signal.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

inline constexpr double kSpeedOfSound = 343.0;

using Vec3 = std::array<double, 3>;

struct RoomSpec {
  Vec3 dimensions{5.0, 4.0, 3.0};
  Vec3 source_pos{1.0, 1.0, 1.5};
  Vec3 mic_pos{3.0, 2.5, 1.5};
  double rt60 = 0.3;
  int sample_rate = kDefaultSampleRate;
  // 0 selects the default of half a second.
  std::size_t max_rir_len = 0;
  std::uint64_t seed = 0;
  // Uniform perturbation (meters) of every reflected image distance; 0
  // disables randomization and makes the seed irrelevant.
  double jitter = 0.0;
  // Allen & Berkley 100 Hz high-pass applied to the finished response.
  bool highpass = false;

  std::size_t length() const {
    return max_rir_len > 0 ? max_rir_len : static_cast<std::size_t>(sample_rate / 2);
  }
};

struct Rir {
  std::vector<double> taps;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return taps.size(); }
};

inline double room_volume(const Vec3& d) { return d[0] * d[1] * d[2]; }
inline double room_surface(const Vec3& d) {
  return 2.0 * (d[0] * d[1] + d[0] * d[2] + d[1] * d[2]);
}

// Shortest RT60 Sabine's formula can represent for this room (absorption 1).
inline double min_rt60(const Vec3& dims) {
  return 24.0 * std::numbers::ln10 * room_volume(dims) / (kSpeedOfSound * room_surface(dims));
}

// Frequency-independent wall reflection coefficient from Sabine's formula.
inline double reflection_coefficient(const Vec3& dims, double rt60) {
  if (rt60 == 0.0) return 0.0;
  const double absorption = min_rt60(dims) / rt60;
  if (absorption > 1.0) {
    throw ConfigError("rt60 " + std::to_string(rt60) + " s is shorter than the room allows (" +
                      std::to_string(min_rt60(dims)) + " s)");
  }
  const double beta = std::sqrt(1.0 - absorption);
  if (!(beta < 1.0)) throw ConfigError("rt60 implies a reflection coefficient >= 1");
  return beta;
}

inline void validate(const RoomSpec& spec) {
  if (spec.sample_rate <= 0) throw ConfigError("room sample rate must be positive");
  if (!(spec.rt60 >= 0.0) || !std::isfinite(spec.rt60)) throw ConfigError("rt60 must be >= 0");
  if (spec.jitter < 0.0) throw ConfigError("jitter must be >= 0");
  for (int i = 0; i < 3; ++i) {
    if (!(spec.dimensions[i] > 0.0)) throw ConfigError("room dimensions must be positive");
    const auto inside = [&](double p) { return p > 0.0 && p < spec.dimensions[i]; };
    if (!inside(spec.source_pos[i])) throw ConfigError("source position outside the room");
    if (!inside(spec.mic_pos[i])) throw ConfigError("microphone position outside the room");
  }
}

inline double source_mic_distance(const RoomSpec& spec) {
  double sq = 0.0;
  for (int i = 0; i < 3; ++i) sq += std::pow(spec.source_pos[i] - spec.mic_pos[i], 2);
  return std::sqrt(sq);
}

inline void highpass_100hz(std::vector<double>& taps, int sample_rate) {
  const double w = 2.0 * std::numbers::pi * 100.0 / sample_rate;
  const double r1 = std::exp(-w);
  const double b1 = 2.0 * r1 * std::cos(w);
  const double b2 = -r1 * r1;
  const double a1 = -(1.0 + r1);
  double y0 = 0.0, y1 = 0.0, y2 = 0.0;
  for (double& v : taps) {
    y2 = y1;
    y1 = y0;
    y0 = b1 * y1 + b2 * y2 + v;
    v = y0 + a1 * y1 + r1 * y2;
  }
}

// Image-method impulse response with nearest-sample arrival times and
// spherical 1 / (4 pi r) spreading.
inline Rir generate_rir(const RoomSpec& spec) {
  validate(spec);
  const double beta = reflection_coefficient(spec.dimensions, spec.rt60);
  const std::size_t len = spec.length();
  Rir rir{std::vector<double>(len, 0.0), spec.sample_rate};
  const double samples_per_meter = spec.sample_rate / kSpeedOfSound;
  const double max_dist = static_cast<double>(len) / samples_per_meter;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> jitter(-spec.jitter, spec.jitter);

  const auto& dim = spec.dimensions;
  const auto& s = spec.source_pos;
  const auto& r = spec.mic_pos;
  std::array<int, 3> n_max{};
  for (int i = 0; i < 3; ++i) n_max[i] = static_cast<int>(std::ceil(max_dist / (2.0 * dim[i])));

  for (int mx = -n_max[0]; mx <= n_max[0]; ++mx) {
    for (int my = -n_max[1]; my <= n_max[1]; ++my) {
      for (int mz = -n_max[2]; mz <= n_max[2]; ++mz) {
        for (int q = 0; q <= 1; ++q) {
          for (int j = 0; j <= 1; ++j) {
            for (int k = 0; k <= 1; ++k) {
              const double dx = (1 - 2 * q) * s[0] - r[0] + 2 * mx * dim[0];
              const double dy = (1 - 2 * j) * s[1] - r[1] + 2 * my * dim[1];
              const double dz = (1 - 2 * k) * s[2] - r[2] + 2 * mz * dim[2];
              const int order = std::abs(mx - q) + std::abs(mx) + std::abs(my - j) +
                                std::abs(my) + std::abs(mz - k) + std::abs(mz);
              if (order > 0 && beta == 0.0) continue;
              double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
              if (order > 0 && spec.jitter > 0.0) dist = std::max(1e-3, dist + jitter(rng));
              const auto index = static_cast<long long>(std::llround(dist * samples_per_meter));
              if (index < 0 || index >= static_cast<long long>(len)) continue;
              rir.taps[static_cast<std::size_t>(index)] +=
                  std::pow(beta, order) / (4.0 * std::numbers::pi * std::max(dist, 1e-3));
            }
          }
        }
      }
    }
  }
  if (spec.highpass) highpass_100hz(rir.taps, spec.sample_rate);
  return rir;
}

// Streaming direct-form convolution. Outputs are summed in ascending tap
// order, so any chunking produces exactly the batch result.
class StreamingConvolver {
 public:
  explicit StreamingConvolver(Rir rir) : rir_(std::move(rir)) {
    if (rir_.taps.empty()) rir_.taps.push_back(0.0);
    history_ = rir_.size() - 1;
    buffer_.assign(history_ + kSlack, 0.0);
    write_ = history_;
  }

  const Rir& rir() const { return rir_; }

  TimeSignal process(const TimeSignal& chunk) {
    if (chunk.sample_rate != rir_.sample_rate) {
      throw ConfigError("chunk sample rate " + std::to_string(chunk.sample_rate) +
                        " does not match RIR rate " + std::to_string(rir_.sample_rate));
    }
    TimeSignal out{std::vector<double>(chunk.size()), chunk.sample_rate};
    process(chunk.samples, out.samples);
    return out;
  }

  void process(std::span<const double> in, std::span<double> out) {
    if (in.size() != out.size()) throw ShapeError("convolver in/out size mismatch");
    std::size_t done = 0;
    while (done < in.size()) {
      if (write_ == buffer_.size()) compact();
      const std::size_t n = std::min(in.size() - done, buffer_.size() - write_);
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(done), n, buffer_.begin() + static_cast<std::ptrdiff_t>(write_));
      run(write_, n, out.subspan(done, n));
      write_ += n;
      done += n;
    }
  }

  void reset() {
    std::fill(buffer_.begin(), buffer_.end(), 0.0);
    write_ = history_;
  }

 private:
  static constexpr std::size_t kSlack = 4096;

  void compact() {
    std::copy(buffer_.end() - static_cast<std::ptrdiff_t>(history_), buffer_.end(), buffer_.begin());
    write_ = history_;
  }

  // out[i] = sum_m h[m] * buffer[start + i - m]; four outputs per pass keep
  // independent accumulators without changing any single sum's order.
  void run(std::size_t start, std::size_t n, std::span<double> out) const {
    const double* h = rir_.taps.data();
    const std::size_t taps = rir_.size();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
      const double* x = buffer_.data() + start + i;
      double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
      for (std::size_t m = 0; m < taps; ++m) {
        const double hm = h[m];
        const double* xm = x - m;
        a0 += hm * xm[0];
        a1 += hm * xm[1];
        a2 += hm * xm[2];
        a3 += hm * xm[3];
      }
      out[i] = a0;
      out[i + 1] = a1;
      out[i + 2] = a2;
      out[i + 3] = a3;
    }
    for (; i < n; ++i) {
      const double* x = buffer_.data() + start + i;
      double acc = 0.0;
      for (std::size_t m = 0; m < taps; ++m) acc += h[m] * x[-static_cast<std::ptrdiff_t>(m)];
      out[i] = acc;
    }
  }

  Rir rir_;
  std::size_t history_ = 0;
  std::vector<double> buffer_;
  std::size_t write_ = 0;
};

// Full-length offline convolution (len(x) + len(h) - 1 samples).
inline TimeSignal convolve(const TimeSignal& x, const Rir& h) {
  StreamingConvolver conv(h);
  TimeSignal padded = x;
  padded.samples.resize(x.size() + (h.size() > 0 ? h.size() - 1 : 0), 0.0);
  return conv.process(padded);
}

// Raw RIR file: "HKRR", u32 version, u32 sample_rate, u64 length, then
// length little-endian float64 taps.
inline constexpr std::uint32_t kRirFileVersion = 1;

inline void save_rir_raw(const std::filesystem::path& path, const Rir& rir) {
  std::string out = "HKRR";
  detail::put_u32(out, kRirFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(rir.sample_rate));
  const auto n = static_cast<std::uint64_t>(rir.size());
  out.append(reinterpret_cast<const char*>(&n), 8);
  out.append(reinterpret_cast<const char*>(rir.taps.data()), rir.size() * sizeof(double));
  detail::dump(path, out);
}

inline Rir load_rir_raw(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  if (buf.size() < 20 || buf.compare(0, 4, "HKRR") != 0) {
    throw IoError("'" + path.string() + "' is not a raw RIR file");
  }
  if (detail::read_le<std::uint32_t>(buf, 4) != kRirFileVersion) {
    throw IoError("'" + path.string() + "': unsupported RIR file version");
  }
  Rir rir;
  rir.sample_rate = static_cast<int>(detail::read_le<std::uint32_t>(buf, 8));
  const auto n = detail::read_le<std::uint64_t>(buf, 12);
  if (buf.size() != 20 + n * sizeof(double)) throw IoError("'" + path.string() + "': truncated RIR file");
  rir.taps.resize(n);
  std::memcpy(rir.taps.data(), buf.data() + 20, n * sizeof(double));
  return rir;
}

inline void save_rir_wav(const std::filesystem::path& path, const Rir& rir) {
  write_wav(path, TimeSignal{rir.taps, rir.sample_rate}, WavFormat::kFloat32);
}

inline Rir load_rir_wav(const std::filesystem::path& path) {
  auto sig = read_wav(path);
  return Rir{std::move(sig.samples), sig.sample_rate};
}

}  // namespace howlkit

#endif  // HOWLKIT_ROOM_HPP_
