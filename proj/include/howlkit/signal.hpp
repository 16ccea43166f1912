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

// Framing, windowing and short-time Fourier transforms.
//
// Conventions used throughout howlkit:
//   * Forward FFT is unnormalized, the inverse carries the 1/N factor.
//   * Spectra are one-sided: frame_len / 2 + 1 bins.
//   * Frame k covers samples [k * hop, k * hop + frame_len).
//   * The same window is used for analysis and synthesis; the overlap-add
//     sum of the squared window is divided out on synthesis.

#ifndef HOWLKIT_SIGNAL_HPP_
#define HOWLKIT_SIGNAL_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "howlkit/errors.hpp"

namespace howlkit {

using Complex = std::complex<double>;

inline constexpr int kDefaultSampleRate = 16000;

struct TimeSignal {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("sample rate must be positive");
    for (double v : samples) {
      if (!std::isfinite(v)) throw NumericError("signal contains non-finite samples");
    }
  }
};

enum class WindowKind { kSqrtHann, kRectangular };

inline std::string_view window_name(WindowKind kind) {
  return kind == WindowKind::kSqrtHann ? "sqrt_hann" : "rectangular";
}

inline WindowKind parse_window(std::string_view name) {
  if (name == "sqrt_hann") return WindowKind::kSqrtHann;
  if (name == "rectangular") return WindowKind::kRectangular;
  throw ConfigError("unknown window '" + std::string(name) + "'");
}

// Periodic window of length n. The periodic square-root Hann window reduces
// to sin(pi * i / n).
inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::kSqrtHann) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::sin(std::numbers::pi * static_cast<double>(i) /
                      static_cast<double>(n));
    }
  }
  return w;
}

struct StftConfig {
  std::size_t frame_len = 128;
  std::size_t hop = 64;
  WindowKind window = WindowKind::kSqrtHann;

  std::size_t fft_size() const { return frame_len; }
  std::size_t num_bins() const { return frame_len / 2 + 1; }

  // Sum over frames of window^2 at sample n, for every n in one hop period.
  std::vector<double> overlap_gain_profile() const {
    const auto w = make_window(window, frame_len);
    std::vector<double> profile(hop, 0.0);
    for (std::size_t n = 0; n < hop; ++n) {
      for (std::size_t i = n; i < frame_len; i += hop) profile[n] += w[i] * w[i];
    }
    return profile;
  }

  // Constant overlap-add gain of window^2. Throws if the window/hop pair is
  // not COLA within 1e-12.
  double overlap_gain() const {
    const auto profile = overlap_gain_profile();
    const double ref = profile.front();
    for (double g : profile) {
      if (std::abs(g - ref) > 1e-12 * std::max(1.0, std::abs(ref))) {
        throw ConfigError("window/hop pair does not satisfy constant overlap-add");
      }
    }
    if (ref <= 0.0) throw ConfigError("window has zero overlap-add gain");
    return ref;
  }

  void validate() const {
    if (frame_len == 0 || frame_len % 2 != 0) {
      throw ConfigError("frame_len must be even and positive");
    }
    if (hop == 0 || hop > frame_len) {
      throw ConfigError("hop must satisfy 0 < hop <= frame_len");
    }
    (void)overlap_gain();
  }
};

struct SpectrumFrame {
  std::vector<Complex> bins;
  std::size_t index = 0;

  std::size_t size() const { return bins.size(); }
};

namespace detail {

inline Eigen::FFT<double>& thread_fft() {
  thread_local Eigen::FFT<double> fft = [] {
    Eigen::FFT<double> f;
    f.SetFlag(Eigen::FFT<double>::HalfSpectrum);
    return f;
  }();
  return fft;
}

}  // namespace detail

// One-sided forward transform of a single windowed frame.
inline void analyze_frame(std::span<const double> frame, std::span<const double> window,
                          std::vector<double>& scratch, std::vector<Complex>& bins) {
  scratch.resize(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) scratch[i] = frame[i] * window[i];
  detail::thread_fft().fwd(bins, scratch);
}

// Inverse transform of one frame, multiplied by the synthesis window and
// divided by the overlap-add gain.
inline void synthesize_frame(const std::vector<Complex>& bins, std::span<const double> window,
                             double ola_gain, std::vector<Complex>& scratch_bins,
                             std::vector<double>& out) {
  scratch_bins = bins;  // Eigen's inverse may touch its input
  detail::thread_fft().inv(out, scratch_bins, static_cast<Eigen::Index>(window.size()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= window[i] / ola_gain;
}

inline std::vector<SpectrumFrame> stft(const TimeSignal& signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.size() < cfg.frame_len) {
    throw ConfigError("signal shorter than one frame (" + std::to_string(signal.size()) +
                      " < " + std::to_string(cfg.frame_len) + ")");
  }
  const auto window = make_window(cfg.window, cfg.frame_len);
  const std::size_t count = 1 + (signal.size() - cfg.frame_len) / cfg.hop;
  std::vector<SpectrumFrame> frames(count);
  std::vector<double> scratch;
  const std::span<const double> samples(signal.samples);
  for (std::size_t k = 0; k < count; ++k) {
    frames[k].index = k;
    analyze_frame(samples.subspan(k * cfg.hop, cfg.frame_len), window, scratch,
                  frames[k].bins);
  }
  return frames;
}

inline TimeSignal istft(std::span<const SpectrumFrame> frames, const StftConfig& cfg,
                        int sample_rate = kDefaultSampleRate) {
  cfg.validate();
  TimeSignal out{{}, sample_rate};
  if (frames.empty()) return out;
  for (const auto& f : frames) {
    if (f.size() != cfg.num_bins()) {
      throw ShapeError("frame has " + std::to_string(f.size()) + " bins, expected " +
                       std::to_string(cfg.num_bins()));
    }
  }
  const auto window = make_window(cfg.window, cfg.frame_len);
  const double gain = cfg.overlap_gain();
  out.samples.assign((frames.size() - 1) * cfg.hop + cfg.frame_len, 0.0);
  std::vector<Complex> scratch_bins;
  std::vector<double> buf;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    synthesize_frame(frames[k].bins, window, gain, scratch_bins, buf);
    double* dst = out.samples.data() + k * cfg.hop;
    for (std::size_t i = 0; i < cfg.frame_len; ++i) dst[i] += buf[i];
  }
  return out;
}

inline constexpr double kDefaultLogFloor = 1e-12;

// Elementwise log(max(|bin|^2, floor)).
inline std::vector<double> log_power(const SpectrumFrame& frame,
                                     double floor = kDefaultLogFloor) {
  if (!(floor > 0.0)) throw ConfigError("log_power floor must be positive");
  std::vector<double> out(frame.size());
  for (std::size_t b = 0; b < frame.size(); ++b) {
    out[b] = std::log(std::max(std::norm(frame.bins[b]), floor));
  }
  return out;
}

// Samples of look-back a streaming analyzer carries before the stream start.
inline std::size_t streaming_lead(const StftConfig& cfg) { return cfg.frame_len - cfg.hop; }

// Prepends streaming_lead(cfg) zeros so that the batch stft of the result
// reproduces the frames of StreamingAnalyzer: streaming frame k covers
// samples [(k + 1) * hop - frame_len, (k + 1) * hop) of the original signal.
inline TimeSignal streaming_aligned(const TimeSignal& signal, const StftConfig& cfg) {
  TimeSignal out{std::vector<double>(streaming_lead(cfg), 0.0), signal.sample_rate};
  out.samples.insert(out.samples.end(), signal.samples.begin(), signal.samples.end());
  return out;
}

// Hop-by-hop analysis. Each push of exactly `hop` samples yields one frame
// spanning the last frame_len samples (zeros before the stream start).
class StreamingAnalyzer {
 public:
  explicit StreamingAnalyzer(const StftConfig& cfg)
      : cfg_(cfg), window_(make_window(cfg.window, cfg.frame_len)),
        buffer_(cfg.frame_len, 0.0) {
    cfg_.validate();
  }

  const SpectrumFrame& push(std::span<const double> hop_samples) {
    if (hop_samples.size() != cfg_.hop) throw ShapeError("analyzer expects exactly one hop");
    std::shift_left(buffer_.begin(), buffer_.end(), static_cast<std::ptrdiff_t>(cfg_.hop));
    std::copy(hop_samples.begin(), hop_samples.end(), buffer_.end() - static_cast<std::ptrdiff_t>(cfg_.hop));
    analyze_frame(buffer_, window_, scratch_, frame_.bins);
    frame_.index = count_++;
    return frame_;
  }

  void reset() {
    std::fill(buffer_.begin(), buffer_.end(), 0.0);
    count_ = 0;
  }

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  std::vector<double> buffer_;
  std::vector<double> scratch_;
  SpectrumFrame frame_;
  std::size_t count_ = 0;
};

// Hop-by-hop overlap-add synthesis. Each pushed frame releases the hop of
// samples that no later frame touches.
class StreamingSynthesizer {
 public:
  explicit StreamingSynthesizer(const StftConfig& cfg)
      : cfg_(cfg), window_(make_window(cfg.window, cfg.frame_len)),
        gain_(cfg.overlap_gain()), accum_(cfg.frame_len, 0.0) {}

  void push(const SpectrumFrame& frame, std::span<double> out_hop) {
    if (frame.size() != cfg_.num_bins()) throw ShapeError("synthesizer frame size mismatch");
    if (out_hop.size() != cfg_.hop) throw ShapeError("synthesizer expects exactly one hop");
    synthesize_frame(frame.bins, window_, gain_, scratch_bins_, buf_);
    for (std::size_t i = 0; i < cfg_.frame_len; ++i) accum_[i] += buf_[i];
    std::copy_n(accum_.begin(), cfg_.hop, out_hop.begin());
    std::shift_left(accum_.begin(), accum_.end(), static_cast<std::ptrdiff_t>(cfg_.hop));
    std::fill(accum_.end() - static_cast<std::ptrdiff_t>(cfg_.hop), accum_.end(), 0.0);
  }

  void reset() { std::fill(accum_.begin(), accum_.end(), 0.0); }

 private:
  StftConfig cfg_;
  std::vector<double> window_;
  double gain_;
  std::vector<double> accum_;
  std::vector<Complex> scratch_bins_;
  std::vector<double> buf_;
};

}  // namespace howlkit

#endif  // HOWLKIT_SIGNAL_HPP_
