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

// Frequency-domain Kalman filter over a convolutive transfer function:
// every STFT bin b carries L cross-frame taps W[b, l] applied to the last L
// reference frames, and a diagonal state-error covariance P[b, l].
//
//   predict:  S_hat[b] = Y[b] - sum_l X[b, l] W[b, l]
//   gain:     K[b, l]  = P[b, l] conj(X[b, l]) / (sum_l |X[b, l]|^2 P[b, l] + obs_noise[b] + eps)
//   update:   W[b, l] <- A (W[b, l] + K[b, l] S_hat[b])
//             P[b, l] <- max(0, A^2 (1 - alpha Re(K[b, l] X[b, l])) P[b, l] + proc_noise[b, l])

#ifndef HOWLKIT_FDKF_HPP_
#define HOWLKIT_FDKF_HPP_

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "howlkit/errors.hpp"
#include "howlkit/signal.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

// Row-major [bins x taps] array.
template <typename T>
class BinTapArray {
 public:
  BinTapArray() = default;
  BinTapArray(std::size_t bins, std::size_t taps, T fill = T{})
      : bins_(bins), taps_(taps), data_(bins * taps, fill) {}

  std::size_t bins() const { return bins_; }
  std::size_t taps() const { return taps_; }
  T& operator()(std::size_t b, std::size_t l) { return data_[b * taps_ + l]; }
  const T& operator()(std::size_t b, std::size_t l) const { return data_[b * taps_ + l]; }
  T* row(std::size_t b) { return data_.data() + b * taps_; }
  const T* row(std::size_t b) const { return data_.data() + b * taps_; }
  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }
  void fill(const T& v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(std::size_t bins, std::size_t taps) const {
    return bins_ == bins && taps_ == taps;
  }

  friend bool operator==(const BinTapArray&, const BinTapArray&) = default;

 private:
  std::size_t bins_ = 0;
  std::size_t taps_ = 0;
  std::vector<T> data_;
};

using ComplexBinTaps = BinTapArray<Complex>;
using RealBinTaps = BinTapArray<double>;

struct FdkfConfig {
  std::size_t num_bins = 65;
  std::size_t num_taps = 20;
  double transition = 0.999;  // A
  double gain_scale = 0.5;    // alpha
  double p_init = 1e-2;
  double regularizer = 1e-10;  // eps
  double smoothing = 0.9;      // beta of the classical obs_noise smoother

  void validate() const {
    if (num_bins == 0) throw ConfigError("num_bins must be positive");
    if (num_taps == 0) throw ConfigError("num_taps must be >= 1");
    if (!(transition > 0.0 && transition <= 1.0)) throw ConfigError("transition A must lie in (0, 1]");
    if (!(gain_scale > 0.0 && gain_scale <= 1.0)) throw ConfigError("gain scale alpha must lie in (0, 1]");
    if (!(p_init > 0.0)) throw ConfigError("p_init must be positive");
    if (!(regularizer > 0.0)) throw ConfigError("regularizer must be positive");
    if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("smoothing must lie in [0, 1)");
  }

  friend bool operator==(const FdkfConfig&, const FdkfConfig&) = default;
};

struct KalmanState {
  ComplexBinTaps weights;            // W
  RealBinTaps covariance;            // P
  ComplexBinTaps reference_history;  // newest frame at tap 0
  std::vector<double> smoothed_psd;  // classical obs_noise smoother memory
  std::size_t clamp_events = 0;

  friend bool operator==(const KalmanState&, const KalmanState&) = default;
};

struct CovariancePair {
  std::vector<double> obs_noise;  // [bins]
  RealBinTaps proc_noise;          // [bins x taps]
};

inline KalmanState make_kalman_state(const FdkfConfig& cfg) {
  cfg.validate();
  KalmanState st;
  st.weights = ComplexBinTaps(cfg.num_bins, cfg.num_taps);
  st.covariance = RealBinTaps(cfg.num_bins, cfg.num_taps, cfg.p_init);
  st.reference_history = ComplexBinTaps(cfg.num_bins, cfg.num_taps);
  st.smoothed_psd.assign(cfg.num_bins, 0.0);
  return st;
}

inline void check_frame(const SpectrumFrame& f, std::size_t bins, const char* what) {
  if (f.size() != bins) {
    throw ShapeError(std::string(what) + " has " + std::to_string(f.size()) +
                     " bins, filter expects " + std::to_string(bins));
  }
}

// Shifts a reference history by one frame and inserts `frame` at tap 0.
inline void push_history(ComplexBinTaps& history, const SpectrumFrame& frame) {
  check_frame(frame, history.bins(), "reference frame");
  const std::size_t taps = history.taps();
  for (std::size_t b = 0; b < history.bins(); ++b) {
    Complex* row = history.row(b);
    std::copy_backward(row, row + taps - 1, row + taps);
    row[0] = frame.bins[b];
  }
}

inline void push_reference(KalmanState& state, const SpectrumFrame& frame) {
  push_history(state.reference_history, frame);
}

inline SpectrumFrame predict(const ComplexBinTaps& weights, const ComplexBinTaps& history,
                             const SpectrumFrame& mic) {
  check_frame(mic, weights.bins(), "microphone frame");
  if (!history.same_shape(weights.bins(), weights.taps())) throw ShapeError("history/weights shape mismatch");
  SpectrumFrame err{mic.bins, mic.index};
  for (std::size_t b = 0; b < weights.bins(); ++b) {
    const Complex* w = weights.row(b);
    const Complex* x = history.row(b);
    Complex echo{};
    for (std::size_t l = 0; l < weights.taps(); ++l) echo += x[l] * w[l];
    err.bins[b] -= echo;
  }
  return err;
}

inline SpectrumFrame predict(const KalmanState& state, const SpectrumFrame& mic) {
  return predict(state.weights, state.reference_history, mic);
}

inline ComplexBinTaps kalman_gain(const RealBinTaps& covariance, const ComplexBinTaps& history,
                                  const std::vector<double>& obs_noise, double regularizer) {
  const std::size_t bins = covariance.bins(), taps = covariance.taps();
  if (obs_noise.size() != bins || !history.same_shape(bins, taps)) throw ShapeError("gain input shape mismatch");
  ComplexBinTaps gain(bins, taps);
  for (std::size_t b = 0; b < bins; ++b) {
    const double* p = covariance.row(b);
    const Complex* x = history.row(b);
    double denom = 0.0;
    for (std::size_t l = 0; l < taps; ++l) denom += std::norm(x[l]) * p[l];
    denom += obs_noise[b] + regularizer;
    Complex* k = gain.row(b);
    for (std::size_t l = 0; l < taps; ++l) k[l] = p[l] * std::conj(x[l]) / denom;
  }
  return gain;
}

inline ComplexBinTaps kalman_gain(const KalmanState& state, const CovariancePair& cov,
                                  const FdkfConfig& cfg) {
  return kalman_gain(state.covariance, state.reference_history, cov.obs_noise, cfg.regularizer);
}

// Applies the state and covariance recursions in place. Returns the number of
// covariance entries clamped at zero this call.
inline std::size_t update(KalmanState& state, const ComplexBinTaps& gain, const SpectrumFrame& err,
                          const CovariancePair& cov, const FdkfConfig& cfg) {
  const std::size_t bins = state.weights.bins(), taps = state.weights.taps();
  check_frame(err, bins, "error frame");
  if (!gain.same_shape(bins, taps) || !cov.proc_noise.same_shape(bins, taps)) {
    throw ShapeError("update input shape mismatch");
  }
  const double a = cfg.transition;
  const double a2 = a * a;
  std::size_t clamps = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    Complex* w = state.weights.row(b);
    double* p = state.covariance.row(b);
    const Complex* k = gain.row(b);
    const Complex* x = state.reference_history.row(b);
    const double* q = cov.proc_noise.row(b);
    for (std::size_t l = 0; l < taps; ++l) {
      w[l] = a * (w[l] + k[l] * err.bins[b]);
      const double next = a2 * (1.0 - cfg.gain_scale * (k[l] * x[l]).real()) * p[l] + q[l];
      if (next < 0.0) {
        p[l] = 0.0;
        ++clamps;
      } else {
        p[l] = next;
      }
    }
  }
  state.clamp_events += clamps;
  return clamps;
}

// Classical estimates: obs_noise is the exponentially smoothed error power and
// proc_noise[b, l] = (1 - A^2) |W[b, l]|^2. Advances the smoother in `state`.
inline CovariancePair classical_covariances(const SpectrumFrame& err, KalmanState& state,
                                            const FdkfConfig& cfg) {
  const std::size_t bins = state.weights.bins(), taps = state.weights.taps();
  check_frame(err, bins, "error frame");
  CovariancePair cov{std::vector<double>(bins), RealBinTaps(bins, taps)};
  const double beta = cfg.smoothing;
  const double drift = 1.0 - cfg.transition * cfg.transition;
  for (std::size_t b = 0; b < bins; ++b) {
    state.smoothed_psd[b] = beta * state.smoothed_psd[b] + (1.0 - beta) * std::norm(err.bins[b]);
    cov.obs_noise[b] = state.smoothed_psd[b];
    for (std::size_t l = 0; l < taps; ++l) cov.proc_noise(b, l) = drift * std::norm(state.weights(b, l));
  }
  return cov;
}

inline bool all_finite(const KalmanState& st) {
  for (const auto& v : st.weights.data()) if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  for (double v : st.covariance.data()) if (!std::isfinite(v)) return false;
  return true;
}

// Snapshot file: "HKKF", u32 version, u64 bins, u64 taps, config as 6
// float64 (A, alpha, p_init, eps, beta, reserved 0), then W (complex as
// re/im pairs), P, X_hist, smoothed_psd; all little-endian float64.
inline constexpr std::uint32_t kKalmanSnapshotVersion = 1;

inline void save_kalman_snapshot(const std::filesystem::path& path, const KalmanState& st,
                                 const FdkfConfig& cfg) {
  std::string out = "HKKF";
  detail::put_u32(out, kKalmanSnapshotVersion);
  const auto put_u64 = [&](std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); };
  const auto put_f64 = [&](double v) { out.append(reinterpret_cast<const char*>(&v), 8); };
  put_u64(cfg.num_bins);
  put_u64(cfg.num_taps);
  for (double v : {cfg.transition, cfg.gain_scale, cfg.p_init, cfg.regularizer, cfg.smoothing, 0.0}) put_f64(v);
  for (const auto& c : st.weights.data()) { put_f64(c.real()); put_f64(c.imag()); }
  for (double v : st.covariance.data()) put_f64(v);
  for (const auto& c : st.reference_history.data()) { put_f64(c.real()); put_f64(c.imag()); }
  for (double v : st.smoothed_psd) put_f64(v);
  detail::dump(path, out);
}

struct KalmanSnapshot {
  FdkfConfig config;
  KalmanState state;
};

inline KalmanSnapshot load_kalman_snapshot(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  const auto bad = [&](const std::string& why) { return IoError("'" + path.string() + "': " + why); };
  if (buf.size() < 72 || buf.compare(0, 4, "HKKF") != 0) throw bad("not a filter snapshot");
  if (detail::read_le<std::uint32_t>(buf, 4) != kKalmanSnapshotVersion) throw bad("unsupported snapshot version");
  KalmanSnapshot snap;
  auto& cfg = snap.config;
  cfg.num_bins = detail::read_le<std::uint64_t>(buf, 8);
  cfg.num_taps = detail::read_le<std::uint64_t>(buf, 16);
  std::size_t pos = 24;
  const auto f64 = [&] {
    const double v = detail::read_le<double>(buf, pos);
    pos += 8;
    return v;
  };
  cfg.transition = f64();
  cfg.gain_scale = f64();
  cfg.p_init = f64();
  cfg.regularizer = f64();
  cfg.smoothing = f64();
  (void)f64();
  const std::size_t cells = cfg.num_bins * cfg.num_taps;
  const std::size_t expected = pos + 8 * (2 * cells + cells + 2 * cells + cfg.num_bins);
  if (cells == 0 || buf.size() != expected) throw bad("truncated or malformed snapshot");
  snap.state = make_kalman_state(cfg);
  for (auto& c : snap.state.weights.data()) { const double re = f64(); c = {re, f64()}; }
  for (auto& v : snap.state.covariance.data()) v = f64();
  for (auto& c : snap.state.reference_history.data()) { const double re = f64(); c = {re, f64()}; }
  for (auto& v : snap.state.smoothed_psd) v = f64();
  return snap;
}

}  // namespace howlkit

#endif  // HOWLKIT_FDKF_HPP_
