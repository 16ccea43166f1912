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

// Kalman-filter howling suppressor with optional learned components:
//
//   mask:        ref = mask(mic, previous loudspeaker frame) * mic replaces
//                the loudspeaker reference
//   obs_cov:     observation noise per bin from the error spectrum
//   proc_cov:    process noise per bin from the filter power, spread over taps
//
// With every learned component disabled the engine runs exactly the
// classical filter from fdkf.hpp. backward_window() differentiates a recorded
// window of frames through mask application, covariance injection and the
// filter recursion itself; complex gradients are carried as
// dL/dRe + i dL/dIm.

#ifndef HOWLKIT_NEURAL_KALMAN_HPP_
#define HOWLKIT_NEURAL_KALMAN_HPP_

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "howlkit/errors.hpp"
#include "howlkit/fdkf.hpp"
#include "howlkit/loop.hpp"
#include "howlkit/neural.hpp"
#include "howlkit/signal.hpp"

namespace howlkit {

// Fixed log-power feature normalization: (log(max(p, floor)) - mean) * scale.
struct FeatureNorm {
  double mean = -5.0;
  double scale = 0.25;
  double floor = kDefaultLogFloor;

  double operator()(double power) const { return (std::log(std::max(power, floor)) - mean) * scale; }
  double grad(double power) const { return power > floor ? scale / power : 0.0; }
};

enum class ReferenceMode {
  kEverywhere,   // masked reference feeds prediction, gain and covariance update
  kPredictOnly,  // masked reference feeds prediction; gain and update keep the loudspeaker frame
};

struct NetSizes {
  std::size_t mask_hidden = 32;
  std::size_t mask_layers = 2;
  std::size_t cov_hidden = 65;
  // Output bias of the process-noise network; negative values start the
  // filter with little process noise.
  double proc_output_bias = -3.0;
  double obs_output_bias = 0.0;

  friend bool operator==(const NetSizes&, const NetSizes&) = default;
};

struct NeuralKalmanConfig {
  StftConfig stft;
  FdkfConfig fdkf;
  bool use_mask = true;
  bool use_learned_cov = true;
  ReferenceMode reference_mode = ReferenceMode::kEverywhere;
  FeatureNorm features;
  // Treat filter internals as constants during backpropagation.
  bool stop_grad_filter = false;

  bool uses_nets() const { return use_mask || use_learned_cov; }

  void validate() const {
    stft.validate();
    fdkf.validate();
    if (fdkf.num_bins != stft.num_bins()) {
      throw ConfigError("filter bins (" + std::to_string(fdkf.num_bins) + ") do not match STFT bins (" +
                        std::to_string(stft.num_bins()) + ")");
    }
    if (!(features.floor > 0.0)) throw ConfigError("feature floor must be positive");
  }
};

inline NeuralKalmanConfig classical_config(const StftConfig& stft, FdkfConfig fdkf) {
  NeuralKalmanConfig cfg;
  cfg.stft = stft;
  fdkf.num_bins = stft.num_bins();
  cfg.fdkf = fdkf;
  cfg.use_mask = false;
  cfg.use_learned_cov = false;
  return cfg;
}

struct NeuralKalmanNets {
  RecurrentNetParams mask;
  RecurrentNetParams obs_cov;
  RecurrentNetParams proc_cov;

  template <typename F>
  void for_each_net(F&& f) {
    f("mask", mask);
    f("obs_cov", obs_cov);
    f("proc_cov", proc_cov);
  }
  template <typename F>
  void for_each_net(F&& f) const {
    f("mask", mask);
    f("obs_cov", obs_cov);
    f("proc_cov", proc_cov);
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    for_each_net([&](const char* net, RecurrentNetParams& p) {
      p.for_each_tensor([&](const std::string& name, double* d, std::size_t n) { f(net + ("." + name), d, n); });
    });
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<NeuralKalmanNets*>(this)->for_each_tensor(
        [&](const std::string& name, double* d, std::size_t n) { f(name, static_cast<const double*>(d), n); });
  }

  bool all_finite() const { return mask.all_finite() && obs_cov.all_finite() && proc_cov.all_finite(); }

  NeuralKalmanNets zeros_like() const { return {mask.zeros_like(), obs_cov.zeros_like(), proc_cov.zeros_like()}; }

  friend bool operator==(const NeuralKalmanNets&, const NeuralKalmanNets&) = default;
};

inline NetShape mask_net_shape(std::size_t bins, const NetSizes& sizes) {
  return {2 * bins, sizes.mask_hidden, sizes.mask_layers, bins, OutputActivation::kSigmoid};
}

inline NetShape cov_net_shape(std::size_t bins, const NetSizes& sizes) {
  return {bins, sizes.cov_hidden, 1, bins, OutputActivation::kSoftplus};
}

inline NeuralKalmanNets make_nets(std::size_t bins, const NetSizes& sizes, std::uint64_t seed) {
  NeuralKalmanNets nets;
  nets.mask = init_params(mask_net_shape(bins, sizes), {seed, 1.0, 0.0});
  nets.obs_cov = init_params(cov_net_shape(bins, sizes), {seed + 1, 1.0, sizes.obs_output_bias});
  nets.proc_cov = init_params(cov_net_shape(bins, sizes), {seed + 2, 1.0, sizes.proc_output_bias});
  return nets;
}

inline void check_nets(const NeuralKalmanNets& nets, std::size_t bins) {
  const auto expect = [&](const RecurrentNetParams& p, std::size_t in, OutputActivation act, const char* name) {
    p.validate();
    const auto s = p.shape();
    if (s.input != in || s.output != bins || s.activation != act) {
      throw ShapeError(std::string(name) + " network has " + describe(s) + ", incompatible with " +
                       std::to_string(bins) + " bins");
    }
  };
  expect(nets.mask, 2 * bins, OutputActivation::kSigmoid, "mask");
  expect(nets.obs_cov, bins, OutputActivation::kSoftplus, "obs_cov");
  expect(nets.proc_cov, bins, OutputActivation::kSoftplus, "proc_cov");
}

// R[b] = mask[b] * Y[b]; magnitude scaled, phase kept.
inline SpectrumFrame mask_apply(std::span<const double> mask, const SpectrumFrame& mic) {
  if (mask.size() != mic.size()) throw ShapeError("mask length does not match frame");
  SpectrumFrame r{mic.bins, mic.index};
  for (std::size_t b = 0; b < mask.size(); ++b) r.bins[b] *= mask[b];
  return r;
}

// Per-frame record of the forward pass.
struct FrameTape {
  SpectrumFrame mic;
  SpectrumFrame err;
  ComplexBinTaps pred_history;
  ComplexBinTaps gain_history;
  ComplexBinTaps weights;  // before update
  RealBinTaps covariance;  // before update
  ComplexBinTaps gain;
  std::vector<double> obs_noise;
  RealBinTaps proc_noise;
  StepTape mask_tape, obs_tape, proc_tape;
  std::vector<double> weight_power;  // sum_l |W[b, l]|^2
};

// Frame-level engine (no framing). One instance per audio stream.
class NeuralKalmanFilter {
 public:
  NeuralKalmanFilter(const NeuralKalmanConfig& cfg, const NeuralKalmanNets* nets)
      : cfg_(cfg), nets_(nets) {
    cfg_.validate();
    if (cfg_.uses_nets()) {
      if (!nets_) throw ConfigError("learned components enabled but no networks supplied");
      check_nets(*nets_, cfg_.fdkf.num_bins);
    }
    reset();
  }

  void reset() {
    state_ = make_kalman_state(cfg_.fdkf);
    pred_history_ = ComplexBinTaps(cfg_.fdkf.num_bins, cfg_.fdkf.num_taps);
    prev_reference_ = SpectrumFrame{std::vector<Complex>(cfg_.fdkf.num_bins), 0};
    if (nets_) {
      h_mask_ = HiddenState::zeros(nets_->mask);
      h_obs_ = HiddenState::zeros(nets_->obs_cov);
      h_proc_ = HiddenState::zeros(nets_->proc_cov);
    }
  }

  // Clears the filter recursion but keeps network memory.
  void reset_filter() {
    state_ = make_kalman_state(cfg_.fdkf);
    pred_history_ = ComplexBinTaps(cfg_.fdkf.num_bins, cfg_.fdkf.num_taps);
  }

  const KalmanState& state() const { return state_; }
  const NeuralKalmanConfig& config() const { return cfg_; }

  SpectrumFrame step(const SpectrumFrame& mic, const SpectrumFrame& reference, FrameTape* tape = nullptr) {
    const std::size_t bins = cfg_.fdkf.num_bins;
    check_frame(mic, bins, "microphone frame");
    check_frame(reference, bins, "reference frame");
    const bool predict_only = cfg_.use_mask && cfg_.reference_mode == ReferenceMode::kPredictOnly;

    SpectrumFrame ref = reference;
    if (cfg_.use_mask) {
      VectorXd in(2 * bins);
      for (std::size_t b = 0; b < bins; ++b) {
        in[b] = cfg_.features(std::norm(mic.bins[b]));
        in[bins + b] = cfg_.features(std::norm(prev_reference_.bins[b]));
      }
      const VectorXd mask = forward(nets_->mask, in, h_mask_, tape ? &tape->mask_tape : nullptr);
      ref = mask_apply(std::span<const double>(mask.data(), bins), mic);
    }
    prev_reference_ = reference;

    push_reference(state_, predict_only ? reference : ref);
    if (predict_only) push_history(pred_history_, ref);
    const ComplexBinTaps& pred = predict_only ? pred_history_ : state_.reference_history;
    SpectrumFrame err = predict(state_.weights, pred, mic);

    CovariancePair cov;
    std::vector<double> weight_power;
    if (cfg_.use_learned_cov) {
      cov.obs_noise.resize(bins);
      cov.proc_noise = RealBinTaps(bins, cfg_.fdkf.num_taps);
      VectorXd obs_in(bins), proc_in(bins);
      weight_power.assign(bins, 0.0);
      for (std::size_t b = 0; b < bins; ++b) {
        obs_in[b] = cfg_.features(std::norm(err.bins[b]));
        for (std::size_t l = 0; l < cfg_.fdkf.num_taps; ++l) weight_power[b] += std::norm(state_.weights(b, l));
        proc_in[b] = cfg_.features(weight_power[b]);
      }
      const VectorXd obs = forward(nets_->obs_cov, obs_in, h_obs_, tape ? &tape->obs_tape : nullptr);
      const VectorXd proc = forward(nets_->proc_cov, proc_in, h_proc_, tape ? &tape->proc_tape : nullptr);
      const double per_tap = 1.0 / static_cast<double>(cfg_.fdkf.num_taps);
      for (std::size_t b = 0; b < bins; ++b) {
        cov.obs_noise[b] = obs[b];
        for (std::size_t l = 0; l < cfg_.fdkf.num_taps; ++l) cov.proc_noise(b, l) = proc[b] * per_tap;
      }
    } else {
      cov = classical_covariances(err, state_, cfg_.fdkf);
    }

    ComplexBinTaps gain = kalman_gain(state_.covariance, state_.reference_history, cov.obs_noise,
                                      cfg_.fdkf.regularizer);
    if (tape) {
      tape->mic = mic;
      tape->err = err;
      tape->pred_history = pred;
      tape->gain_history = state_.reference_history;
      tape->weights = state_.weights;
      tape->covariance = state_.covariance;
      tape->gain = gain;
      tape->obs_noise = cov.obs_noise;
      tape->proc_noise = cov.proc_noise;
      tape->weight_power = std::move(weight_power);
    }
    update(state_, gain, err, cov, cfg_.fdkf);
    return err;
  }

 private:
  NeuralKalmanConfig cfg_;
  const NeuralKalmanNets* nets_ = nullptr;
  KalmanState state_;
  ComplexBinTaps pred_history_;
  SpectrumFrame prev_reference_;
  HiddenState h_mask_, h_obs_, h_proc_;
};

// Gradients of a scalar loss over one recorded window, given dL/dS_hat for
// every frame. State entering the window is treated as constant. Gradients are
// accumulated into `grads`.
inline void backward_window(const NeuralKalmanNets& nets, const NeuralKalmanConfig& cfg,
                            std::span<const FrameTape> tapes,
                            std::span<const std::vector<Complex>> d_err, NeuralKalmanNets& grads) {
  if (tapes.size() != d_err.size()) throw ShapeError("tape and gradient window lengths differ");
  if (tapes.empty()) return;
  const std::size_t frames = tapes.size();
  const std::size_t bins = cfg.fdkf.num_bins;
  const std::size_t taps = cfg.fdkf.num_taps;
  const double a = cfg.fdkf.transition;
  const double a2 = a * a;
  const double alpha = cfg.fdkf.gain_scale;
  const double eps = cfg.fdkf.regularizer;
  const double beta = cfg.fdkf.smoothing;
  const bool use_mask = cfg.use_mask;
  const bool learned = cfg.use_learned_cov;
  const bool through_filter = !cfg.stop_grad_filter;
  const bool gain_uses_ref = use_mask && cfg.reference_mode == ReferenceMode::kEverywhere;

  ComplexBinTaps g_w_next(bins, taps);
  RealBinTaps g_p_next(bins, taps);
  std::vector<double> g_psd_carry(bins, 0.0);
  std::vector<std::vector<Complex>> g_ref(frames, std::vector<Complex>(bins));
  BpttCarry mask_carry = BpttCarry::zeros(nets.mask);
  BpttCarry obs_carry = BpttCarry::zeros(nets.obs_cov);
  BpttCarry proc_carry = BpttCarry::zeros(nets.proc_cov);

  ComplexBinTaps g_w(bins, taps), g_xp(bins, taps), g_xg(bins, taps);
  RealBinTaps g_p(bins, taps), g_proc(bins, taps);
  std::vector<double> g_obs(bins), g_q(taps);
  VectorXd d_out(bins);

  for (std::size_t t = frames; t-- > 0;) {
    const FrameTape& tp = tapes[t];
    std::vector<Complex> g_e = d_err[t];
    if (g_e.size() != bins) throw ShapeError("error gradient has wrong bin count");
    g_w.fill({});
    g_p.fill(0.0);
    g_xp.fill({});
    g_xg.fill({});
    g_proc.fill(0.0);
    std::fill(g_obs.begin(), g_obs.end(), 0.0);

    if (through_filter) {
      for (std::size_t b = 0; b < bins; ++b) {
        const Complex e = tp.err.bins[b];
        double den = 0.0;
        for (std::size_t l = 0; l < taps; ++l) den += std::norm(tp.gain_history(b, l)) * tp.covariance(b, l);
        den += tp.obs_noise[b] + eps;
        double g_den = 0.0;
        for (std::size_t l = 0; l < taps; ++l) {
          const Complex x = tp.gain_history(b, l);
          const Complex k = tp.gain(b, l);
          const double p = tp.covariance(b, l);
          const double q = p * std::norm(x);
          const double c = 1.0 - alpha * (k * x).real();
          const double next = a2 * c * p + tp.proc_noise(b, l);
          const double gpn = next < 0.0 ? 0.0 : g_p_next(b, l);
          g_proc(b, l) = gpn;
          const double gc = gpn * a2 * p;
          g_p(b, l) += gpn * a2 * c;

          const Complex gwn = g_w_next(b, l);
          g_w(b, l) += a * gwn;
          const Complex gk = a * gwn * std::conj(e);
          g_e[b] += a * gwn * std::conj(k);

          // c = 1 - alpha * q / den
          g_q[l] = -alpha * gc / den;
          g_den += alpha * q * gc / (den * den);
          // k = (p / den) * conj(x)
          const double m = p / den;
          const double gm = (x * gk).real();
          g_p(b, l) += gm / den;
          g_den -= gm * p / (den * den);
          g_xg(b, l) += m * std::conj(gk);
        }
        g_obs[b] = g_den;
        for (std::size_t l = 0; l < taps; ++l) {
          const Complex x = tp.gain_history(b, l);
          const double gq = g_q[l] + g_den;
          g_p(b, l) += gq * std::norm(x);
          g_xg(b, l) += 2.0 * gq * tp.covariance(b, l) * x;
        }
      }

      if (learned) {
        for (std::size_t b = 0; b < bins; ++b) d_out[b] = g_obs[b];
        const VectorXd d_obs = backward_step(nets.obs_cov, tp.obs_tape, d_out, obs_carry, grads.obs_cov);
        for (std::size_t b = 0; b < bins; ++b) {
          const Complex e = tp.err.bins[b];
          g_e[b] += 2.0 * e * cfg.features.grad(std::norm(e)) * d_obs[b];
        }
        const double per_tap = 1.0 / static_cast<double>(taps);
        for (std::size_t b = 0; b < bins; ++b) {
          double s = 0.0;
          for (std::size_t l = 0; l < taps; ++l) s += g_proc(b, l);
          d_out[b] = s * per_tap;
        }
        const VectorXd d_proc = backward_step(nets.proc_cov, tp.proc_tape, d_out, proc_carry, grads.proc_cov);
        for (std::size_t b = 0; b < bins; ++b) {
          const double scale = 2.0 * cfg.features.grad(tp.weight_power[b]) * d_proc[b];
          for (std::size_t l = 0; l < taps; ++l) g_w(b, l) += scale * tp.weights(b, l);
        }
      } else {
        const double drift = 1.0 - a2;
        for (std::size_t b = 0; b < bins; ++b) {
          const double g_psd = g_obs[b] + g_psd_carry[b];
          g_e[b] += 2.0 * (1.0 - beta) * g_psd * tp.err.bins[b];
          g_psd_carry[b] = beta * g_psd;
          for (std::size_t l = 0; l < taps; ++l) g_w(b, l) += 2.0 * drift * g_proc(b, l) * tp.weights(b, l);
        }
      }
    }

    // S_hat = Y - sum_l Xp W
    for (std::size_t b = 0; b < bins; ++b) {
      for (std::size_t l = 0; l < taps; ++l) {
        g_xp(b, l) -= g_e[b] * std::conj(tp.weights(b, l));
        g_w(b, l) -= g_e[b] * std::conj(tp.pred_history(b, l));
      }
    }

    if (use_mask) {
      for (std::size_t l = 0; l < taps && l <= t; ++l) {
        auto& dst = g_ref[t - l];
        for (std::size_t b = 0; b < bins; ++b) {
          dst[b] += g_xp(b, l);
          if (gain_uses_ref) dst[b] += g_xg(b, l);
        }
      }
      for (std::size_t b = 0; b < bins; ++b) d_out[b] = (std::conj(tp.mic.bins[b]) * g_ref[t][b]).real();
      (void)backward_step(nets.mask, tp.mask_tape, d_out, mask_carry, grads.mask);
    }

    std::swap(g_w_next, g_w);
    std::swap(g_p_next, g_p);
  }
}

// Mean over frames and bins of | |S_hat| - |S| |, with dL/dS_hat written to
// `grad` when non-null.
inline double l1_magnitude_loss(std::span<const SpectrumFrame> estimate,
                                std::span<const SpectrumFrame> target,
                                std::vector<std::vector<Complex>>* grad) {
  if (estimate.size() != target.size()) throw ShapeError("loss frame counts differ");
  if (estimate.empty()) return 0.0;
  const std::size_t bins = estimate.front().size();
  const double norm = 1.0 / static_cast<double>(estimate.size() * bins);
  double loss = 0.0;
  if (grad) grad->assign(estimate.size(), std::vector<Complex>(bins));
  for (std::size_t t = 0; t < estimate.size(); ++t) {
    if (estimate[t].size() != bins || target[t].size() != bins) throw ShapeError("loss bin counts differ");
    for (std::size_t b = 0; b < bins; ++b) {
      const Complex e = estimate[t].bins[b];
      const double mag = std::abs(e);
      const double diff = mag - std::abs(target[t].bins[b]);
      loss += std::abs(diff);
      if (grad && mag > 0.0) {
        const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        (*grad)[t][b] = sign * norm * e / mag;
      }
    }
  }
  return loss * norm;
}

// Streams the engine inside the closed loop: one hop per block,
// latency frame_len - hop.
class KalmanAhs final : public AhsProcessor {
 public:
  KalmanAhs(const NeuralKalmanConfig& cfg, const NeuralKalmanNets* nets)
      : cfg_(cfg), filter_(cfg, nets), mic_(cfg.stft), ref_(cfg.stft), synth_(cfg.stft) {}

  std::size_t block_size() const override { return cfg_.stft.hop; }
  std::size_t latency() const override { return streaming_lead(cfg_.stft); }

  void process(std::span<const double> mic, std::span<const double> loudspeaker,
               std::span<double> out) override {
    const SpectrumFrame& y = mic_.push(mic);
    const SpectrumFrame& x = ref_.push(loudspeaker);
    FrameTape* tape = nullptr;
    if (recording_) tape = &tapes_.emplace_back();
    SpectrumFrame err = filter_.step(y, x, tape);
    bool finite = true;
    for (const auto& v : err.bins) finite = finite && std::isfinite(v.real()) && std::isfinite(v.imag());
    if (!finite || !all_finite(filter_.state())) {
      ++numeric_resets_;
      std::fill(err.bins.begin(), err.bins.end(), Complex{});
      filter_.reset_filter();
    }
    synth_.push(err, out);
  }

  void reset() override {
    filter_.reset();
    mic_.reset();
    ref_.reset();
    synth_.reset();
    tapes_.clear();
    numeric_resets_ = 0;
  }

  // Training hooks: while recording, every processed frame appends a tape.
  void set_recording(bool on) { recording_ = on; }
  std::vector<FrameTape>& tapes() { return tapes_; }
  void clear_tapes() { tapes_.clear(); }

  std::size_t numeric_resets() const { return numeric_resets_; }
  const NeuralKalmanFilter& filter() const { return filter_; }

 private:
  NeuralKalmanConfig cfg_;
  NeuralKalmanFilter filter_;
  StreamingAnalyzer mic_;
  StreamingAnalyzer ref_;
  StreamingSynthesizer synth_;
  bool recording_ = false;
  std::vector<FrameTape> tapes_;
  std::size_t numeric_resets_ = 0;
};

}  // namespace howlkit

#endif  // HOWLKIT_NEURAL_KALMAN_HPP_
