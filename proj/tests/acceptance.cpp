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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. A criterion also fails when it exceeds
// its time budget.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "howlkit/config.hpp"
#include "howlkit/fdkf.hpp"
#include "howlkit/metrics.hpp"
#include "howlkit/neural.hpp"
#include "howlkit/neural_kalman.hpp"
#include "howlkit/room.hpp"
#include "howlkit/scenes.hpp"
#include "howlkit/signal.hpp"
#include "howlkit/trainer.hpp"

#ifndef HOWLKIT_CLI_PATH
#error "HOWLKIT_CLI_PATH must name the howlkit executable"
#endif

namespace howlkit {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void criterion(int id, const char* name, double budget_s, const std::function<Outcome()>& body,
               double extra_s = 0.0) {
  const auto t0 = Clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double took = seconds_since(t0) + extra_s;
  const bool in_time = took <= budget_s;
  const bool pass = out.pass && in_time;
  if (!pass) ++failures;
  std::printf("%s [%2d] %s: %s; %.2f s of %.0f s budget%s\n", pass ? "PASS" : "FAIL", id, name,
              out.detail.c_str(), took, budget_s, in_time ? "" : " (over budget)");
  std::fflush(stdout);
}

// Shared fixtures.

RunConfig defaults() { return parse_run_config(nlohmann::json::object()); }

SceneSampler held_out(const RunConfig& c) {
  SamplerConfig s = c.sampler_config();
  s.duration = c.eval.duration;
  s.test_scenes = c.eval.scenes;
  return SceneSampler(s);
}

SpectrumFrame random_frame(std::size_t bins, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  SpectrumFrame f{std::vector<Complex>(bins), 0};
  for (auto& b : f.bins) b = {g(rng), g(rng)};
  return f;
}

// 1

Outcome stft_round_trip() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 0.3);
  const StftConfig cfg;
  TimeSignal x{std::vector<double>(kDefaultSampleRate)};
  for (auto& v : x.samples) v = g(rng);
  const TimeSignal y = istft(stft(x, cfg), cfg);
  double num = 0.0, den = 0.0;
  for (std::size_t n = cfg.frame_len; n + cfg.frame_len < x.size(); ++n) {
    num += (x.samples[n] - y.samples[n]) * (x.samples[n] - y.samples[n]);
    den += x.samples[n] * x.samples[n];
  }
  const double rel = std::sqrt(num / den);
  return {rel < 1e-10, fmt("interior relative error %.2e (need < 1e-10)", rel)};
}

// 2

Outcome streaming_convolution() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::size_t exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(200 + rng() % 4000), h(1 + rng() % 1024);
    for (auto& v : x) v = u(rng);
    for (auto& v : h) v = u(rng);
    std::vector<double> want(x.size(), 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
      double acc = 0.0;
      for (std::size_t m = 0; m < h.size() && m <= n; ++m) acc += h[m] * x[n - m];
      want[n] = acc;
    }
    StreamingConvolver conv(Rir{h, kDefaultSampleRate});
    std::vector<double> got(x.size());
    for (std::size_t s = 0; s < x.size();) {
      const std::size_t n = std::min<std::size_t>(1 + rng() % 300, x.size() - s);
      conv.process(std::span<const double>(x.data() + s, n), std::span<double>(got.data() + s, n));
      s += n;
    }
    exact += got == want;
  }
  return {exact == 100, fmt("%zu/100 random triples bit-exact", exact)};
}

// 3

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

// Dense-matrix Kalman filter for one bin; the covariance is projected onto
// its diagonal after each step.
struct DenseBinOracle {
  CVector w, hist;
  CMatrix p;
  double smoothed = 0.0;

  DenseBinOracle(std::size_t taps, double p_init)
      : w(CVector::Zero(taps)), hist(CVector::Zero(taps)), p(CMatrix::Identity(taps, taps) * p_init) {}

  void step(const FdkfConfig& cfg, Complex y, Complex x) {
    const auto taps = hist.size();
    for (Eigen::Index l = taps - 1; l > 0; --l) hist[l] = hist[l - 1];
    hist[0] = x;
    const Eigen::RowVectorXcd obs = hist.transpose();
    const Complex e = y - (obs * w)(0, 0);
    smoothed = cfg.smoothing * smoothed + (1.0 - cfg.smoothing) * std::norm(e);
    CMatrix q = CMatrix::Zero(taps, taps);
    for (Eigen::Index l = 0; l < taps; ++l) q(l, l) = (1.0 - cfg.transition * cfg.transition) * std::norm(w[l]);
    CMatrix s = obs * p * obs.adjoint();
    s(0, 0) += smoothed + cfg.regularizer;
    const CVector k = p * obs.adjoint() * s.inverse();
    w = cfg.transition * (w + k * e);
    p = cfg.transition * cfg.transition * (CMatrix::Identity(taps, taps) - cfg.gain_scale * k * obs) * p + q;
    p = CMatrix(p.diagonal().real().cast<Complex>().asDiagonal());
  }
};

Outcome fdkf_oracle() {
  double worst = 0.0;
  for (std::size_t taps : {1u, 2u}) {
    std::mt19937_64 rng(30 + taps);
    FdkfConfig cfg;
    cfg.num_bins = 4;
    cfg.num_taps = taps;
    KalmanState st = make_kalman_state(cfg);
    std::vector<DenseBinOracle> oracle(4, DenseBinOracle(taps, cfg.p_init));
    for (int t = 0; t < 50; ++t) {
      const SpectrumFrame x = random_frame(4, rng), y = random_frame(4, rng);
      push_reference(st, x);
      const SpectrumFrame e = predict(st, y);
      const CovariancePair cov = classical_covariances(e, st, cfg);
      update(st, kalman_gain(st, cov, cfg), e, cov, cfg);
      for (std::size_t b = 0; b < 4; ++b) {
        oracle[b].step(cfg, y.bins[b], x.bins[b]);
        for (std::size_t l = 0; l < taps; ++l) {
          const Complex want = oracle[b].w[static_cast<Eigen::Index>(l)];
          worst = std::max(worst, std::abs(st.weights(b, l) - want) / std::max(std::abs(want), 1e-12));
        }
      }
    }
  }
  return {worst < 1e-9, fmt("worst relative W error %.2e over L=1,2 (need < 1e-9)", worst)};
}

// 4

Outcome covariance_positivity() {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-4.0, 3.0);
  std::size_t steps = 0, negatives = 0, nonfinite = 0, clamps = 0;
  const auto check = [&](double v) {
    if (!std::isfinite(v)) ++nonfinite;
    else if (v < 0.0) ++negatives;
  };

  // Classical recursion on random frames spanning seven decades.
  FdkfConfig cfg;
  cfg.num_bins = 16;
  cfg.num_taps = 8;
  KalmanState st = make_kalman_state(cfg);
  for (int t = 0; t < 50000; ++t, ++steps) {
    push_reference(st, random_frame(16, rng, std::pow(10.0, u(rng))));
    const SpectrumFrame e = predict(st, random_frame(16, rng, std::pow(10.0, u(rng))));
    const CovariancePair cov = classical_covariances(e, st, cfg);
    update(st, kalman_gain(st, cov, cfg), e, cov, cfg);
    for (double v : cov.obs_noise) check(v);
    for (double v : cov.proc_noise.data()) check(v);
    for (double v : st.covariance.data()) check(v);
    for (const auto& w : st.weights.data()) check(std::abs(w));
  }
  clamps += st.clamp_events;

  // Learned covariances from freshly initialized networks.
  NeuralKalmanConfig model;
  model.fdkf.num_bins = model.stft.num_bins();
  model.fdkf.num_taps = 4;
  NetSizes sizes;
  sizes.mask_hidden = 8;
  sizes.cov_hidden = 8;
  const NeuralKalmanNets nets = make_nets(model.fdkf.num_bins, sizes, 4);
  NeuralKalmanFilter engine(model, &nets);
  FrameTape tape;
  for (int t = 0; t < 50000; ++t, ++steps) {
    const double scale = std::pow(10.0, u(rng));
    engine.step(random_frame(65, rng, scale), random_frame(65, rng, scale), &tape);
    for (double v : tape.obs_noise) check(v);
    for (double v : tape.proc_noise.data()) check(v);
    for (double v : engine.state().covariance.data()) check(v);
  }
  clamps += engine.state().clamp_events;
  return {negatives == 0 && nonfinite == 0 && steps >= 100000,
          fmt("%zu update steps, %zu negative, %zu non-finite values (%zu covariance clamps)", steps, negatives,
              nonfinite, clamps)};
}

// 5

Outcome gradient_check() {
  const std::size_t bins = 9;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto sequence = [&](std::size_t dim) {
    std::vector<VectorXd> seq(8, VectorXd(static_cast<Eigen::Index>(dim)));
    for (auto& v : seq)
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    return seq;
  };
  const std::vector<std::pair<const char*, NetShape>> shapes{
      {"mask 2x16", {2 * bins, 16, 2, bins, OutputActivation::kSigmoid}},
      {"mask 1x8", {2 * bins, 8, 1, bins, OutputActivation::kSigmoid}},
      {"cov 16", {bins, 16, 1, bins, OutputActivation::kSoftplus}},
      {"cov 4", {bins, 4, 1, bins, OutputActivation::kSoftplus}},
  };
  double worst = 0.0;
  bool passed = true;
  for (const auto& [name, shape] : shapes) {
    const auto p = init_params(shape, {11, 1.0, shape.activation == OutputActivation::kSoftplus ? -1.0 : 0.0});
    HiddenState h0 = HiddenState::zeros(p);
    const auto report = grad_check(p, h0, sequence(shape.input), sequence(shape.output), 1e-4, 1e-4);
    worst = std::max(worst, report.worst);
    passed = passed && report.passed;
  }
  return {passed && worst < 1e-4, fmt("worst relative error %.2e over 4 networks, T = 8 (need < 1e-4)", worst)};
}

// 6, 7

std::vector<SceneResult> run_pool(const SceneSampler& sampler, const RunConfig& c, double gain,
                                  const AhsFactory& make) {
  std::vector<SceneResult> out(sampler.test_size());
  parallel_for(out.size(), [&](std::size_t i) {
    auto ahs = make();
    out[i] = run_scene(sampler.test_scene(i, gain), *ahs, c.detector, c.eval.duration, c.loop);
  });
  return out;
}

double mean_sdr(const std::vector<SceneResult>& runs) {
  double sum = 0.0;
  for (const auto& r : runs) sum += scene_sdr(r);
  return sum / static_cast<double>(runs.size());
}

Outcome howling_emerges() {
  const RunConfig c = defaults();
  const SceneSampler sampler = held_out(c);
  const auto runs = run_pool(sampler, c, 2.0, [] { return std::make_unique<IdentityAhs>(); });
  std::size_t fired = 0;
  for (const auto& r : runs) fired += r.howl_event && *r.howl_event < 2 * static_cast<std::size_t>(kDefaultSampleRate);
  const double m = mean_sdr(runs);
  return {fired >= 18 && m < -15.0,
          fmt("howl within 2 s in %zu/%zu scenes (need >= 18); mean SDR %.2f dB (need < -15)", fired, runs.size(), m)};
}

Outcome fdkf_suppresses() {
  const RunConfig c = defaults();
  const SceneSampler sampler = held_out(c);
  const auto plain = run_pool(sampler, c, 1.5, [] { return std::make_unique<IdentityAhs>(); });
  const auto kal_cfg = classical_config(c.stft, c.fdkf);
  const auto kal = run_pool(sampler, c, 1.5, [&] { return std::make_unique<KalmanAhs>(kal_cfg, nullptr); });
  const double a = mean_sdr(plain), b = mean_sdr(kal);
  return {b - a >= 15.0, fmt("mean SDR FDKF %.2f dB, identity %.2f dB, gap %.2f dB (need >= 15)", b, a, b - a)};
}

// 8, 9

struct Trained {
  bool done = false;
  NeuralKalmanNets best;
  double seconds = 0.0;
};

Trained trained;

Outcome abort_guard_and_training() {
  const RunConfig c = defaults();
  const NeuralKalmanConfig model = c.model();
  TrainConfig tc = c.train_config();
  const SceneSampler sampler(c.sampler_config());

  // Single-scene batches at G = 3: any window that aborts must leave the
  // weights exactly as the previous window left them.
  std::size_t aborts = 0, violations = 0;
  const auto guard = [&](NeuralKalmanNets nets, std::size_t scenes) {
    TrainConfig t = tc;
    t.batch_size = 1;
    Trainer trainer(model, t, nets);
    NeuralKalmanNets before = nets;
    TrainHooks hooks;
    hooks.on_window = [&](const WindowReport& r, const NeuralKalmanNets& now) {
      if (r.aborted > 0) {
        ++aborts;
        if (r.stepped || !(now == before)) ++violations;
      }
      before = now;
    };
    for (std::size_t i = 0; i < scenes; ++i) {
      LoopScene scene = sampler.train_scene(i);
      scene.gain = 3.0;
      trainer.train_scene(scene, 0, i, hooks);
    }
  };
  const NeuralKalmanNets fresh = make_nets(model.fdkf.num_bins, c.nets, c.seed);
  guard(fresh, 8);
  const std::size_t natural = aborts;
  // A mask that suppresses the reference leaves the loop unprotected.
  NeuralKalmanNets deaf = fresh;
  deaf.mask.b_out.setConstant(-30.0);
  guard(deaf, 4);

  const auto t0 = Clock::now();
  NeuralKalmanNets nets = fresh;
  const TrainResult res = train(nets, sampler, model, tc);
  trained = {true, res.best, seconds_since(t0)};
  std::size_t nan_events = res.nan_aborts;
  for (const auto& ev : res.events) nan_events += ev.numeric_resets;
  const bool finite = res.best.all_finite() && nets.all_finite();
  return {aborts > 0 && violations == 0 && nan_events == 0 && finite && res.events.size() == tc.epochs * 32,
          fmt("%zu aborted windows (%zu with fresh nets), %zu changed weights; training %zu epochs x %zu scenes: "
              "%zu NaN events, %zu howl aborts, best epoch %zu",
              aborts, natural, violations, tc.epochs, sampler.train_size(), nan_events, res.howl_aborts,
              res.best_epoch)};
}

Outcome neural_beats_classical() {
  if (!trained.done) return {false, "training did not run"};
  const RunConfig c = defaults();
  const SceneSampler sampler = held_out(c);
  const auto kal_cfg = classical_config(c.stft, c.fdkf);
  const auto model = c.model();
  const std::vector<EvalVariant> variants{
      {"kalman", [&] { return std::make_unique<KalmanAhs>(kal_cfg, nullptr); }},
      {"neuralkalman", [&] { return std::make_unique<KalmanAhs>(model, &trained.best); }}};
  EvalOptions opt;
  opt.duration = c.eval.duration;
  opt.detector = c.detector;
  opt.loop = c.loop;
  opt.stft = c.stft;
  const EvalReport rep = evaluate([&](std::size_t i, double g) { return sampler.test_scene(i, g); },
                                  sampler.test_size(), variants, {2.0}, opt);
  const auto k = *rep.aggregate("kalman", 2.0);
  const auto n = *rep.aggregate("neuralkalman", 2.0);
  return {n.sdr.mean > k.sdr.mean && n.sdr.stddev < k.sdr.stddev,
          fmt("G = 2, %zu scenes: NeuralKalman %.2f +- %.2f dB vs FDKF %.2f +- %.2f dB", n.scenes, n.sdr.mean,
              n.sdr.stddev, k.sdr.mean, k.sdr.stddev)};
}

// 10

int cli(const std::string& args) {
  const std::string cmd = std::string(HOWLKIT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome ablation_wiring() {
  const fs::path dir = fs::temp_directory_path() / "howlkit_acceptance_ablation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = (dir / "config.json").string();
  detail::dump(cfg, R"({
  "neural": {"mask_hidden": 8, "mask_layers": 1, "cov_hidden": 8},
  "trainer": {"epochs": 1, "batch_size": 2},
  "sampler": {"train_scenes": 2, "validation_scenes": 1, "duration": 1.0}
})");
  const std::string ckpt = (dir / "tiny.ckpt").string();
  if (cli("train --synthetic --config " + cfg + " --out " + ckpt) != 0) return {false, "checkpoint training failed"};
  const auto run = [&](const std::string& name, const std::string& flags) {
    const fs::path out = dir / name;
    const int rc = cli("suppress --config " + cfg + " --scene 0 --gain 2 --duration 2 --out " + out.string() + " " +
                       flags);
    return rc == 0 ? detail::slurp(out / "scene_s_hat.wav") : std::string();
  };
  const std::string kalman = run("kalman", "--variant kalman");
  const std::string both = run("both", "--variant neuralkalman --no-mask --no-cov --checkpoint " + ckpt);
  const std::string full = run("full", "--variant neuralkalman --checkpoint " + ckpt);
  const std::string no_mask = run("no_mask", "--variant neuralkalman --no-mask --checkpoint " + ckpt);
  const std::string no_cov = run("no_cov", "--variant neuralkalman --no-cov --checkpoint " + ckpt);
  fs::remove_all(dir);
  for (const auto* s : {&kalman, &both, &full, &no_mask, &no_cov}) {
    if (s->empty()) return {false, "a suppress run failed"};
  }
  const bool same = both == kalman, d1 = no_mask != full, d2 = no_cov != full;
  return {same && d1 && d2, fmt("--no-mask --no-cov %s kalman; --no-mask %s full; --no-cov %s full",
                                same ? "==" : "!=", d1 ? "!=" : "==", d2 ? "!=" : "==")};
}

}  // namespace
}  // namespace howlkit

int main() {
  using namespace howlkit;
  criterion(1, "STFT round trip", 1, stft_round_trip);
  criterion(2, "streaming convolution", 5, streaming_convolution);
  criterion(3, "FDKF dense oracle", 5, fdkf_oracle);
  criterion(4, "covariance positivity", 30, covariance_positivity);
  criterion(5, "gradient check", 60, gradient_check);
  criterion(6, "howling emerges", 120, howling_emerges);
  criterion(7, "classical FDKF suppresses", 300, fdkf_suppresses);
  criterion(8, "training abort guard", 1800, abort_guard_and_training);
  criterion(9, "NeuralKalman beats FDKF at G = 2", 2700, neural_beats_classical, trained.seconds);
  criterion(10, "ablation wiring", 120, ablation_wiring);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
