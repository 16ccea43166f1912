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

// Scene material: a synthetic speech-like source and a sampler drawing
// rooms, utterances, gains and delays from disjoint train/test pools.

#ifndef HOWLKIT_SCENES_HPP_
#define HOWLKIT_SCENES_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "howlkit/errors.hpp"
#include "howlkit/loop.hpp"
#include "howlkit/room.hpp"
#include "howlkit/signal.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

namespace detail {

// Two-pole resonator, unit gain at its centre frequency.
class Resonator {
 public:
  void tune(double freq, double bandwidth, int fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    a1_ = -2.0 * r * std::cos(2.0 * std::numbers::pi * freq / fs);
    a2_ = r * r;
    g_ = 1.0 - r;
  }
  double operator()(double x) {
    const double y = g_ * x - a1_ * y1_ - a2_ * y2_;
    y2_ = y1_;
    y1_ = y;
    return y;
  }

 private:
  double a1_ = 0.0, a2_ = 0.0, g_ = 1.0, y1_ = 0.0, y2_ = 0.0;
};

}  // namespace detail

// Harmonic source with a wandering pitch contour in [80, 300] Hz, vowel-like
// formants, syllabic amplitude modulation, unvoiced bursts and pauses; peak
// normalized to 0.5. `f0_track` receives the per-sample pitch (0 when
// unvoiced).
inline TimeSignal synth_speech(std::uint64_t seed, double duration, int fs = kDefaultSampleRate,
                               std::vector<double>* f0_track = nullptr) {
  if (!(duration > 0.0) || fs <= 0) throw ConfigError("synthetic speech needs positive duration and rate");
  static constexpr std::array<std::array<double, 3>, 6> kVowels{{
      {730, 1090, 2440}, {270, 2290, 3010}, {300, 870, 2240},
      {530, 1840, 2480}, {570, 840, 2410}, {660, 1720, 2410}}};
  const auto n = static_cast<std::size_t>(std::llround(duration * fs));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TimeSignal out{std::vector<double>(n, 0.0), fs};
  if (f0_track) f0_track->assign(n, 0.0);
  const double base = 90.0 + 150.0 * u(rng);
  const double vibrato_rate = 3.0 + 3.0 * u(rng);
  const double vibrato_depth = 0.05 + 0.1 * u(rng);
  std::array<detail::Resonator, 3> formants;
  double phase = 0.0;
  double drift = 0.0;
  std::size_t t = static_cast<std::size_t>((0.02 + 0.1 * u(rng)) * fs);
  while (t < n) {
    const bool voiced = u(rng) < 0.8;
    const auto len = static_cast<std::size_t>((voiced ? 0.08 + 0.22 * u(rng) : 0.04 + 0.08 * u(rng)) * fs);
    const auto& vowel = kVowels[static_cast<std::size_t>(u(rng) * kVowels.size()) % kVowels.size()];
    for (std::size_t k = 0; k < 3; ++k) formants[k].tune(vowel[k] * (0.9 + 0.2 * u(rng)), 80.0 + 40.0 * k, fs);
    const double level = 0.4 + 0.6 * u(rng);
    for (std::size_t i = 0; i < len && t + i < n; ++i) {
      const std::size_t at = t + i;
      const double env = level * std::sin(std::numbers::pi * (i + 0.5) / len);
      double excitation;
      if (voiced) {
        drift = std::clamp(drift + 0.002 * gauss(rng), -0.3, 0.3);
        const double f0 = std::clamp(
            base * (1.0 + drift + vibrato_depth * std::sin(2.0 * std::numbers::pi * vibrato_rate * at / fs)), 80.0,
            300.0);
        if (f0_track) (*f0_track)[at] = f0;
        phase += 2.0 * std::numbers::pi * f0 / fs;
        if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
        excitation = 0.0;
        const int harmonics = static_cast<int>(0.45 * fs / f0);
        for (int h = 1; h <= harmonics; ++h) excitation += std::sin(h * phase) / h;
      } else {
        excitation = 0.5 * gauss(rng);
      }
      double v = 0.0;
      for (auto& f : formants) v += f(excitation);
      out.samples[at] = env * v;
    }
    t += len + static_cast<std::size_t>((u(rng) < 0.3 ? 0.1 + 0.25 * u(rng) : 0.01 + 0.04 * u(rng)) * fs);
  }
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : out.samples) v *= 0.5 / peak;
  }
  return out;
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double sample(std::mt19937_64& rng) const {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  void validate(const char* what) const {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw ConfigError(std::string(what) + " range must satisfy lo <= hi");
    }
  }
  friend bool operator==(const Range&, const Range&) = default;
};

struct SamplerConfig {
  Range gain{1.0, 3.0};
  Range delay{0.15, 0.25};
  Range rt60{0.0, 0.6};
  Range room_x{3.0, 8.0};
  Range room_y{3.0, 6.0};
  Range room_z{2.5, 3.5};
  std::size_t rir_len = 4096;
  bool highpass = true;
  std::size_t train_scenes = 32;
  std::size_t test_scenes = 20;
  std::size_t validation_scenes = 4;
  double duration = 3.0;
  // Directory of 16 kHz mono WAVs; empty selects the synthetic source.
  std::string corpus_dir;
  std::uint64_t seed = 1234;

  void validate() const {
    gain.validate("gain");
    delay.validate("delay");
    rt60.validate("rt60");
    room_x.validate("room_x");
    room_y.validate("room_y");
    room_z.validate("room_z");
    if (gain.lo < 0.0) throw ConfigError("gain range must be >= 0");
    if (delay.lo <= 0.0) throw ConfigError("delay range must be positive");
    if (rt60.lo < 0.0) throw ConfigError("rt60 range must be >= 0");
    if (std::min({room_x.lo, room_y.lo, room_z.lo}) < 1.5) throw ConfigError("rooms must be at least 1.5 m wide");
    if (rir_len < 1) throw ConfigError("rir_len must be positive");
    if (!(duration > 0.0)) throw ConfigError("scene duration must be positive");
  }

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

struct RoomDraw {
  RoomSpec feedback;  // loudspeaker -> microphone
  RoomSpec near;      // talker -> microphone
};

// Random room with loudspeaker, talker and microphone at least 0.5 m from the
// walls and 0.5 m apart. RT60 below the room's minimum is raised to it.
inline RoomDraw sample_room(const SamplerConfig& cfg, std::mt19937_64& rng, int fs) {
  RoomSpec spec;
  spec.sample_rate = fs;
  spec.dimensions = {cfg.room_x.sample(rng), cfg.room_y.sample(rng), cfg.room_z.sample(rng)};
  spec.max_rir_len = cfg.rir_len;
  spec.highpass = cfg.highpass;
  const double rt = cfg.rt60.sample(rng);
  spec.rt60 = rt > 0.0 ? std::max(rt, min_rt60(spec.dimensions) * (1.0 + 1e-9)) : 0.0;
  const auto point = [&] {
    Vec3 p;
    for (int i = 0; i < 3; ++i) p[i] = Range{0.5, spec.dimensions[i] - 0.5}.sample(rng);
    return p;
  };
  const auto dist = [](const Vec3& a, const Vec3& b) {
    return std::sqrt(std::pow(a[0] - b[0], 2) + std::pow(a[1] - b[1], 2) + std::pow(a[2] - b[2], 2));
  };
  Vec3 mic = point(), speaker = point(), talker = point();
  while (dist(mic, speaker) < 0.5) speaker = point();
  while (dist(mic, talker) < 0.5) talker = point();
  RoomDraw draw{spec, spec};
  draw.feedback.mic_pos = draw.near.mic_pos = mic;
  draw.feedback.source_pos = speaker;
  draw.near.source_pos = talker;
  return draw;
}

inline void normalize_energy(Rir& h) {
  double e = 0.0;
  for (double v : h.taps) e += v * v;
  if (e > 0.0) {
    const double s = 1.0 / std::sqrt(e);
    for (double& v : h.taps) v *= s;
  }
}

inline void normalize_peak(Rir& h) {
  double p = 0.0;
  for (double v : h.taps) p = std::max(p, std::abs(v));
  if (p > 0.0) {
    for (double& v : h.taps) v /= p;
  }
}

struct ScenePlan {
  std::size_t id = 0;
  bool test = false;
  RoomDraw room;
  std::uint64_t utterance_seed = 0;
  std::size_t corpus_index = 0;
  double gain = 0.0;
  double delay = 0.0;
};

// Fixed train, test and validation scene lists, each drawn from its own
// random stream. With a corpus, train scenes use the first 80% of the sorted
// files and test/validation scenes the rest.
class SceneSampler {
 public:
  explicit SceneSampler(const SamplerConfig& cfg, int fs = kDefaultSampleRate) : cfg_(cfg), fs_(fs) {
    cfg_.validate();
    if (!cfg_.corpus_dir.empty()) load_corpus_listing();
    train_ = make_plans(cfg_.train_scenes, Pool::kTrain);
    test_ = make_plans(cfg_.test_scenes, Pool::kTest);
    validation_ = make_plans(cfg_.validation_scenes, Pool::kValidation);
  }

  const SamplerConfig& config() const { return cfg_; }
  std::size_t train_size() const { return train_.size(); }
  std::size_t test_size() const { return test_.size(); }
  std::size_t validation_size() const { return validation_.size(); }
  const ScenePlan& train_plan(std::size_t i) const { return train_.at(i); }
  const ScenePlan& test_plan(std::size_t i) const { return test_.at(i); }

  LoopScene train_scene(std::size_t i) const { return build(train_.at(i), std::nullopt); }
  // Held-out scene; `gain` overrides the sampled gain when given.
  LoopScene test_scene(std::size_t i, std::optional<double> gain = std::nullopt) const {
    return build(test_.at(i), gain);
  }
  LoopScene validation_scene(std::size_t i, std::optional<double> gain = std::nullopt) const {
    return build(validation_.at(i), gain);
  }

 private:
  void load_corpus_listing() {
    namespace fs = std::filesystem;
    if (!fs::is_directory(cfg_.corpus_dir)) throw IoError("corpus directory '" + cfg_.corpus_dir + "' not found");
    for (const auto& e : fs::directory_iterator(cfg_.corpus_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files_.push_back(e.path());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.size() < 2) throw IoError("corpus directory needs at least two WAV files");
    split_ = std::max<std::size_t>(1, files_.size() * 4 / 5);
  }

  enum class Pool { kTrain = 0, kTest = 1, kValidation = 2 };

  std::vector<ScenePlan> make_plans(std::size_t count, Pool pool) const {
    const bool test = pool != Pool::kTrain;
    std::mt19937_64 rng(cfg_.seed * 3 + static_cast<std::uint64_t>(pool));
    std::vector<ScenePlan> plans;
    for (std::size_t i = 0; i < count; ++i) {
      ScenePlan p;
      p.id = i;
      p.test = test;
      p.room = sample_room(cfg_, rng, fs_);
      p.room.feedback.seed = p.room.near.seed = rng();
      p.utterance_seed = rng();
      if (!files_.empty()) {
        const std::size_t lo = test ? split_ : 0;
        const std::size_t hi = test ? files_.size() : split_;
        p.corpus_index = lo + static_cast<std::size_t>(rng() % (hi - lo));
      }
      p.gain = cfg_.gain.sample(rng);
      p.delay = cfg_.delay.sample(rng);
      plans.push_back(p);
    }
    return plans;
  }

  TimeSignal utterance(const ScenePlan& p) const {
    const auto n = static_cast<std::size_t>(std::llround(cfg_.duration * fs_));
    if (files_.empty()) return synth_speech(p.utterance_seed, cfg_.duration, fs_);
    TimeSignal s = read_wav(files_[p.corpus_index], fs_);
    if (s.size() < n) s.samples.resize(n, 0.0);
    s.samples.resize(n);
    return s;
  }

  LoopScene build(const ScenePlan& p, std::optional<double> gain) const {
    LoopScene scene;
    scene.near_end = utterance(p);
    scene.feedback_rir = generate_rir(p.room.feedback);
    normalize_energy(scene.feedback_rir);
    Rir near = generate_rir(p.room.near);
    normalize_peak(near);
    scene.near_rir = std::move(near);
    scene.gain = gain.value_or(p.gain);
    scene.delay = p.delay;
    scene.seed = p.utterance_seed;
    return scene;
  }

  SamplerConfig cfg_;
  int fs_;
  std::vector<std::filesystem::path> files_;
  std::size_t split_ = 0;
  std::vector<ScenePlan> train_;
  std::vector<ScenePlan> test_;
  std::vector<ScenePlan> validation_;
};

}  // namespace howlkit

#endif  // HOWLKIT_SCENES_HPP_
