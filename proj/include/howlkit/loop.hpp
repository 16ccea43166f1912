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

// Sample-accurate closed-loop amplification:
//
//   y(t) = s(t) + d(t),   d = x * h,   x(t) = clip(G * s_hat(t - delay)),
//   s_hat = AHS(y).
//
// The AHS runs block-synchronously inside the sample loop and may declare an
// algorithmic latency; its output for block [t, t + B) describes samples
// [t - latency, t - latency + B). The loop delay covers the whole
// microphone-to-loudspeaker path, so it must be at least B + latency.

#ifndef HOWLKIT_LOOP_HPP_
#define HOWLKIT_LOOP_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "howlkit/errors.hpp"
#include "howlkit/room.hpp"
#include "howlkit/signal.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

struct HowlDetectorConfig {
  double amp_threshold = 1.0;
  std::size_t run_length = 100;

  void validate() const {
    if (!(amp_threshold > 0.0)) throw ConfigError("howl threshold must be positive");
    if (run_length < 1) throw ConfigError("howl run length must be >= 1");
  }
};

struct HowlRunResult {
  bool fired = false;
  std::size_t carry = 0;
  // Offset within the chunk of the sample that pushed the run past
  // run_length; meaningful only when fired.
  std::size_t offset = 0;
};

// Counts consecutive samples with |v| > threshold, continuing the run carried
// in from the previous chunk. Fires once the run exceeds run_length.
inline HowlRunResult detect_howl_run(std::span<const double> samples,
                                     const HowlDetectorConfig& det, std::size_t carry) {
  HowlRunResult res{false, carry, 0};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    res.carry = std::abs(samples[i]) > det.amp_threshold ? res.carry + 1 : 0;
    if (!res.fired && res.carry > det.run_length) {
      res.fired = true;
      res.offset = i;
    }
  }
  return res;
}

// Block processor placed between microphone and loudspeaker.
class AhsProcessor {
 public:
  virtual ~AhsProcessor() = default;
  virtual std::size_t block_size() const = 0;
  virtual std::size_t latency() const = 0;
  // `mic` and `loudspeaker` hold the same block of time indices; `out`
  // receives the suppressed signal delayed by latency().
  virtual void process(std::span<const double> mic, std::span<const double> loudspeaker,
                       std::span<double> out) = 0;
  virtual void reset() = 0;
};

// Passes the microphone signal through unchanged (the "no AHS" system).
class IdentityAhs final : public AhsProcessor {
 public:
  explicit IdentityAhs(std::size_t block = 64) : block_(block) {
    if (block_ == 0) throw ConfigError("block size must be positive");
  }
  std::size_t block_size() const override { return block_; }
  std::size_t latency() const override { return 0; }
  void process(std::span<const double> mic, std::span<const double>,
               std::span<double> out) override {
    std::copy(mic.begin(), mic.end(), out.begin());
  }
  void reset() override {}

 private:
  std::size_t block_;
};

struct LoopOptions {
  // Loudspeaker clip level in full-scale units. Feedback arriving at the
  // microphone may exceed full scale by this factor, which lets a runaway
  // loop cross the howl detector's threshold.
  double saturation = 10.0;
  bool saturate = true;
  // Convolve the dry source with the near-end RIR (when present) to form s.
  bool reverberant_source = true;
};

struct LoopScene {
  TimeSignal near_end;
  Rir feedback_rir;
  std::optional<Rir> near_rir;
  double gain = 2.0;
  double delay = 0.2;  // seconds
  std::uint64_t seed = 0;

  std::size_t delay_samples() const {
    return static_cast<std::size_t>(std::llround(delay * near_end.sample_rate));
  }

  void validate() const {
    near_end.validate();
    if (!(gain >= 0.0) || !std::isfinite(gain)) throw ConfigError("gain must be >= 0");
    if (!(delay > 0.0) || delay_samples() < 1) throw ConfigError("delay must round to >= 1 sample");
    if (feedback_rir.sample_rate != near_end.sample_rate) {
      throw ConfigError("feedback RIR rate does not match the source rate");
    }
    if (near_rir && near_rir->sample_rate != near_end.sample_rate) {
      throw ConfigError("near-end RIR rate does not match the source rate");
    }
  }
};

struct SceneResult {
  TimeSignal y;      // microphone
  TimeSignal s_hat;  // AHS output, index-aligned with s
  TimeSignal x;      // loudspeaker
  TimeSignal d;      // playback at the microphone
  TimeSignal s;      // near-end target
  std::optional<std::size_t> howl_event;
  std::size_t latency = 0;
  std::size_t numeric_faults = 0;
};

// Near-end signal as it reaches the microphone: the dry source, optionally
// reverberated by the near RIR, cut to `length` samples.
inline TimeSignal near_end_at_mic(const LoopScene& scene, const LoopOptions& opt,
                                  std::size_t length) {
  TimeSignal s{std::vector<double>(length, 0.0), scene.near_end.sample_rate};
  const std::size_t n = std::min(length, scene.near_end.size());
  if (opt.reverberant_source && scene.near_rir) {
    StreamingConvolver conv(*scene.near_rir);
    std::vector<double> dry(length, 0.0);
    std::copy_n(scene.near_end.samples.begin(), n, dry.begin());
    conv.process(dry, s.samples);
  } else {
    std::copy_n(scene.near_end.samples.begin(), n, s.samples.begin());
  }
  return s;
}

// Step-wise driver for one scene; run_scene runs it to completion while the
// trainer steps it block by block.
class LoopRunner {
 public:
  LoopRunner(const LoopScene& scene, AhsProcessor& ahs, const HowlDetectorConfig& det,
             double duration, const LoopOptions& opt = {})
      : ahs_(ahs), det_(det), opt_(opt), gain_(scene.gain),
        delay_(scene.delay_samples()), block_(ahs.block_size()), latency_(ahs.latency()),
        conv_(scene.feedback_rir) {
    scene.validate();
    det_.validate();
    const int fs = scene.near_end.sample_rate;
    const auto requested = static_cast<std::size_t>(std::llround(duration * fs));
    if (!(duration > 0.0) || requested > scene.near_end.size()) {
      throw ConfigError("duration must be positive and no longer than the near-end signal");
    }
    if (delay_ < block_ + latency_) {
      throw ConfigError("loop delay of " + std::to_string(delay_) +
                        " samples is shorter than AHS block + latency (" +
                        std::to_string(block_ + latency_) + ")");
    }
    length_ = requested;
    padded_ = (length_ + block_ - 1) / block_ * block_;
    result_.s = near_end_at_mic(scene, opt_, padded_);
    for (TimeSignal* sig : {&result_.y, &result_.s_hat, &result_.x, &result_.d}) {
      *sig = TimeSignal{std::vector<double>(padded_, 0.0), fs};
    }
    result_.latency = latency_;
  }

  bool done() const { return cursor_ >= padded_; }
  std::size_t cursor() const { return cursor_; }
  std::size_t length() const { return length_; }
  const TimeSignal& target() const { return result_.s; }
  const SceneResult& partial() const { return result_; }

  // Processes one block. Returns true when the howl detector first fires
  // within this block.
  bool step() {
    if (done()) return false;
    const std::size_t t = cursor_;
    auto& x = result_.x.samples;
    auto& y = result_.y.samples;
    auto& d = result_.d.samples;
    auto& out = result_.s_hat.samples;
    for (std::size_t i = t; i < t + block_; ++i) {
      double v = 0.0;
      if (i >= delay_) v = gain_ * out[i - delay_];
      if (opt_.saturate) v = std::clamp(v, -opt_.saturation, opt_.saturation);
      x[i] = v;
    }
    const std::span<const double> x_block(x.data() + t, block_);
    conv_.process(x_block, std::span<double>(d.data() + t, block_));
    for (std::size_t i = t; i < t + block_; ++i) y[i] = result_.s.samples[i] + d[i];

    block_out_.resize(block_);
    ahs_.process(std::span<const double>(y.data() + t, block_), x_block, block_out_);
    const std::size_t skip = latency_ > t ? std::min(block_, latency_ - t) : 0;
    const std::size_t first = skip < block_ ? t + skip - latency_ : 0;
    for (std::size_t i = skip; i < block_; ++i) {
      double v = block_out_[i];
      if (!std::isfinite(v)) {
        v = 0.0;
        ++result_.numeric_faults;
      }
      out[t + i - latency_] = v;
    }
    cursor_ += block_;

    const auto run = detect_howl_run(std::span<const double>(out.data() + first, block_ - skip),
                                     det_, howl_carry_);
    howl_carry_ = run.carry;
    if (run.fired && !result_.howl_event && first + run.offset < length_) {
      result_.howl_event = first + run.offset;
      return true;
    }
    return false;
  }

  SceneResult finish() {
    for (TimeSignal* sig : {&result_.y, &result_.s_hat, &result_.x, &result_.d, &result_.s}) {
      sig->samples.resize(length_);
    }
    return std::move(result_);
  }

 private:
  AhsProcessor& ahs_;
  HowlDetectorConfig det_;
  LoopOptions opt_;
  double gain_;
  std::size_t delay_;
  std::size_t block_;
  std::size_t latency_;
  StreamingConvolver conv_;
  std::size_t length_ = 0;
  std::size_t padded_ = 0;
  std::size_t cursor_ = 0;
  std::size_t howl_carry_ = 0;
  std::vector<double> block_out_;
  SceneResult result_;
};

// Runs the full duration; howling is recorded, never a reason to stop.
inline SceneResult run_scene(const LoopScene& scene, AhsProcessor& ahs,
                             const HowlDetectorConfig& det, double duration,
                             const LoopOptions& opt = {}) {
  ahs.reset();
  LoopRunner runner(scene, ahs, det, duration, opt);
  while (!runner.done()) runner.step();
  return runner.finish();
}

// Writes y/s_hat/x/d/s as float WAVs plus manifest.json into `dir`.
inline void export_scene(const std::filesystem::path& dir, const LoopScene& scene,
                         const SceneResult& res, const std::string& stem = "scene") {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["gain"] = scene.gain;
  manifest["delay_s"] = scene.delay;
  manifest["delay_samples"] = scene.delay_samples();
  manifest["seed"] = scene.seed;
  manifest["sample_rate"] = res.y.sample_rate;
  manifest["samples"] = res.y.size();
  manifest["latency"] = res.latency;
  manifest["howl_event"] = res.howl_event ? nlohmann::json(*res.howl_event) : nlohmann::json(nullptr);
  manifest["numeric_faults"] = res.numeric_faults;
  const std::pair<const char*, const TimeSignal*> files[] = {
      {"y", &res.y}, {"s_hat", &res.s_hat}, {"x", &res.x}, {"d", &res.d}, {"s", &res.s}};
  for (const auto& [name, sig] : files) {
    const std::string file = stem + "_" + name + ".wav";
    write_wav(dir / file, *sig, WavFormat::kFloat32);
    manifest["files"][name] = file;
  }
  std::ofstream out(dir / (stem + "_manifest.json"));
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << "\n";
}

}  // namespace howlkit

#endif  // HOWLKIT_LOOP_HPP_
