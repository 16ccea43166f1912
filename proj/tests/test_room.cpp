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

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "howlkit/room.hpp"

namespace howlkit {
namespace {

std::vector<double> direct_convolution(const std::vector<double>& x, const std::vector<double>& h) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    for (std::size_t m = 0; m < h.size() && m <= n; ++m) acc += h[m] * x[n - m];
    y[n] = acc;
  }
  return y;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

TEST(Rir, AnechoicIsSingleDirectPathImpulse) {
  RoomSpec spec;
  spec.rt60 = 0.0;
  const Rir rir = generate_rir(spec);
  ASSERT_EQ(rir.size(), 8000u);
  const double d = source_mic_distance(spec);
  const auto arrival = static_cast<std::size_t>(std::llround(d * 16000.0 / 343.0));
  for (std::size_t i = 0; i < rir.size(); ++i) {
    if (i == arrival) {
      EXPECT_NEAR(rir.taps[i], 1.0 / (4.0 * std::numbers::pi * d), 1e-15);
    } else {
      EXPECT_EQ(rir.taps[i], 0.0) << i;
    }
  }
}

TEST(Rir, DirectPathArrivalWithReverb) {
  RoomSpec spec;
  const Rir rir = generate_rir(spec);
  const auto arrival = static_cast<long>(std::llround(source_mic_distance(spec) * 16000.0 / 343.0));
  long first = -1;
  for (std::size_t i = 0; i < rir.size() && first < 0; ++i) {
    if (rir.taps[i] != 0.0) first = static_cast<long>(i);
  }
  EXPECT_LE(std::abs(first - arrival), 1);
}

TEST(Rir, DeterministicWithoutJitter) {
  RoomSpec a, b;
  a.seed = 1;
  b.seed = 99;
  EXPECT_EQ(generate_rir(a).taps, generate_rir(b).taps);
  a.jitter = b.jitter = 0.05;
  EXPECT_NE(generate_rir(a).taps, generate_rir(b).taps);
  EXPECT_EQ(generate_rir(a).taps, generate_rir(a).taps);
}

TEST(Rir, SchroederDecayMatchesRt60) {
  RoomSpec spec;
  spec.rt60 = 0.3;
  spec.max_rir_len = 16000;
  const Rir rir = generate_rir(spec);
  std::vector<double> edc(rir.size());
  double acc = 0.0;
  for (std::size_t i = rir.size(); i-- > 0;) {
    acc += rir.taps[i] * rir.taps[i];
    edc[i] = acc;
  }
  // Least-squares line through the -5..-25 dB range of the decay curve.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < edc.size(); ++i) {
    const double db = 10.0 * std::log10(edc[i] / edc[0]);
    if (db > -5.0 || db < -25.0) continue;
    const double t = static_cast<double>(i) / 16000.0;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    ++n;
  }
  ASSERT_GT(n, 100u);
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double rt60 = -60.0 / slope;
  EXPECT_NEAR(rt60, 0.3, 0.06);
}

TEST(Rir, TailWeakerThanHead) {
  for (double rt : {0.2, 0.4, 0.6}) {
    RoomSpec spec;
    spec.rt60 = rt;
    const Rir rir = generate_rir(spec);
    const std::size_t tenth = rir.size() / 10;
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < tenth; ++i) {
      head += rir.taps[i] * rir.taps[i];
      tail += rir.taps[rir.size() - 1 - i] * rir.taps[rir.size() - 1 - i];
    }
    EXPECT_LT(tail, head) << rt;
  }
}

TEST(Rir, RejectsInvalidSpecs) {
  RoomSpec outside;
  outside.mic_pos = {6.0, 2.0, 1.0};
  EXPECT_THROW(generate_rir(outside), ConfigError);
  RoomSpec too_dry;
  too_dry.rt60 = 0.5 * min_rt60(too_dry.dimensions);
  EXPECT_THROW(generate_rir(too_dry), ConfigError);
  RoomSpec negative;
  negative.rt60 = -0.1;
  EXPECT_THROW(generate_rir(negative), ConfigError);
}

TEST(Rir, HighpassRemovesDc) {
  RoomSpec spec;
  spec.highpass = true;
  const Rir rir = generate_rir(spec);
  double dc = 0.0, mag = 0.0;
  for (double v : rir.taps) {
    dc += v;
    mag += std::abs(v);
  }
  EXPECT_LT(std::abs(dc), 1e-3 * mag);
}

TEST(Convolver, ImpulseReproducesTapsAcrossChunks) {
  std::mt19937_64 rng(1);
  const Rir h{random_vector(37, rng), 16000};
  StreamingConvolver conv(h);
  std::vector<double> out;
  for (std::size_t c = 0; c < 10; ++c) {
    std::vector<double> in(5, 0.0), o(5);
    if (c == 0) in[0] = 1.0;
    conv.process(in, o);
    out.insert(out.end(), o.begin(), o.end());
  }
  for (std::size_t i = 0; i < 37; ++i) EXPECT_EQ(out[i], h.taps[i]);
  for (std::size_t i = 37; i < out.size(); ++i) EXPECT_EQ(out[i], 0.0);
}

TEST(Convolver, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(2);
  StreamingConvolver conv(Rir{random_vector(100, rng), 16000});
  std::vector<double> in(1000, 0.0), out(1000, 1.0);
  conv.process(in, out);
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(Convolver, SevenSampleChunksEqualDirectConvolutionBitwise) {
  std::mt19937_64 rng(3);
  const auto x = random_vector(1000, rng);
  const Rir h{random_vector(129, rng), 16000};
  const auto want = direct_convolution(x, h.taps);
  StreamingConvolver conv(h);
  std::vector<double> got(x.size());
  for (std::size_t s = 0; s < x.size(); s += 7) {
    const std::size_t n = std::min<std::size_t>(7, x.size() - s);
    conv.process(std::span<const double>(x.data() + s, n), std::span<double>(got.data() + s, n));
  }
  EXPECT_EQ(got, want);
}

TEST(Convolver, RandomChunkingsAreBitExact) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_vector(500 + rng() % 6000, rng);
    const Rir h{random_vector(1 + rng() % 300, rng), 16000};
    const auto want = direct_convolution(x, h.taps);
    StreamingConvolver conv(h);
    std::vector<double> got(x.size());
    for (std::size_t s = 0; s < x.size();) {
      const std::size_t n = std::min<std::size_t>(1 + rng() % 200, x.size() - s);
      conv.process(std::span<const double>(x.data() + s, n), std::span<double>(got.data() + s, n));
      s += n;
    }
    ASSERT_EQ(got, want) << trial;
  }
}

TEST(Convolver, RateMismatchAndReset) {
  StreamingConvolver conv(Rir{{1.0, 0.5}, 16000});
  EXPECT_THROW(conv.process(TimeSignal{{1.0}, 8000}), ConfigError);
  const auto a = conv.process(TimeSignal{{1.0, 0.0, 0.0}});
  conv.reset();
  const auto b = conv.process(TimeSignal{{1.0, 0.0, 0.0}});
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.samples, (std::vector<double>{1.0, 0.5, 0.0}));
}

TEST(Convolve, FullLength) {
  const auto y = convolve(TimeSignal{{1.0, 2.0}}, Rir{{1.0, 1.0, 1.0}, 16000});
  EXPECT_EQ(y.samples, (std::vector<double>{1.0, 3.0, 3.0, 2.0}));
}

TEST(RirFiles, RawAndWavRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  std::mt19937_64 rng(5);
  const Rir h{random_vector(64, rng), 16000};
  save_rir_raw(dir / "howlkit_rir.bin", h);
  const Rir raw = load_rir_raw(dir / "howlkit_rir.bin");
  EXPECT_EQ(raw.taps, h.taps);
  EXPECT_EQ(raw.sample_rate, 16000);
  save_rir_wav(dir / "howlkit_rir.wav", h);
  const Rir wav = load_rir_wav(dir / "howlkit_rir.wav");
  ASSERT_EQ(wav.size(), h.size());
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(wav.taps[i], static_cast<double>(static_cast<float>(h.taps[i])));
  detail::dump(dir / "howlkit_rir_bad.bin", "HKRR\x01\x00\x00\x00");
  EXPECT_THROW(load_rir_raw(dir / "howlkit_rir_bad.bin"), IoError);
}

}  // namespace
}  // namespace howlkit
