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

// Objective scores and Table-style reports.
//
// SDR here is the plain energy ratio 10 log10(sum s^2 / sum (s - s_hat)^2)
// without BSS-eval projections; it is sensitive to gain errors on purpose.

#ifndef HOWLKIT_METRICS_HPP_
#define HOWLKIT_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "howlkit/errors.hpp"
#include "howlkit/loop.hpp"
#include "howlkit/parallel.hpp"
#include "howlkit/signal.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

inline constexpr double kSdrCeiling = 60.0;
inline constexpr double kSdrFloor = -99.0;
inline constexpr double kLsdDelta = 1e-8;

inline double sdr(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size()) throw ShapeError("sdr: reference and estimate lengths differ");
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    sig += reference[i] * reference[i];
    const double d = reference[i] - estimate[i];
    err += d * d;
  }
  if (!std::isfinite(err)) return kSdrFloor;
  if (sig <= 0.0) return kSdrFloor;
  if (err <= 0.0) return kSdrCeiling;
  return std::clamp(10.0 * std::log10(sig / err), kSdrFloor, kSdrCeiling);
}

inline double sdr(const TimeSignal& reference, const TimeSignal& estimate) {
  if (reference.sample_rate != estimate.sample_rate) throw ConfigError("sdr: sample rates differ");
  return sdr(std::span<const double>(reference.samples), std::span<const double>(estimate.samples));
}

// SDR of a loop run, skipping the trailing samples the AHS never emitted
// because of its latency.
inline double scene_sdr(const SceneResult& r) {
  const std::size_t n = r.s.size() - std::min(r.latency, r.s.size());
  return sdr(std::span<const double>(r.s.samples.data(), n), std::span<const double>(r.s_hat.samples.data(), n));
}

inline double lsd(const TimeSignal& reference, const TimeSignal& estimate, const StftConfig& cfg = {}) {
  if (reference.size() != estimate.size()) throw ShapeError("lsd: reference and estimate lengths differ");
  if (reference.sample_rate != estimate.sample_rate) throw ConfigError("lsd: sample rates differ");
  const auto a = stft(reference, cfg);
  const auto b = stft(estimate, cfg);
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a[t].size(); ++k) {
      const double d = 20.0 * std::log10(std::abs(a[t].bins[k]) + kLsdDelta) -
                       20.0 * std::log10(std::abs(b[t].bins[k]) + kLsdDelta);
      acc += d * d;
    }
    total += std::sqrt(acc / static_cast<double>(a[t].size()));
  }
  return a.empty() ? 0.0 : total / static_cast<double>(a.size());
}

inline double scene_lsd(const SceneResult& r, const StftConfig& cfg = {}) {
  const std::size_t n = r.s.size() - std::min(r.latency, r.s.size());
  TimeSignal s{{r.s.samples.begin(), r.s.samples.begin() + static_cast<std::ptrdiff_t>(n)}, r.s.sample_rate};
  TimeSignal e{{r.s_hat.samples.begin(), r.s_hat.samples.begin() + static_cast<std::ptrdiff_t>(n)},
               r.s_hat.sample_rate};
  return lsd(s, e, cfg);
}

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;  // population
};

inline Stats mean_std(std::span<const double> v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  return s;
}

struct EvalRow {
  std::string variant;
  double gain = 0.0;
  std::size_t scene = 0;
  double sdr_db = 0.0;
  double lsd_db = 0.0;
  std::optional<std::size_t> howl_sample;
  std::size_t numeric_faults = 0;
};

struct EvalAggregate {
  std::string variant;
  double gain = 0.0;
  std::size_t scenes = 0;
  Stats sdr;
  Stats lsd;
  std::size_t howls = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  // One entry per (variant, gain), in first-appearance order.
  std::vector<EvalAggregate> aggregates() const {
    std::vector<EvalAggregate> out;
    std::vector<std::vector<double>> sdrs, lsds;
    for (const auto& r : rows) {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const EvalAggregate& a) { return a.variant == r.variant && a.gain == r.gain; });
      std::size_t k;
      if (it == out.end()) {
        out.push_back({r.variant, r.gain, 0, {}, {}, 0});
        sdrs.emplace_back();
        lsds.emplace_back();
        k = out.size() - 1;
      } else {
        k = static_cast<std::size_t>(it - out.begin());
      }
      ++out[k].scenes;
      if (r.howl_sample) ++out[k].howls;
      sdrs[k].push_back(r.sdr_db);
      lsds[k].push_back(r.lsd_db);
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k].sdr = mean_std(sdrs[k]);
      out[k].lsd = mean_std(lsds[k]);
    }
    return out;
  }

  std::optional<EvalAggregate> aggregate(const std::string& variant, double gain) const {
    for (const auto& a : aggregates()) {
      if (a.variant == variant && a.gain == gain) return a;
    }
    return std::nullopt;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "variant,gain,scene,sdr_db,lsd_db,howl,howl_sample,numeric_faults\n";
    for (const auto& r : rows) {
      os << r.variant << ',' << r.gain << ',' << r.scene << ',' << r.sdr_db << ',' << r.lsd_db << ','
         << (r.howl_sample ? 1 : 0) << ',' << (r.howl_sample ? std::to_string(*r.howl_sample) : "") << ','
         << r.numeric_faults << '\n';
    }
    return os.str();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["summary"] = nlohmann::ordered_json::array();
    for (const auto& a : aggregates()) {
      j["summary"].push_back({{"variant", a.variant},
                              {"gain", a.gain},
                              {"scenes", a.scenes},
                              {"sdr_mean", a.sdr.mean},
                              {"sdr_std", a.sdr.stddev},
                              {"lsd_mean", a.lsd.mean},
                              {"lsd_std", a.lsd.stddev},
                              {"howls", a.howls}});
    }
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"variant", r.variant},
                           {"gain", r.gain},
                           {"scene", r.scene},
                           {"sdr_db", r.sdr_db},
                           {"lsd_db", r.lsd_db},
                           {"howl_sample", r.howl_sample ? nlohmann::ordered_json(*r.howl_sample)
                                                         : nlohmann::ordered_json(nullptr)},
                           {"numeric_faults", r.numeric_faults}});
    }
    return j;
  }

  void save(const std::filesystem::path& csv_path, const std::filesystem::path& json_path) const {
    detail::dump(csv_path, to_csv());
    detail::dump(json_path, to_json().dump(2) + "\n");
  }
};

using AhsFactory = std::function<std::unique_ptr<AhsProcessor>()>;

struct EvalVariant {
  std::string name;
  AhsFactory make;
};

struct EvalOptions {
  double duration = 4.0;
  HowlDetectorConfig detector;
  LoopOptions loop;
  StftConfig stft;
};

// scene(i, gain) supplies scene i at the given gain. Scenes run in parallel;
// rows are ordered variant, gain, scene.
inline EvalReport evaluate(const std::function<LoopScene(std::size_t, double)>& scene, std::size_t num_scenes,
                           const std::vector<EvalVariant>& variants, const std::vector<double>& gains,
                           const EvalOptions& opt = {}) {
  EvalReport report;
  for (const auto& v : variants) {
    for (double g : gains) {
      std::vector<EvalRow> rows(num_scenes);
      parallel_for(num_scenes, [&](std::size_t i) {
        auto ahs = v.make();
        const SceneResult r = run_scene(scene(i, g), *ahs, opt.detector, opt.duration, opt.loop);
        rows[i] = {v.name, g, i, scene_sdr(r), scene_lsd(r, opt.stft), r.howl_event, r.numeric_faults};
      });
      report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    }
  }
  return report;
}

// Log-magnitude spectrogram as an 8-bit binary PGM: time runs left to right,
// frequency bottom to top, dB relative to the loudest bin mapped from
// [-80, 0] onto [0, 255].
inline void write_spectrogram_pgm(const std::filesystem::path& path, const TimeSignal& signal,
                                  const StftConfig& cfg = {}) {
  const auto frames = stft(signal, cfg);
  const std::size_t w = frames.size(), h = cfg.num_bins();
  std::vector<double> db(w * h);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < w; ++t) {
    for (std::size_t k = 0; k < h; ++k) {
      const double v = 20.0 * std::log10(std::abs(frames[t].bins[k]) + 1e-12);
      db[t * h + k] = v;
      peak = std::max(peak, v);
    }
  }
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t row = 0; row < h; ++row) {
    const std::size_t k = h - 1 - row;
    for (std::size_t t = 0; t < w; ++t) {
      const double rel = std::clamp(db[t * h + k] - peak, -80.0, 0.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((rel + 80.0) / 80.0 * 255.0))));
    }
  }
  detail::dump(path, out);
}

}  // namespace howlkit

#endif  // HOWLKIT_METRICS_HPP_
