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

// Run configuration: one JSON document, every section optional, unknown keys
// rejected. to_json() emits the complete effective configuration, which
// parses back to the same run.

#ifndef HOWLKIT_CONFIG_HPP_
#define HOWLKIT_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "howlkit/errors.hpp"
#include "howlkit/loop.hpp"
#include "howlkit/neural_kalman.hpp"
#include "howlkit/scenes.hpp"
#include "howlkit/trainer.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

struct EvalSettings {
  std::vector<double> gains{1.5, 2.0, 2.5, 3.0};
  std::size_t scenes = 20;
  double duration = 4.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  StftConfig stft;
  FdkfConfig fdkf;
  NetSizes nets;
  bool use_mask = true;
  bool use_learned_cov = true;
  ReferenceMode reference_mode = ReferenceMode::kEverywhere;
  bool stop_grad_filter = false;
  FeatureNorm features;
  LoopOptions loop;
  double duration = 4.0;  // seconds rendered by simulate and suppress
  HowlDetectorConfig detector;
  TrainConfig trainer;
  SamplerConfig sampler;
  EvalSettings eval;
  std::size_t rir_count = 8;

  NeuralKalmanConfig model() const {
    NeuralKalmanConfig m;
    m.stft = stft;
    m.fdkf = fdkf;
    m.fdkf.num_bins = stft.num_bins();
    m.use_mask = use_mask;
    m.use_learned_cov = use_learned_cov;
    m.reference_mode = reference_mode;
    m.stop_grad_filter = stop_grad_filter;
    m.features = features;
    return m;
  }

  // Train settings with the shared loop/detector sections folded in.
  TrainConfig train_config() const {
    TrainConfig t = trainer;
    t.detector = detector;
    t.loop = loop;
    t.seed = seed;
    return t;
  }

  SamplerConfig sampler_config() const {
    SamplerConfig s = sampler;
    s.seed = sampler.seed + seed;
    return s;
  }

  void validate() const {
    model().validate();
    detector.validate();
    train_config().validate();
    sampler.validate();
    if (!(duration > 0.0)) throw ConfigError("loop.duration must be positive");
    if (!(loop.saturation > 0.0)) throw ConfigError("loop.saturation must be positive");
    if (eval.gains.empty()) throw ConfigError("eval.gains must not be empty");
    for (double g : eval.gains) {
      if (!(g >= 0.0)) throw ConfigError("eval gains must be >= 0");
    }
    if (!(eval.duration > 0.0)) throw ConfigError("eval.duration must be positive");
    if (eval.duration > sampler.duration && !sampler.corpus_dir.empty()) {
      // corpus utterances are padded to sampler.duration
      throw ConfigError("eval.duration exceeds sampler.duration");
    }
  }
};

inline const char* reference_mode_name(ReferenceMode m) {
  return m == ReferenceMode::kEverywhere ? "everywhere" : "predict_only";
}

inline ReferenceMode parse_reference_mode(const std::string& s) {
  if (s == "everywhere") return ReferenceMode::kEverywhere;
  if (s == "predict_only") return ReferenceMode::kPredictOnly;
  throw ConfigError("unknown reference_mode '" + s + "' (expected everywhere or predict_only)");
}

namespace detail {

// Reads known keys from one JSON object and rejects everything else.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'" + path_ + "." + key + "' has the wrong type");
    }
  }

  void range(const char* key, Range& dst) {
    std::vector<double> v{dst.lo, dst.hi};
    get(key, v);
    if (v.size() != 2) throw ConfigError("'" + path_ + "." + key + "' must be [lo, hi]");
    dst = {v[0], v[1]};
  }

  Section sub(const char* key) {
    seen_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown configuration key '" + (path_.empty() ? k : path_ + "." + k) + "'");
    }
  }

 private:
  static const nlohmann::json& empty() {
    static const nlohmann::json e = nlohmann::json::object();
    return e;
  }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  RunConfig c;
  detail::Section root(doc, "");
  root.get("seed", c.seed);
  {
    auto s = root.sub("stft");
    std::string window{window_name(c.stft.window)};
    s.get("frame_len", c.stft.frame_len);
    s.get("hop", c.stft.hop);
    s.get("window", window);
    c.stft.window = parse_window(window);
    s.finish();
  }
  {
    auto s = root.sub("fdkf");
    s.get("num_taps", c.fdkf.num_taps);
    s.get("transition", c.fdkf.transition);
    s.get("gain_scale", c.fdkf.gain_scale);
    s.get("p_init", c.fdkf.p_init);
    s.get("regularizer", c.fdkf.regularizer);
    s.get("smoothing", c.fdkf.smoothing);
    s.finish();
  }
  {
    auto s = root.sub("neural");
    std::string mode = reference_mode_name(c.reference_mode);
    s.get("mask_hidden", c.nets.mask_hidden);
    s.get("mask_layers", c.nets.mask_layers);
    s.get("cov_hidden", c.nets.cov_hidden);
    s.get("proc_output_bias", c.nets.proc_output_bias);
    s.get("obs_output_bias", c.nets.obs_output_bias);
    s.get("use_mask", c.use_mask);
    s.get("use_learned_cov", c.use_learned_cov);
    s.get("reference_mode", mode);
    s.get("stop_grad_filter", c.stop_grad_filter);
    s.get("feature_mean", c.features.mean);
    s.get("feature_scale", c.features.scale);
    c.reference_mode = parse_reference_mode(mode);
    s.finish();
  }
  {
    auto s = root.sub("loop");
    s.get("saturation", c.loop.saturation);
    s.get("saturate", c.loop.saturate);
    s.get("reverberant_source", c.loop.reverberant_source);
    s.get("duration", c.duration);
    s.finish();
  }
  {
    auto s = root.sub("detector");
    s.get("amp_threshold", c.detector.amp_threshold);
    s.get("run_length", c.detector.run_length);
    s.finish();
  }
  {
    auto s = root.sub("trainer");
    std::string opt = optimizer_name(c.trainer.optimizer.kind);
    s.get("epochs", c.trainer.epochs);
    s.get("batch_size", c.trainer.batch_size);
    s.get("bptt", c.trainer.bptt);
    s.get("optimizer", opt);
    s.get("learning_rate", c.trainer.optimizer.learning_rate);
    s.get("beta1", c.trainer.optimizer.beta1);
    s.get("beta2", c.trainer.optimizer.beta2);
    s.get("epsilon", c.trainer.optimizer.epsilon);
    s.get("clip_norm", c.trainer.optimizer.clip_norm);
    s.get("loss_scale", c.trainer.loss_scale);
    s.get("validation_gain", c.trainer.validation_gain);
    c.trainer.optimizer.kind = parse_optimizer(opt);
    s.finish();
  }
  {
    auto s = root.sub("sampler");
    s.range("gain", c.sampler.gain);
    s.range("delay", c.sampler.delay);
    s.range("rt60", c.sampler.rt60);
    s.range("room_x", c.sampler.room_x);
    s.range("room_y", c.sampler.room_y);
    s.range("room_z", c.sampler.room_z);
    s.get("rir_len", c.sampler.rir_len);
    s.get("highpass", c.sampler.highpass);
    s.get("train_scenes", c.sampler.train_scenes);
    s.get("test_scenes", c.sampler.test_scenes);
    s.get("validation_scenes", c.sampler.validation_scenes);
    s.get("duration", c.sampler.duration);
    s.get("corpus_dir", c.sampler.corpus_dir);
    s.get("seed", c.sampler.seed);
    s.finish();
  }
  {
    auto s = root.sub("eval");
    s.get("gains", c.eval.gains);
    s.get("scenes", c.eval.scenes);
    s.get("duration", c.eval.duration);
    s.finish();
  }
  {
    auto s = root.sub("rir");
    s.get("count", c.rir_count);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["stft"] = {{"frame_len", c.stft.frame_len}, {"hop", c.stft.hop}, {"window", std::string(window_name(c.stft.window))}};
  j["fdkf"] = {{"num_taps", c.fdkf.num_taps},       {"transition", c.fdkf.transition},
               {"gain_scale", c.fdkf.gain_scale},   {"p_init", c.fdkf.p_init},
               {"regularizer", c.fdkf.regularizer}, {"smoothing", c.fdkf.smoothing}};
  j["neural"] = {{"mask_hidden", c.nets.mask_hidden},
                 {"mask_layers", c.nets.mask_layers},
                 {"cov_hidden", c.nets.cov_hidden},
                 {"proc_output_bias", c.nets.proc_output_bias},
                 {"obs_output_bias", c.nets.obs_output_bias},
                 {"use_mask", c.use_mask},
                 {"use_learned_cov", c.use_learned_cov},
                 {"reference_mode", reference_mode_name(c.reference_mode)},
                 {"stop_grad_filter", c.stop_grad_filter},
                 {"feature_mean", c.features.mean},
                 {"feature_scale", c.features.scale}};
  j["loop"] = {{"saturation", c.loop.saturation},
               {"saturate", c.loop.saturate},
               {"reverberant_source", c.loop.reverberant_source},
               {"duration", c.duration}};
  j["detector"] = {{"amp_threshold", c.detector.amp_threshold}, {"run_length", c.detector.run_length}};
  const auto& t = c.trainer;
  j["trainer"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"bptt", t.bptt},
                  {"optimizer", optimizer_name(t.optimizer.kind)},
                  {"learning_rate", t.optimizer.learning_rate},
                  {"beta1", t.optimizer.beta1},
                  {"beta2", t.optimizer.beta2},
                  {"epsilon", t.optimizer.epsilon},
                  {"clip_norm", t.optimizer.clip_norm},
                  {"loss_scale", t.loss_scale},
                  {"validation_gain", t.validation_gain}};
  const auto& s = c.sampler;
  const auto r = [](const Range& x) { return nlohmann::ordered_json::array({x.lo, x.hi}); };
  j["sampler"] = {{"gain", r(s.gain)},
                  {"delay", r(s.delay)},
                  {"rt60", r(s.rt60)},
                  {"room_x", r(s.room_x)},
                  {"room_y", r(s.room_y)},
                  {"room_z", r(s.room_z)},
                  {"rir_len", s.rir_len},
                  {"highpass", s.highpass},
                  {"train_scenes", s.train_scenes},
                  {"test_scenes", s.test_scenes},
                  {"validation_scenes", s.validation_scenes},
                  {"duration", s.duration},
                  {"corpus_dir", s.corpus_dir},
                  {"seed", s.seed}};
  j["eval"] = {{"gains", c.eval.gains}, {"scenes", c.eval.scenes}, {"duration", c.eval.duration}};
  j["rir"] = {{"count", c.rir_count}};
  return j;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

}  // namespace howlkit

#endif  // HOWLKIT_CONFIG_HPP_
