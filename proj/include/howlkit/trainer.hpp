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

// Streaming closed-loop training.
//
// A batch of scenes runs in lockstep inside the loop simulator. Every `bptt`
// frames each scene's window is scored with the L1 magnitude loss against the
// aligned target, backpropagated, and the batch-mean gradient drives one
// optimizer step. A scene whose output trips the howl detector is dropped on
// the spot and its pending window contributes nothing; the same happens when
// its loss or gradient is not finite.

#ifndef HOWLKIT_TRAINER_HPP_
#define HOWLKIT_TRAINER_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "howlkit/errors.hpp"
#include "howlkit/loop.hpp"
#include "howlkit/metrics.hpp"
#include "howlkit/neural_kalman.hpp"
#include "howlkit/optim.hpp"
#include "howlkit/parallel.hpp"
#include "howlkit/scenes.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

// Mean over frames and bins of |a - b|.
inline double l1_spectral_loss(const std::vector<std::vector<double>>& estimate,
                               const std::vector<std::vector<double>>& target) {
  if (estimate.size() != target.size()) throw ShapeError("loss inputs have different frame counts");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < estimate.size(); ++t) {
    if (estimate[t].size() != target[t].size()) throw ShapeError("loss inputs have different bin counts");
    for (std::size_t b = 0; b < estimate[t].size(); ++b) sum += std::abs(estimate[t][b] - target[t][b]);
    count += estimate[t].size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  std::size_t bptt = 32;  // frames per truncated window
  OptimizerConfig optimizer;
  double loss_scale = 1.0;
  std::uint64_t seed = 0;
  double validation_gain = 2.0;
  HowlDetectorConfig detector;
  LoopOptions loop;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (bptt < 1) throw ConfigError("bptt must be >= 1");
    if (!(loss_scale > 0.0) || !std::isfinite(loss_scale)) throw ConfigError("loss_scale must be positive");
    if (!(validation_gain >= 0.0)) throw ConfigError("validation_gain must be >= 0");
    optimizer.validate();
    detector.validate();
  }
};

struct TrainEvent {
  std::size_t epoch = 0;
  std::size_t scene = 0;
  std::size_t frames = 0;
  std::size_t windows = 0;  // windows that reached the optimizer
  double loss = 0.0;        // mean over those windows
  bool howl_abort = false;
  std::optional<std::size_t> howl_sample;
  bool nan_abort = false;
  std::size_t clamp_events = 0;
  std::size_t numeric_resets = 0;

  nlohmann::ordered_json to_json() const {
    return {{"epoch", epoch},
            {"scene", scene},
            {"frames", frames},
            {"windows", windows},
            {"loss", loss},
            {"howl_abort", howl_abort},
            {"howl_sample", howl_sample ? nlohmann::ordered_json(*howl_sample) : nlohmann::ordered_json(nullptr)},
            {"nan_abort", nan_abort},
            {"clamp_events", clamp_events},
            {"numeric_resets", numeric_resets}};
  }

  friend bool operator==(const TrainEvent&, const TrainEvent&) = default;
};

// Reported after every lockstep window.
struct WindowReport {
  std::size_t epoch = 0;
  std::size_t window = 0;
  std::size_t contributing = 0;  // scenes whose gradient was used
  std::size_t aborted = 0;       // scenes dropped during this window
  bool stepped = false;
  double grad_norm = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainEvent&)> on_event;
  std::function<void(const WindowReport&, const NeuralKalmanNets&)> on_window;
  std::function<void(std::size_t epoch, double validation_sdr)> on_epoch;
};

namespace detail {

struct Lane {
  Lane(const LoopScene& sc, const NeuralKalmanConfig& model, const NeuralKalmanNets& nets, const TrainConfig& cfg,
       std::size_t id, std::size_t epoch)
      : scene(sc), ahs(model, &nets), runner(scene, ahs, cfg.detector, scene.near_end.duration(), cfg.loop) {
    event.epoch = epoch;
    event.scene = id;
    ahs.reset();
    ahs.set_recording(true);
    // Target frames share the microphone framing exactly.
    StreamingAnalyzer an(model.stft);
    const auto& s = runner.target().samples;
    const std::size_t hop = model.stft.hop;
    for (std::size_t t = 0; t + hop <= s.size(); t += hop) target.push_back(an.push({s.data() + t, hop}));
  }

  LoopScene scene;
  KalmanAhs ahs;
  LoopRunner runner;
  std::vector<SpectrumFrame> target;
  std::size_t frame = 0;  // first frame of the pending window
  bool active = true;
  double loss_sum = 0.0;
  TrainEvent event;
};

}  // namespace detail

class Trainer {
 public:
  Trainer(const NeuralKalmanConfig& model, const TrainConfig& cfg, NeuralKalmanNets& nets)
      : model_(model), cfg_(cfg), nets_(nets), opt_(cfg.optimizer) {
    model_.validate();
    cfg_.validate();
    if (!model_.uses_nets()) throw ConfigError("nothing to train: mask and learned covariances are both disabled");
    check_nets(nets_, model_.fdkf.num_bins);
  }

  Optimizer& optimizer() { return opt_; }
  const Optimizer& optimizer() const { return opt_; }

  // Runs `scenes` in lockstep until each finishes or aborts. `ids` label the
  // events (defaults to positions).
  std::vector<TrainEvent> train_batch(std::span<const LoopScene> scenes, std::size_t epoch,
                                      std::span<const std::size_t> ids = {}, const TrainHooks& hooks = {}) {
    std::vector<std::unique_ptr<detail::Lane>> lanes;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      lanes.push_back(std::make_unique<detail::Lane>(scenes[i], model_, nets_, cfg_, ids.empty() ? i : ids[i], epoch));
    }
    std::vector<NeuralKalmanNets> grads(lanes.size());
    std::vector<char> use(lanes.size()), dropped(lanes.size());
    std::size_t window = 0;
    while (std::any_of(lanes.begin(), lanes.end(), [](const auto& l) { return l->active; })) {
      parallel_for(lanes.size(), [&](std::size_t i) {
        use[i] = 0;
        dropped[i] = 0;
        auto& lane = *lanes[i];
        if (!lane.active) return;
        lane.ahs.clear_tapes();
        for (std::size_t f = 0; f < cfg_.bptt && !lane.runner.done(); ++f) {
          if (lane.runner.step()) {
            lane.event.howl_abort = true;
            lane.event.howl_sample = lane.runner.partial().howl_event;
            lane.active = false;
            dropped[i] = 1;
            break;
          }
        }
        auto& tapes = lane.ahs.tapes();
        lane.event.frames += tapes.size();
        if (!lane.active) return;
        if (tapes.empty()) {
          lane.active = false;
          return;
        }

        std::vector<SpectrumFrame> errs;
        errs.reserve(tapes.size());
        for (const auto& tp : tapes) errs.push_back(tp.err);
        std::span<const SpectrumFrame> tgt(lane.target.data() + lane.frame, tapes.size());
        std::vector<std::vector<Complex>> d_err;
        const double loss = l1_magnitude_loss(errs, tgt, &d_err);
        lane.frame += tapes.size();
        if (cfg_.loss_scale != 1.0) {
          for (auto& g : d_err)
            for (auto& v : g) v *= cfg_.loss_scale;
        }
        bool ok = std::isfinite(loss);
        if (ok) {
          grads[i] = nets_.zeros_like();
          backward_window(nets_, model_, tapes, d_err, grads[i]);
          ok = tensors_finite(grads[i]);
        }
        if (!ok) {
          lane.event.nan_abort = true;
          lane.active = false;
          dropped[i] = 1;
          return;
        }
        lane.loss_sum += loss;
        ++lane.event.windows;
        use[i] = 1;
        if (lane.runner.done()) lane.active = false;
      });

      WindowReport rep;
      rep.epoch = epoch;
      rep.window = window++;
      NeuralKalmanNets total;
      for (std::size_t i = 0; i < lanes.size(); ++i) {
        if (!use[i]) continue;
        if (rep.contributing == 0) {
          total = std::move(grads[i]);
        } else {
          add_tensors(total, grads[i]);
        }
        ++rep.contributing;
      }
      rep.aborted = static_cast<std::size_t>(std::count(dropped.begin(), dropped.end(), 1));
      if (rep.contributing > 0) {
        scale_tensors(total, 1.0 / static_cast<double>(rep.contributing));
        rep.grad_norm = opt_.step(nets_, total);
        rep.stepped = true;
        if (!nets_.all_finite()) throw NumericError("optimizer produced non-finite weights");
      }
      if (hooks.on_window) hooks.on_window(rep, nets_);
    }

    std::vector<TrainEvent> events;
    for (auto& l : lanes) {
      auto& ev = l->event;
      ev.loss = ev.windows ? l->loss_sum / static_cast<double>(ev.windows) : 0.0;
      ev.clamp_events = l->ahs.filter().state().clamp_events;
      ev.numeric_resets = l->ahs.numeric_resets();
      if (hooks.on_event) hooks.on_event(ev);
      events.push_back(ev);
    }
    return events;
  }

  TrainEvent train_scene(const LoopScene& scene, std::size_t epoch = 0, std::size_t id = 0,
                         const TrainHooks& hooks = {}) {
    const std::size_t ids[] = {id};
    return train_batch(std::span<const LoopScene>(&scene, 1), epoch, ids, hooks).front();
  }

 private:
  NeuralKalmanConfig model_;
  TrainConfig cfg_;
  NeuralKalmanNets& nets_;
  Optimizer opt_;
};

// Mean SDR of the engine over the sampler's validation pool.
inline double validation_sdr(const NeuralKalmanNets& nets, const NeuralKalmanConfig& model,
                             const SceneSampler& sampler, double gain, const TrainConfig& cfg) {
  if (sampler.validation_size() == 0) return 0.0;
  std::vector<double> v(sampler.validation_size());
  parallel_for(v.size(), [&](std::size_t i) {
    const LoopScene scene = sampler.validation_scene(i, gain);
    KalmanAhs ahs(model, &nets);
    v[i] = scene_sdr(run_scene(scene, ahs, cfg.detector, scene.near_end.duration(), cfg.loop));
  });
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct TrainResult {
  NeuralKalmanNets best;
  std::size_t best_epoch = 0;  // 0 = before training
  double best_validation = -std::numeric_limits<double>::infinity();
  std::vector<double> validation;  // per epoch, index 0 before training
  std::vector<TrainEvent> events;
  std::size_t howl_aborts = 0;
  std::size_t nan_aborts = 0;
};

// Full schedule: epochs over the shuffled train pool in batches; validation
// SDR after every epoch; the best-scoring weights are kept. `nets` ends at
// the final weights.
inline TrainResult train(NeuralKalmanNets& nets, const SceneSampler& sampler, const NeuralKalmanConfig& model,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}, Trainer* resume = nullptr) {
  if (sampler.train_size() == 0) throw ConfigError("training scene pool is empty");
  std::unique_ptr<Trainer> own;
  if (!resume) own = std::make_unique<Trainer>(model, cfg, nets);
  Trainer& trainer = resume ? *resume : *own;

  std::vector<LoopScene> pool;
  for (std::size_t i = 0; i < sampler.train_size(); ++i) pool.push_back(sampler.train_scene(i));

  TrainResult res;
  const auto validate = [&](std::size_t epoch) {
    const double v = validation_sdr(nets, model, sampler, cfg.validation_gain, cfg);
    res.validation.push_back(v);
    if (hooks.on_epoch) hooks.on_epoch(epoch, v);
    if (v > res.best_validation || epoch == 0) {
      res.best_validation = v;
      res.best_epoch = epoch;
      res.best = nets;
    }
  };
  validate(0);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pool.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<LoopScene> batch;
      std::vector<std::size_t> ids;
      for (std::size_t k = 0; k < n; ++k) {
        batch.push_back(pool[order[start + k]]);
        ids.push_back(order[start + k]);
      }
      for (auto& ev : trainer.train_batch(batch, epoch, ids, hooks)) {
        res.howl_aborts += ev.howl_abort;
        res.nan_aborts += ev.nan_abort;
        res.events.push_back(std::move(ev));
      }
    }
    validate(epoch);
  }
  return res;
}

// Checkpoint: "HKCK", u32 version, u64 JSON metadata length + bytes, three
// network blocks (mask, obs_cov, proc_cov), u64 optimizer steps, u64 moment
// count, then first and second moments as float64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NeuralKalmanNets nets;
  nlohmann::json metadata = nlohmann::json::object();
  std::uint64_t optimizer_steps = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::string out = "HKCK";
  detail::put_u32(out, kCheckpointVersion);
  const std::string meta = ck.metadata.dump();
  const std::uint64_t meta_len = meta.size();
  out.append(reinterpret_cast<const char*>(&meta_len), 8);
  out += meta;
  ck.nets.for_each_net([&](const char*, const RecurrentNetParams& p) { serialize_params(p, out); });
  const std::uint64_t steps = ck.optimizer_steps, count = ck.first_moment.size();
  if (ck.second_moment.size() != count) throw ShapeError("checkpoint moment sizes differ");
  out.append(reinterpret_cast<const char*>(&steps), 8);
  out.append(reinterpret_cast<const char*>(&count), 8);
  for (const auto* m : {&ck.first_moment, &ck.second_moment}) {
    out.append(reinterpret_cast<const char*>(m->data()), m->size() * 8);
  }
  detail::dump(path, out);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  const std::string src = path.string();
  const auto bad = [&](const std::string& why) { return IoError("'" + src + "': " + why); };
  if (buf.size() < 16 || buf.compare(0, 4, "HKCK") != 0) throw bad("not a howlkit checkpoint");
  if (detail::read_le<std::uint32_t>(buf, 4) != kCheckpointVersion) throw bad("unsupported checkpoint version");
  const auto meta_len = detail::read_le<std::uint64_t>(buf, 8);
  std::size_t pos = 16;
  if (buf.size() < pos + meta_len) throw bad("truncated metadata");
  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(buf.substr(pos, meta_len));
  } catch (const nlohmann::json::exception&) {
    throw bad("corrupt metadata");
  }
  pos += meta_len;
  ck.nets.for_each_net([&](const char*, RecurrentNetParams& p) { p = parse_params(buf, pos, src); });
  if (buf.size() < pos + 16) throw bad("truncated optimizer state");
  ck.optimizer_steps = detail::read_le<std::uint64_t>(buf, pos);
  const auto count = detail::read_le<std::uint64_t>(buf, pos + 8);
  pos += 16;
  if (buf.size() != pos + count * 16) throw bad("optimizer state has the wrong size");
  for (auto* m : {&ck.first_moment, &ck.second_moment}) {
    m->resize(count);
    for (auto& v : *m) {
      v = detail::read_le<double>(buf, pos);
      pos += 8;
    }
  }
  return ck;
}

}  // namespace howlkit

#endif  // HOWLKIT_TRAINER_HPP_
