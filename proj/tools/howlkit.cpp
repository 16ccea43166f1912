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

// howlkit command-line tool.
//
//   howlkit simulate  --out DIR [--gain G ...] [--scenes N]
//   howlkit suppress  --out DIR --variant V [--in MIC.wav --ref LS.wav | --scene I --gain G]
//   howlkit rir       --out DIR [--count N]
//   howlkit train     --out CKPT (--synthetic | --corpus DIR)
//   howlkit eval      --out DIR [--checkpoint CKPT] [--variant V ...]
//
// Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numeric, 5 shape.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "howlkit/config.hpp"
#include "howlkit/loop.hpp"
#include "howlkit/metrics.hpp"
#include "howlkit/neural_kalman.hpp"
#include "howlkit/room.hpp"
#include "howlkit/scenes.hpp"
#include "howlkit/trainer.hpp"
#include "howlkit/wav.hpp"

namespace fs = std::filesystem;
using namespace howlkit;

namespace {

enum ExitCode { kOk = 0, kConfigExit = 2, kIoExit = 3, kNumericExit = 4, kShapeExit = 5 };

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string dump_config;
  std::vector<double> gains;
  std::optional<double> duration;
  std::vector<std::string> variants;
  bool no_mask = false;
  bool no_cov = false;
  bool stop_grad_filter = false;
  std::string out;
  bool synthetic = false;
  std::string corpus;
  std::string checkpoint;
  std::string in_wav;
  std::string ref_wav;
  std::size_t scene = 0;
  std::optional<std::size_t> count;
  std::optional<std::size_t> epochs;
  std::string log_path;
};

RunConfig effective_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.no_mask) c.use_mask = false;
  if (o.no_cov) c.use_learned_cov = false;
  if (o.stop_grad_filter) c.stop_grad_filter = true;
  if (!o.corpus.empty()) c.sampler.corpus_dir = o.corpus;
  if (o.epochs) c.trainer.epochs = *o.epochs;
  c.validate();
  if (!o.dump_config.empty()) detail::dump(o.dump_config, to_json(c).dump(2) + "\n");
  return c;
}

NeuralKalmanNets load_or_init_nets(const RunConfig& c, const Options& o) {
  if (!o.checkpoint.empty()) return load_checkpoint(o.checkpoint).nets;
  return make_nets(c.stft.num_bins(), c.nets, c.seed);
}

// Builds an AHS factory for one variant name. `nets` must outlive the factory.
AhsFactory variant_factory(const std::string& name, const RunConfig& c, const NeuralKalmanNets* nets) {
  if (name == "none") return [] { return std::make_unique<IdentityAhs>(); };
  if (name == "kalman") {
    const auto cfg = classical_config(c.stft, c.fdkf);
    return [cfg] { return std::make_unique<KalmanAhs>(cfg, nullptr); };
  }
  if (name == "neuralkalman") {
    const auto cfg = c.model();
    if (cfg.uses_nets()) check_nets(*nets, cfg.fdkf.num_bins);
    const NeuralKalmanNets* use = cfg.uses_nets() ? nets : nullptr;
    return [cfg, use] { return std::make_unique<KalmanAhs>(cfg, use); };
  }
  throw ConfigError("unknown variant '" + name + "' (expected none, kalman or neuralkalman)");
}

std::string gain_tag(double g) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", g);
  return buf;
}

// Sampler whose test pool is large enough for `scenes` held-out scenes.
SceneSampler test_sampler(const RunConfig& c, std::size_t scenes, double duration) {
  SamplerConfig s = c.sampler_config();
  s.test_scenes = std::max(s.test_scenes, scenes);
  s.duration = std::max(s.duration, duration);
  return SceneSampler(s);
}

int cmd_simulate(const Options& o) {
  const RunConfig c = effective_config(o);
  const std::size_t n = o.count.value_or(1);
  const double duration = o.duration.value_or(c.duration);
  const SceneSampler sampler = test_sampler(c, n, duration);
  const fs::path out = o.out.empty() ? fs::path("simulate") : fs::path(o.out);
  std::vector<std::optional<double>> gains;
  for (double g : o.gains) gains.emplace_back(g);
  if (gains.empty()) gains.emplace_back(std::nullopt);
  const std::string variant = o.variants.empty() ? "none" : o.variants.front();
  const NeuralKalmanNets nets = variant == "neuralkalman" ? load_or_init_nets(c, o) : NeuralKalmanNets{};
  const AhsFactory make = variant_factory(variant, c, &nets);
  for (const auto& g : gains) {
    for (std::size_t i = 0; i < n; ++i) {
      const LoopScene scene = sampler.test_scene(i, g);
      auto ahs = make();
      const SceneResult r = run_scene(scene, *ahs, c.detector, duration, c.loop);
      const std::string stem = "scene" + std::to_string(i) + "_g" + gain_tag(scene.gain);
      export_scene(out, scene, r, stem);
      std::cout << stem << " howl=" << (r.howl_event ? std::to_string(*r.howl_event) : "none")
                << " sdr=" << scene_sdr(r) << "\n";
    }
  }
  return kOk;
}

// Open-loop processing of a recorded microphone/loudspeaker pair. The output
// is shifted back by the processor latency and zero-padded at the end.
TimeSignal process_recording(AhsProcessor& ahs, const TimeSignal& mic, const TimeSignal& ref) {
  const std::size_t block = ahs.block_size(), lat = ahs.latency(), n = mic.size();
  const std::size_t padded = (n + lat + block - 1) / block * block;
  std::vector<double> y(padded, 0.0), x(padded, 0.0), out(padded, 0.0), chunk(block);
  std::copy(mic.samples.begin(), mic.samples.end(), y.begin());
  std::copy(ref.samples.begin(), ref.samples.end(), x.begin());
  ahs.reset();
  for (std::size_t t = 0; t < padded; t += block) {
    ahs.process(std::span<const double>(y.data() + t, block), std::span<const double>(x.data() + t, block), chunk);
    for (std::size_t i = 0; i < block; ++i) {
      if (t + i >= lat) out[t + i - lat] = std::isfinite(chunk[i]) ? chunk[i] : 0.0;
    }
  }
  out.resize(n);
  return {std::move(out), mic.sample_rate};
}

int cmd_suppress(const Options& o) {
  const RunConfig c = effective_config(o);
  const std::string variant = o.variants.empty() ? "neuralkalman" : o.variants.front();
  const NeuralKalmanNets nets = variant == "neuralkalman" && c.model().uses_nets() ? load_or_init_nets(c, o)
                                                                                     : NeuralKalmanNets{};
  const AhsFactory make = variant_factory(variant, c, &nets);
  const fs::path out = o.out.empty() ? fs::path("suppress") : fs::path(o.out);
  fs::create_directories(out);
  auto ahs = make();
  if (!o.in_wav.empty()) {
    const TimeSignal mic = read_wav(o.in_wav);
    TimeSignal ref{std::vector<double>(mic.size(), 0.0), mic.sample_rate};
    if (!o.ref_wav.empty()) {
      ref = read_wav(o.ref_wav, mic.sample_rate);
      if (ref.size() != mic.size()) throw ShapeError("reference and microphone lengths differ");
    }
    mic.validate();
    ref.validate();
    const TimeSignal est = process_recording(*ahs, mic, ref);
    write_wav(out / "s_hat.wav", est);
    write_spectrogram_pgm(out / "mic.pgm", mic, c.stft);
    write_spectrogram_pgm(out / "s_hat.pgm", est, c.stft);
    return kOk;
  }
  const double duration = o.duration.value_or(c.duration);
  const SceneSampler sampler = test_sampler(c, o.scene + 1, duration);
  std::optional<double> gain;
  if (!o.gains.empty()) gain = o.gains.front();
  const LoopScene scene = sampler.test_scene(o.scene, gain);
  const SceneResult r = run_scene(scene, *ahs, c.detector, duration, c.loop);
  export_scene(out, scene, r, "scene");
  write_spectrogram_pgm(out / "scene_y.pgm", r.y, c.stft);
  write_spectrogram_pgm(out / "scene_s_hat.pgm", r.s_hat, c.stft);
  std::cout << "variant=" << variant << " gain=" << scene.gain
            << " howl=" << (r.howl_event ? std::to_string(*r.howl_event) : "none") << " sdr=" << scene_sdr(r)
            << " lsd=" << scene_lsd(r, c.stft) << "\n";
  return kOk;
}

int cmd_rir(const Options& o) {
  const RunConfig c = effective_config(o);
  const std::size_t n = o.count.value_or(c.rir_count);
  const fs::path out = o.out.empty() ? fs::path("rir") : fs::path(o.out);
  fs::create_directories(out);
  std::mt19937_64 rng(c.sampler_config().seed);
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    RoomDraw draw = sample_room(c.sampler, rng, kDefaultSampleRate);
    draw.feedback.seed = draw.near.seed = rng();
    const Rir fb = generate_rir(draw.feedback), near = generate_rir(draw.near);
    const std::string stem = "room" + std::to_string(i);
    save_rir_wav(out / (stem + "_feedback.wav"), fb);
    save_rir_wav(out / (stem + "_near.wav"), near);
    const auto& r = draw.feedback;
    manifest.push_back({{"feedback", stem + "_feedback.wav"},
                        {"near", stem + "_near.wav"},
                        {"dimensions", r.dimensions},
                        {"loudspeaker", r.source_pos},
                        {"talker", draw.near.source_pos},
                        {"mic", r.mic_pos},
                        {"rt60", r.rt60},
                        {"length", fb.size()}});
  }
  detail::dump(out / "manifest.json", manifest.dump(2) + "\n");
  return kOk;
}

int cmd_train(const Options& o) {
  RunConfig c = effective_config(o);
  if (o.synthetic) c.sampler.corpus_dir.clear();
  if (!o.synthetic && c.sampler.corpus_dir.empty()) {
    throw ConfigError("train needs --synthetic or a corpus directory (--corpus or sampler.corpus_dir)");
  }
  const NeuralKalmanConfig model = c.model();
  if (!model.uses_nets()) throw ConfigError("nothing to train with both --no-mask and --no-cov");
  const TrainConfig tc = c.train_config();
  const SceneSampler sampler(c.sampler_config());
  const fs::path ckpt = o.out.empty() ? fs::path("howlkit.ckpt") : fs::path(o.out);
  const fs::path log_path = o.log_path.empty() ? fs::path(ckpt.string() + ".jsonl") : fs::path(o.log_path);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write training log '" + log_path.string() + "'");

  NeuralKalmanNets nets = load_or_init_nets(c, o);
  Trainer trainer(model, tc, nets);
  TrainHooks hooks;
  hooks.on_event = [&](const TrainEvent& ev) {
    log << ev.to_json().dump() << "\n";
    log.flush();
  };
  hooks.on_epoch = [&](std::size_t epoch, double v) {
    log << nlohmann::ordered_json{{"epoch", epoch}, {"validation_sdr", v}}.dump() << "\n";
    log.flush();
    std::cout << "epoch " << epoch << " validation SDR " << v << " dB\n";
  };
  const TrainResult res = train(nets, sampler, model, tc, hooks, &trainer);
  if (!res.best.all_finite()) throw NumericError("training produced non-finite weights");

  Checkpoint ck;
  ck.nets = res.best;
  ck.metadata = nlohmann::json::parse(to_json(c).dump());
  ck.metadata["best_epoch"] = res.best_epoch;
  ck.metadata["best_validation_sdr"] = res.best_validation;
  ck.metadata["validation_sdr"] = res.validation;
  ck.metadata["howl_aborts"] = res.howl_aborts;
  ck.metadata["nan_aborts"] = res.nan_aborts;
  ck.optimizer_steps = trainer.optimizer().steps();
  ck.first_moment = trainer.optimizer().first_moment();
  ck.second_moment = trainer.optimizer().second_moment();
  save_checkpoint(ckpt, ck);
  std::cout << "best epoch " << res.best_epoch << " validation SDR " << res.best_validation << " dB; howl aborts "
            << res.howl_aborts << ", nan aborts " << res.nan_aborts << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  const RunConfig c = effective_config(o);
  const double duration = o.duration.value_or(c.eval.duration);
  const std::size_t n = o.count.value_or(c.eval.scenes);
  const std::vector<double> gains = o.gains.empty() ? c.eval.gains : o.gains;
  const std::vector<std::string> names =
      o.variants.empty() ? std::vector<std::string>{"none", "kalman", "neuralkalman"} : o.variants;
  const bool needs_nets =
      std::find(names.begin(), names.end(), "neuralkalman") != names.end() && c.model().uses_nets();
  const NeuralKalmanNets nets = needs_nets ? load_or_init_nets(c, o) : NeuralKalmanNets{};
  std::vector<EvalVariant> variants;
  for (const auto& name : names) variants.push_back({name, variant_factory(name, c, &nets)});

  const SceneSampler sampler = test_sampler(c, n, duration);
  EvalOptions opt;
  opt.duration = duration;
  opt.detector = c.detector;
  opt.loop = c.loop;
  opt.stft = c.stft;
  const EvalReport report =
      evaluate([&](std::size_t i, double g) { return sampler.test_scene(i, g); }, n, variants, gains, opt);
  const fs::path out = o.out.empty() ? fs::path("eval") : fs::path(o.out);
  fs::create_directories(out);
  report.save(out / "report.csv", out / "report.json");
  for (const auto& a : report.aggregates()) {
    std::printf("%-13s G=%-4s SDR %7.2f +- %5.2f dB  LSD %6.2f +- %5.2f dB  howls %zu/%zu\n", a.variant.c_str(),
                gain_tag(a.gain).c_str(), a.sdr.mean, a.sdr.stddev, a.lsd.mean, a.lsd.stddev, a.howls, a.scenes);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"howlkit: closed-loop howling simulation and suppression"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration");
  app.add_option("--seed", o.seed, "Master seed (sampler, network init, trainer)");
  app.add_option("--dump-config", o.dump_config, "Write the effective configuration as JSON");

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output directory or file");
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--dump-config", o.dump_config, "Write the effective configuration as JSON");
  };
  const auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--variant", o.variants, "none, kalman or neuralkalman");
    sub->add_flag("--no-mask", o.no_mask, "Disable the reference mask network");
    sub->add_flag("--no-cov", o.no_cov, "Use classical covariance estimates");
    sub->add_flag("--stop-grad-filter", o.stop_grad_filter, "Do not backpropagate through the filter");
    sub->add_option("--checkpoint", o.checkpoint, "Trained network checkpoint");
  };

  auto* sim = app.add_subcommand("simulate", "Render closed-loop scenes as WAV sets with manifests");
  common(sim);
  model_flags(sim);
  sim->add_option("--gain", o.gains, "Loop gain(s); default: sampled per scene");
  sim->add_option("--scenes", o.count, "Number of held-out scenes");
  sim->add_option("--duration", o.duration, "Seconds per scene");

  auto* sup = app.add_subcommand("suppress", "Run one AHS variant on a recording or a simulated scene");
  common(sup);
  model_flags(sup);
  sup->add_option("--in", o.in_wav, "Microphone WAV (open loop)");
  sup->add_option("--ref", o.ref_wav, "Loudspeaker WAV for --in");
  sup->add_option("--scene", o.scene, "Held-out scene index");
  sup->add_option("--gain", o.gains, "Loop gain")->expected(1);
  sup->add_option("--duration", o.duration, "Seconds to render");

  auto* rir = app.add_subcommand("rir", "Generate room impulse response pairs");
  common(rir);
  rir->add_option("--count", o.count, "Number of rooms");

  auto* tr = app.add_subcommand("train", "Train the networks and write a checkpoint");
  common(tr);
  model_flags(tr);
  tr->add_flag("--synthetic", o.synthetic, "Use synthetic speech");
  tr->add_option("--corpus", o.corpus, "Directory of 16 kHz mono WAV utterances");
  tr->add_option("--epochs", o.epochs, "Override trainer.epochs");
  tr->add_option("--log", o.log_path, "JSONL training log (default: <out>.jsonl)");

  auto* ev = app.add_subcommand("eval", "Evaluate variants over the gain sweep");
  common(ev);
  model_flags(ev);
  ev->add_option("--gain", o.gains, "Gains (default: eval.gains)");
  ev->add_option("--scenes", o.count, "Number of held-out scenes");
  ev->add_option("--duration", o.duration, "Seconds per scene");
  ev->add_option("--corpus", o.corpus, "Directory of 16 kHz mono WAV utterances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  try {
    if (*sim) return cmd_simulate(o);
    if (*sup) return cmd_suppress(o);
    if (*rir) return cmd_rir(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIoExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericExit;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kShapeExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
