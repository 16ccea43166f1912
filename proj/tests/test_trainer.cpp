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
#include <cstdlib>
#include <filesystem>

#include <gtest/gtest.h>

#include "howlkit/trainer.hpp"

namespace howlkit {
namespace {

NeuralKalmanConfig small_model(bool cov = true) {
  NeuralKalmanConfig m;
  m.fdkf.num_bins = m.stft.num_bins();
  m.use_learned_cov = cov;
  return m;
}

NetSizes small_sizes() {
  NetSizes s;
  s.mask_hidden = 8;
  s.mask_layers = 2;
  s.cov_hidden = 8;
  return s;
}

SamplerConfig small_pool(std::size_t train_scenes, double duration) {
  SamplerConfig c;
  c.train_scenes = train_scenes;
  c.validation_scenes = 1;
  c.test_scenes = 0;
  c.duration = duration;
  c.rir_len = 1024;
  return c;
}

TrainConfig small_training() {
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 2;
  t.bptt = 16;
  return t;
}

TEST(Loss, L1SpectralExamples) {
  EXPECT_DOUBLE_EQ(l1_spectral_loss({{1.0, 2.0}, {0.0, 0.0}}, {{1.0, 0.0}, {0.0, 4.0}}), 1.5);
  EXPECT_EQ(l1_spectral_loss({}, {}), 0.0);
  EXPECT_THROW(l1_spectral_loss({{1.0}}, {{1.0}, {1.0}}), ShapeError);
  EXPECT_THROW(l1_spectral_loss({{1.0}}, {{1.0, 2.0}}), ShapeError);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  RecurrentNetParams p = init_params({2, 2, 1, 2, OutputActivation::kLinear}, {1});
  const RecurrentNetParams before = p;
  RecurrentNetParams g = p.zeros_like();
  g.w_out(0, 0) = 3.0;
  g.w_out(1, 0) = -0.01;
  OptimizerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.clip_norm = 0.0;
  Optimizer opt(cfg);
  opt.step(p, g);
  EXPECT_NEAR(p.w_out(0, 0), before.w_out(0, 0) - 0.01, 1e-9);
  EXPECT_NEAR(p.w_out(1, 0), before.w_out(1, 0) + 0.01, 1e-6);
  EXPECT_EQ(p.w_out(0, 1), before.w_out(0, 1));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optimizer, SgdClipsToMaxNorm) {
  RecurrentNetParams p = init_params({2, 2, 1, 2, OutputActivation::kLinear}, {1});
  const RecurrentNetParams before = p;
  RecurrentNetParams g = p.zeros_like();
  g.b_out[0] = 30.0;
  g.b_out[1] = 40.0;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.learning_rate = 1.0;
  cfg.clip_norm = 5.0;
  Optimizer opt(cfg);
  EXPECT_DOUBLE_EQ(opt.step(p, g), 50.0);
  EXPECT_NEAR(p.b_out[0], before.b_out[0] - 3.0, 1e-12);
  EXPECT_NEAR(p.b_out[1], before.b_out[1] - 4.0, 1e-12);
}

TEST(Optimizer, ConfigValidation) {
  OptimizerConfig c;
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::kSgd);
  EXPECT_THROW(parse_optimizer("lbfgs"), ConfigError);
}

TEST(Trainer, RejectsModelWithoutNets) {
  auto m = small_model();
  m.use_mask = false;
  m.use_learned_cov = false;
  auto nets = make_nets(65, small_sizes(), 1);
  EXPECT_THROW(Trainer(m, small_training(), nets), ConfigError);
  TrainConfig bad = small_training();
  bad.bptt = 0;
  EXPECT_THROW(Trainer(small_model(), bad, nets), ConfigError);
}

TEST(Trainer, ZeroLearningRateLeavesWeightsUnchanged) {
  const SceneSampler sampler(small_pool(1, 0.5));
  auto nets = make_nets(65, small_sizes(), 3);
  const auto before = nets;
  TrainConfig t = small_training();
  t.optimizer.learning_rate = 0.0;
  Trainer trainer(small_model(), t, nets);
  const auto ev = trainer.train_scene(sampler.train_scene(0));
  EXPECT_GT(ev.windows, 0u);
  EXPECT_GT(trainer.optimizer().steps(), 0u);
  EXPECT_TRUE(nets == before);
}

TEST(Trainer, OneEpochEmitsOneEventPerScene) {
  const SceneSampler sampler(small_pool(2, 0.5));
  auto nets = make_nets(65, small_sizes(), 4);
  std::vector<TrainEvent> seen;
  TrainHooks hooks;
  hooks.on_event = [&](const TrainEvent& e) { seen.push_back(e); };
  const auto res = train(nets, sampler, small_model(), small_training(), hooks);
  ASSERT_EQ(res.events.size(), 2u);
  EXPECT_EQ(seen, res.events);
  EXPECT_EQ(res.validation.size(), 2u);
  std::vector<std::size_t> ids{res.events[0].scene, res.events[1].scene};
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(ids, (std::vector<std::size_t>{0, 1}));
  for (const auto& e : res.events) {
    EXPECT_EQ(e.epoch, 1u);
    EXPECT_GT(e.frames, 0u);
    EXPECT_TRUE(std::isfinite(e.loss));
  }
}

TEST(Trainer, EmptyPoolIsRejected) {
  const SceneSampler sampler(small_pool(0, 0.5));
  auto nets = make_nets(65, small_sizes(), 5);
  EXPECT_THROW(train(nets, sampler, small_model(), small_training()), ConfigError);
}

TEST(Trainer, SameSeedSameResult) {
  const SceneSampler sampler(small_pool(2, 0.5));
  TrainConfig t = small_training();
  t.epochs = 2;
  t.seed = 9;
  auto a = make_nets(65, small_sizes(), 6);
  auto b = a;
  const auto ra = train(a, sampler, small_model(), t);
  const auto rb = train(b, sampler, small_model(), t);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(ra.best == rb.best);
  EXPECT_EQ(ra.events, rb.events);
  EXPECT_EQ(ra.validation, rb.validation);
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
}

TEST(Trainer, ThreadCountDoesNotChangeResult) {
  const SceneSampler sampler(small_pool(3, 0.5));
  TrainConfig t = small_training();
  t.batch_size = 3;
  const auto run = [&](const char* threads) {
    setenv("HOWLKIT_THREADS", threads, 1);
    auto nets = make_nets(65, small_sizes(), 12);
    const auto res = train(nets, sampler, small_model(), t);
    unsetenv("HOWLKIT_THREADS");
    return std::make_pair(nets, res.events);
  };
  const auto one = run("1");
  const auto three = run("3");
  EXPECT_TRUE(one.first == three.first);
  EXPECT_EQ(one.second, three.second);
}

TEST(Trainer, BestEpochMatchesValidationMaximum) {
  const SceneSampler sampler(small_pool(2, 0.5));
  TrainConfig t = small_training();
  t.epochs = 3;
  auto nets = make_nets(65, small_sizes(), 7);
  const auto res = train(nets, sampler, small_model(), t);
  ASSERT_EQ(res.validation.size(), 4u);
  const auto it = std::max_element(res.validation.begin(), res.validation.end());
  EXPECT_EQ(res.best_validation, *it);
  EXPECT_EQ(res.best_epoch, static_cast<std::size_t>(it - res.validation.begin()));
}

TEST(Trainer, LossScaleIsEquivalentToLearningRateWithSgd) {
  const SceneSampler sampler(small_pool(1, 0.5));
  const auto scene = sampler.train_scene(0);
  const auto start = make_nets(65, small_sizes(), 8);
  const auto run = [&](double scale, double lr) {
    TrainConfig t = small_training();
    t.optimizer.kind = OptimizerKind::kSgd;
    t.optimizer.clip_norm = 0.0;
    t.optimizer.learning_rate = lr;
    t.loss_scale = scale;
    auto nets = start;
    Trainer trainer(small_model(), t, nets);
    trainer.train_scene(scene);
    return nets;
  };
  const auto scaled = run(4.0, 0.1 / 4.0);
  const auto plain = run(1.0, 0.1);
  EXPECT_TRUE(scaled == plain);
  EXPECT_FALSE(plain == start);
}

TEST(Trainer, HowlAbortDiscardsWindowGradient) {
  SamplerConfig pool = small_pool(1, 2.0);
  const SceneSampler sampler(pool);
  LoopScene scene = sampler.train_scene(0);
  scene.gain = 3.0;
  // A mask that passes almost nothing leaves the loop without suppression.
  NetSizes sizes = small_sizes();
  auto nets = make_nets(65, sizes, 9);
  nets.mask.b_out.setConstant(-30.0);
  TrainConfig t = small_training();
  t.batch_size = 1;
  Trainer trainer(small_model(false), t, nets);
  NeuralKalmanNets last_stepped = nets;
  NeuralKalmanNets at_abort;
  std::optional<WindowReport> abort_report;
  TrainHooks hooks;
  hooks.on_window = [&](const WindowReport& r, const NeuralKalmanNets& n) {
    if (r.aborted > 0) {
      abort_report = r;
      at_abort = n;
    } else if (r.stepped) {
      last_stepped = n;
    }
  };
  const auto ev = trainer.train_scene(scene, 0, 0, hooks);
  ASSERT_TRUE(ev.howl_abort);
  ASSERT_TRUE(ev.howl_sample.has_value());
  ASSERT_TRUE(abort_report.has_value());
  EXPECT_FALSE(abort_report->stepped);
  EXPECT_EQ(abort_report->contributing, 0u);
  EXPECT_TRUE(at_abort == last_stepped);
  EXPECT_EQ(trainer.optimizer().steps(), ev.windows);
}

TEST(Trainer, OverfitsSingleScene) {
  const SceneSampler sampler(small_pool(1, 2.0));
  LoopScene scene = sampler.train_scene(0);
  scene.gain = 1.5;
  auto nets = make_nets(65, small_sizes(), 10);
  TrainConfig t = small_training();
  t.bptt = 1000;  // one window covers the scene
  t.optimizer.learning_rate = 5e-3;
  Trainer trainer(small_model(false), t, nets);
  const double initial = trainer.train_scene(scene).loss;
  double last = initial;
  for (int it = 1; it < 200; ++it) {
    const auto ev = trainer.train_scene(scene);
    ASSERT_FALSE(ev.howl_abort);
    ASSERT_FALSE(ev.nan_abort);
    last = ev.loss;
  }
  EXPECT_LT(last, 0.5 * initial);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto dir = std::filesystem::temp_directory_path();
  Checkpoint ck;
  ck.nets = make_nets(65, small_sizes(), 11);
  ck.metadata = {{"best_epoch", 3}};
  ck.optimizer_steps = 17;
  ck.first_moment = {0.5, -1.0};
  ck.second_moment = {0.25, 2.0};
  save_checkpoint(dir / "howlkit_ck.bin", ck);
  const auto back = load_checkpoint(dir / "howlkit_ck.bin");
  EXPECT_TRUE(back.nets == ck.nets);
  EXPECT_EQ(back.metadata, ck.metadata);
  EXPECT_EQ(back.optimizer_steps, 17u);
  EXPECT_EQ(back.first_moment, ck.first_moment);
  EXPECT_EQ(back.second_moment, ck.second_moment);
  const std::string bytes = detail::slurp(dir / "howlkit_ck.bin");
  detail::dump(dir / "howlkit_ck_cut.bin", bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(load_checkpoint(dir / "howlkit_ck_cut.bin"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "howlkit_ck_missing.bin"), IoError);
}

TEST(TrainEvent, JsonFields) {
  TrainEvent e;
  e.epoch = 2;
  e.howl_abort = true;
  e.howl_sample = 123;
  const auto j = e.to_json();
  EXPECT_EQ(j["epoch"], 2);
  EXPECT_EQ(j["howl_sample"], 123);
  EXPECT_TRUE(TrainEvent{}.to_json()["howl_sample"].is_null());
}

}  // namespace
}  // namespace howlkit
