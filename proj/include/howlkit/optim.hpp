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

// First-order optimizers over any parameter set exposing for_each_tensor().

#ifndef HOWLKIT_OPTIM_HPP_
#define HOWLKIT_OPTIM_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "howlkit/errors.hpp"

namespace howlkit {

enum class OptimizerKind { kAdam, kSgd };

inline const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
    if (!std::isfinite(clip_norm)) throw ConfigError("clip norm must be finite");
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

template <typename Params>
double global_norm(const Params& grads) {
  double sq = 0.0;
  grads.for_each_tensor([&](const std::string&, const double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) sq += d[i] * d[i];
  });
  return std::sqrt(sq);
}

template <typename Params>
void scale_tensors(Params& p, double s) {
  p.for_each_tensor([&](const std::string&, double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) d[i] *= s;
  });
}

// dst += src, tensor by tensor.
template <typename Params>
void add_tensors(Params& dst, const Params& src) {
  std::vector<const double*> ptrs;
  src.for_each_tensor([&](const std::string&, const double* d, std::size_t) { ptrs.push_back(d); });
  std::size_t i = 0;
  dst.for_each_tensor([&](const std::string&, double* d, std::size_t n) {
    const double* s = ptrs.at(i++);
    for (std::size_t j = 0; j < n; ++j) d[j] += s[j];
  });
}

template <typename Params>
bool tensors_finite(const Params& p) {
  bool ok = true;
  p.for_each_tensor([&](const std::string&, const double* d, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) ok = ok && std::isfinite(d[i]);
  });
  return ok;
}

class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

  void restore(std::uint64_t steps, std::vector<double> m, std::vector<double> v) {
    if (m.size() != v.size()) throw ShapeError("optimizer moment sizes differ");
    steps_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  // Clips `grads` in place to the configured norm, then applies one update.
  // Returns the pre-clip gradient norm.
  template <typename Params>
  double step(Params& params, Params& grads) {
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) scale_tensors(grads, cfg_.clip_norm / norm);

    std::vector<const double*> g;
    grads.for_each_tensor([&](const std::string&, const double* d, std::size_t) { g.push_back(d); });
    std::size_t total = 0;
    params.for_each_tensor([&](const std::string&, double*, std::size_t n) { total += n; });
    if (cfg_.kind == OptimizerKind::kAdam && m_.empty()) {
      m_.assign(total, 0.0);
      v_.assign(total, 0.0);
    }
    if (cfg_.kind == OptimizerKind::kAdam && m_.size() != total) {
      throw ShapeError("optimizer state does not match parameter count");
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    std::size_t t = 0, flat = 0;
    params.for_each_tensor([&](const std::string&, double* w, std::size_t n) {
      const double* gd = g.at(t++);
      for (std::size_t i = 0; i < n; ++i, ++flat) {
        if (cfg_.kind == OptimizerKind::kSgd) {
          w[i] -= cfg_.learning_rate * gd[i];
          continue;
        }
        double& m = m_[flat];
        double& v = v_[flat];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gd[i];
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gd[i] * gd[i];
        w[i] -= cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
      }
    });
    return norm;
  }

 private:
  OptimizerConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace howlkit

#endif  // HOWLKIT_OPTIM_HPP_
