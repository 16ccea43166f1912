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

// Stacked LSTM with a dense output layer, written against Eigen only.
//
// Gate rows are stacked [input; forget; cell; output], each `hidden` tall:
//   z = W_in x + W_rec h_prev + b
//   c = sigmoid(z_f) * c_prev + sigmoid(z_i) * tanh(z_g)
//   h = sigmoid(z_o) * tanh(c)
//   y = act(W_out h_top + b_out)
//
// Backpropagation through time runs one step at a time (backward_step) so
// that callers can interleave it with the backward pass of whatever consumes
// the network outputs.

#ifndef HOWLKIT_NEURAL_HPP_
#define HOWLKIT_NEURAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "howlkit/errors.hpp"
#include "howlkit/wav.hpp"

namespace howlkit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class OutputActivation : std::uint32_t { kLinear = 0, kSigmoid = 1, kSoftplus = 2 };

struct NetShape {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t layers = 1;
  std::size_t output = 0;
  OutputActivation activation = OutputActivation::kLinear;

  friend bool operator==(const NetShape&, const NetShape&) = default;
};

inline std::string describe(const NetShape& s) {
  return "input " + std::to_string(s.input) + ", hidden " + std::to_string(s.hidden) + " x " +
         std::to_string(s.layers) + ", output " + std::to_string(s.output) + ", activation " +
         std::to_string(static_cast<unsigned>(s.activation));
}

struct LstmLayer {
  MatrixXd w_in;   // 4H x I
  MatrixXd w_rec;  // 4H x H
  VectorXd bias;   // 4H
};

struct RecurrentNetParams {
  std::vector<LstmLayer> layers;
  MatrixXd w_out;  // O x H
  VectorXd b_out;  // O
  OutputActivation activation = OutputActivation::kLinear;

  NetShape shape() const {
    NetShape s;
    s.layers = layers.size();
    s.hidden = layers.empty() ? 0 : static_cast<std::size_t>(layers[0].w_rec.cols());
    s.input = layers.empty() ? 0 : static_cast<std::size_t>(layers[0].w_in.cols());
    s.output = static_cast<std::size_t>(w_out.rows());
    s.activation = activation;
    return s;
  }

  // Visits every tensor in a fixed order as (name, contiguous data, size).
  template <typename F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "w_in", layers[l].w_in.data(), static_cast<std::size_t>(layers[l].w_in.size()));
      f(p + "w_rec", layers[l].w_rec.data(), static_cast<std::size_t>(layers[l].w_rec.size()));
      f(p + "bias", layers[l].bias.data(), static_cast<std::size_t>(layers[l].bias.size()));
    }
    f(std::string("w_out"), w_out.data(), static_cast<std::size_t>(w_out.size()));
    f(std::string("b_out"), b_out.data(), static_cast<std::size_t>(b_out.size()));
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<RecurrentNetParams*>(this)->for_each_tensor(
        [&](const std::string& name, double* data, std::size_t n) {
          f(name, static_cast<const double*>(data), n);
        });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const double*, std::size_t k) { n += k; });
    return n;
  }

  RecurrentNetParams zeros_like() const {
    RecurrentNetParams z = *this;
    z.for_each_tensor([](const std::string&, double* d, std::size_t n) { std::fill_n(d, n, 0.0); });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const double* d, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) ok = ok && std::isfinite(d[i]);
    });
    return ok;
  }

  void validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    const auto h = layers[0].w_rec.cols();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      const auto in = l == 0 ? L.w_in.cols() : h;
      if (L.w_in.rows() != 4 * h || L.w_in.cols() != in || L.w_rec.rows() != 4 * h ||
          L.w_rec.cols() != h || L.bias.size() != 4 * h) {
        throw ShapeError("layer " + std::to_string(l) + " has inconsistent shapes");
      }
    }
    if (w_out.cols() != h || b_out.size() != w_out.rows()) throw ShapeError("output layer has inconsistent shapes");
  }

  friend bool operator==(const RecurrentNetParams& a, const RecurrentNetParams& b) {
    if (a.activation != b.activation || a.layers.size() != b.layers.size()) return false;
    if (!(a.shape() == b.shape())) return false;
    bool eq = true;
    std::vector<const double*> pa;
    std::vector<std::size_t> na;
    a.for_each_tensor([&](const std::string&, const double* d, std::size_t n) { pa.push_back(d); na.push_back(n); });
    std::size_t i = 0;
    b.for_each_tensor([&](const std::string&, const double* d, std::size_t n) {
      eq = eq && n == na[i] && std::memcmp(d, pa[i], n * sizeof(double)) == 0;
      ++i;
    });
    return eq;
  }
};

struct InitOptions {
  std::uint64_t seed = 0;
  double forget_bias = 1.0;
  double output_bias = 0.0;
};

// Uniform(+-1/sqrt(fan_in)) weights, zero biases except the forget gate.
inline RecurrentNetParams init_params(const NetShape& shape, const InitOptions& opt = {}) {
  if (shape.input == 0 || shape.hidden == 0 || shape.layers == 0 || shape.output == 0) {
    throw ConfigError("network sizes must be positive");
  }
  std::mt19937_64 rng(opt.seed);
  const auto fill = [&](MatrixXd& m, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
  };
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  RecurrentNetParams p;
  p.activation = shape.activation;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const auto in = static_cast<Eigen::Index>(l == 0 ? shape.input : shape.hidden);
    LstmLayer layer{MatrixXd(4 * h, in), MatrixXd(4 * h, h), VectorXd::Zero(4 * h)};
    fill(layer.w_in, static_cast<double>(in + h));
    fill(layer.w_rec, static_cast<double>(in + h));
    layer.bias.segment(h, h).setConstant(opt.forget_bias);
    p.layers.push_back(std::move(layer));
  }
  p.w_out.resize(static_cast<Eigen::Index>(shape.output), h);
  fill(p.w_out, static_cast<double>(shape.hidden));
  p.b_out = VectorXd::Constant(static_cast<Eigen::Index>(shape.output), opt.output_bias);
  return p;
}

struct HiddenState {
  std::vector<VectorXd> h;
  std::vector<VectorXd> c;

  static HiddenState zeros(const RecurrentNetParams& p) {
    HiddenState s;
    const auto hid = p.layers.at(0).w_rec.cols();
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      s.h.push_back(VectorXd::Zero(hid));
      s.c.push_back(VectorXd::Zero(hid));
    }
    return s;
  }
};

struct LayerTape {
  VectorXd x, h_prev, c_prev;
  VectorXd i, f, g, o;
  VectorXd c, tanh_c;
};

// Everything backward_step needs from one forward step.
struct StepTape {
  std::vector<LayerTape> layers;
  VectorXd h_top;
  VectorXd pre;
  VectorXd out;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double activate(OutputActivation act, double x) {
  switch (act) {
    case OutputActivation::kSigmoid: return sigmoid(x);
    case OutputActivation::kSoftplus: return softplus(x);
    case OutputActivation::kLinear: break;
  }
  return x;
}

// d act / d pre, expressed through pre and out.
inline double activate_grad(OutputActivation act, double pre, double out) {
  switch (act) {
    case OutputActivation::kSigmoid: return out * (1.0 - out);
    case OutputActivation::kSoftplus: return sigmoid(pre);
    case OutputActivation::kLinear: break;
  }
  return 1.0;
}

inline VectorXd forward(const RecurrentNetParams& p, const VectorXd& input, HiddenState& state,
                        StepTape* tape = nullptr) {
  if (p.layers.empty() || input.size() != p.layers[0].w_in.cols()) {
    throw ShapeError("network input has " + std::to_string(input.size()) + " entries, expected " +
                     std::to_string(p.layers.empty() ? 0 : p.layers[0].w_in.cols()));
  }
  if (state.h.size() != p.layers.size()) throw ShapeError("hidden state layer count mismatch");
  const auto h = p.layers[0].w_rec.cols();
  if (tape) tape->layers.resize(p.layers.size());
  VectorXd x = input;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    VectorXd z = L.bias;
    z.noalias() += L.w_in * x;
    z.noalias() += L.w_rec * state.h[l];
    VectorXd i = z.segment(0, h).unaryExpr([](double v) { return sigmoid(v); });
    VectorXd f = z.segment(h, h).unaryExpr([](double v) { return sigmoid(v); });
    VectorXd g = z.segment(2 * h, h).array().tanh();
    VectorXd o = z.segment(3 * h, h).unaryExpr([](double v) { return sigmoid(v); });
    VectorXd c = f.cwiseProduct(state.c[l]) + i.cwiseProduct(g);
    VectorXd tc = c.array().tanh();
    VectorXd hn = o.cwiseProduct(tc);
    if (tape) {
      auto& t = tape->layers[l];
      t.x = x;
      t.h_prev = state.h[l];
      t.c_prev = state.c[l];
      t.i = i;
      t.f = f;
      t.g = g;
      t.o = o;
      t.c = c;
      t.tanh_c = tc;
    }
    state.c[l] = std::move(c);
    state.h[l] = hn;
    x = std::move(hn);
  }
  VectorXd pre = p.b_out;
  pre.noalias() += p.w_out * x;
  VectorXd out(pre.size());
  for (Eigen::Index k = 0; k < pre.size(); ++k) out[k] = activate(p.activation, pre[k]);
  if (tape) {
    tape->h_top = x;
    tape->pre = pre;
    tape->out = out;
  }
  return out;
}

inline std::vector<VectorXd> forward_sequence(const RecurrentNetParams& p,
                                              std::span<const VectorXd> inputs, HiddenState& state,
                                              std::vector<StepTape>* tapes = nullptr) {
  std::vector<VectorXd> outs;
  outs.reserve(inputs.size());
  if (tapes) tapes->assign(inputs.size(), {});
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    outs.push_back(forward(p, inputs[t], state, tapes ? &(*tapes)[t] : nullptr));
  }
  return outs;
}

// Gradient flowing into the hidden state of the previous step.
struct BpttCarry {
  std::vector<VectorXd> dh;
  std::vector<VectorXd> dc;

  static BpttCarry zeros(const RecurrentNetParams& p) {
    const auto z = HiddenState::zeros(p);
    return BpttCarry{z.h, z.c};
  }
};

// One reverse step. Accumulates parameter gradients into `grads`, replaces
// `carry` by the gradient w.r.t. the state entering this step and returns the
// gradient w.r.t. this step's input.
inline VectorXd backward_step(const RecurrentNetParams& p, const StepTape& tape,
                              const VectorXd& d_out, BpttCarry& carry, RecurrentNetParams& grads) {
  if (d_out.size() != tape.out.size() || tape.layers.size() != p.layers.size()) {
    throw ShapeError("tape does not match the network or output gradient");
  }
  const auto h = p.layers[0].w_rec.cols();
  VectorXd d_pre(d_out.size());
  for (Eigen::Index k = 0; k < d_out.size(); ++k) {
    d_pre[k] = d_out[k] * activate_grad(p.activation, tape.pre[k], tape.out[k]);
  }
  grads.w_out.noalias() += d_pre * tape.h_top.transpose();
  grads.b_out += d_pre;
  VectorXd dh = p.w_out.transpose() * d_pre;

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    const auto& t = tape.layers[li];
    auto& G = grads.layers[li];
    dh += carry.dh[li];
    const VectorXd d_o = dh.cwiseProduct(t.tanh_c);
    const VectorXd dc = carry.dc[li] +
        dh.cwiseProduct(t.o).cwiseProduct((1.0 - t.tanh_c.array().square()).matrix());
    VectorXd dz(4 * h);
    dz.segment(0, h) = dc.cwiseProduct(t.g).cwiseProduct(t.i.cwiseProduct((1.0 - t.i.array()).matrix()));
    dz.segment(h, h) = dc.cwiseProduct(t.c_prev).cwiseProduct(t.f.cwiseProduct((1.0 - t.f.array()).matrix()));
    dz.segment(2 * h, h) = dc.cwiseProduct(t.i).cwiseProduct((1.0 - t.g.array().square()).matrix());
    dz.segment(3 * h, h) = d_o.cwiseProduct(t.o.cwiseProduct((1.0 - t.o.array()).matrix()));
    G.w_in.noalias() += dz * t.x.transpose();
    G.w_rec.noalias() += dz * t.h_prev.transpose();
    G.bias += dz;
    carry.dc[li] = dc.cwiseProduct(t.f);
    carry.dh[li] = L.w_rec.transpose() * dz;
    dh = L.w_in.transpose() * dz;
  }
  return dh;
}

struct BackwardResult {
  RecurrentNetParams grads;
  HiddenState d_initial;  // gradient w.r.t. the state before step 0
  std::vector<VectorXd> d_inputs;
};

// Full BPTT over a recorded sequence.
inline BackwardResult backward(const RecurrentNetParams& p, std::span<const StepTape> tapes,
                               std::span<const VectorXd> d_outputs) {
  if (tapes.size() != d_outputs.size()) throw ShapeError("tape and gradient sequence lengths differ");
  BackwardResult res{p.zeros_like(), {}, std::vector<VectorXd>(tapes.size())};
  BpttCarry carry = BpttCarry::zeros(p);
  for (std::size_t t = tapes.size(); t-- > 0;) {
    res.d_inputs[t] = backward_step(p, tapes[t], d_outputs[t], carry, res.grads);
  }
  res.d_initial.h = std::move(carry.dh);
  res.d_initial.c = std::move(carry.dc);
  return res;
}

struct TensorCheck {
  std::string name;
  double worst_relative_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double worst = 0.0;
  bool passed = true;
};

// Scalar probe loss sum_t coeff_t . out_t used by the gradient checker.
inline double probe_loss(const RecurrentNetParams& p, const HiddenState& h0,
                         std::span<const VectorXd> inputs, std::span<const VectorXd> coeffs) {
  HiddenState st = h0;
  double loss = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) loss += coeffs[t].dot(forward(p, inputs[t], st));
  return loss;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

// Compares `analytic` (parameter gradients plus initial-state gradients) to
// central finite differences of probe_loss.
inline GradCheckReport check_gradients(const RecurrentNetParams& params, const HiddenState& h0,
                                       std::span<const VectorXd> inputs,
                                       std::span<const VectorXd> coeffs,
                                       const RecurrentNetParams& analytic,
                                       const HiddenState& analytic_h0, double step,
                                       double tolerance) {
  GradCheckReport rep;
  RecurrentNetParams probe = params;
  std::vector<const double*> an;
  analytic.for_each_tensor([&](const std::string&, const double* d, std::size_t) { an.push_back(d); });
  std::size_t idx = 0;
  probe.for_each_tensor([&](const std::string& name, double* d, std::size_t n) {
    TensorCheck tc{name, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      const double keep = d[i];
      d[i] = keep + step;
      const double up = probe_loss(probe, h0, inputs, coeffs);
      d[i] = keep - step;
      const double down = probe_loss(probe, h0, inputs, coeffs);
      d[i] = keep;
      tc.worst_relative_error = std::max(tc.worst_relative_error,
                                         relative_error(an[idx][i], (up - down) / (2.0 * step)));
    }
    rep.tensors.push_back(tc);
    ++idx;
  });
  const auto check_state = [&](const char* label, auto member) {
    for (std::size_t l = 0; l < h0.h.size(); ++l) {
      TensorCheck tc{std::string(label) + std::to_string(l), 0.0};
      HiddenState s = h0;
      for (Eigen::Index i = 0; i < (s.*member)[l].size(); ++i) {
        const double keep = (s.*member)[l][i];
        (s.*member)[l][i] = keep + step;
        const double up = probe_loss(params, s, inputs, coeffs);
        (s.*member)[l][i] = keep - step;
        const double down = probe_loss(params, s, inputs, coeffs);
        (s.*member)[l][i] = keep;
        tc.worst_relative_error = std::max(
            tc.worst_relative_error,
            relative_error((analytic_h0.*member)[l][i], (up - down) / (2.0 * step)));
      }
      rep.tensors.push_back(tc);
    }
  };
  check_state("h0.layer", &HiddenState::h);
  check_state("c0.layer", &HiddenState::c);
  for (const auto& t : rep.tensors) rep.worst = std::max(rep.worst, t.worst_relative_error);
  rep.passed = rep.worst < tolerance;
  return rep;
}

// Runs backward on the probe loss and checks it against finite differences.
inline GradCheckReport grad_check(const RecurrentNetParams& params, const HiddenState& h0,
                                  std::span<const VectorXd> inputs,
                                  std::span<const VectorXd> coeffs, double step = 1e-4,
                                  double tolerance = 1e-4) {
  HiddenState st = h0;
  std::vector<StepTape> tapes;
  forward_sequence(params, inputs, st, &tapes);
  const auto res = backward(params, tapes, coeffs);
  return check_gradients(params, h0, inputs, coeffs, res.grads, res.d_initial, step, tolerance);
}

// Weight file layout (all little-endian):
//   "HKNN", u32 version, u32 activation, u64 input, u64 hidden, u64 layers,
//   u64 output, then per layer w_in, w_rec, bias, then w_out, b_out; every
//   matrix row-major float64.
inline constexpr std::uint32_t kWeightFileVersion = 1;

inline void serialize_params(const RecurrentNetParams& p, std::string& out) {
  p.validate();
  const auto s = p.shape();
  out += "HKNN";
  detail::put_u32(out, kWeightFileVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(s.activation));
  for (std::uint64_t v : {s.input, s.hidden, s.layers, s.output}) {
    out.append(reinterpret_cast<const char*>(&v), 8);
  }
  const auto put = [&](const auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        out.append(reinterpret_cast<const char*>(&v), 8);
      }
  };
  for (const auto& L : p.layers) {
    put(L.w_in);
    put(L.w_rec);
    put(L.bias);
  }
  put(p.w_out);
  put(p.b_out);
}

// Parses one serialized network starting at `pos` and advances it.
inline RecurrentNetParams parse_params(const std::string& buf, std::size_t& pos,
                                       const std::string& source) {
  const auto bad = [&](const std::string& why) { return IoError("'" + source + "': " + why); };
  if (buf.size() < pos + 44 || buf.compare(pos, 4, "HKNN") != 0) throw bad("not a network weight block");
  if (detail::read_le<std::uint32_t>(buf, pos + 4) != kWeightFileVersion) throw bad("unsupported weight file version");
  const auto act = detail::read_le<std::uint32_t>(buf, pos + 8);
  if (act > 2) throw bad("unknown activation id");
  NetShape s;
  s.activation = static_cast<OutputActivation>(act);
  s.input = detail::read_le<std::uint64_t>(buf, pos + 12);
  s.hidden = detail::read_le<std::uint64_t>(buf, pos + 20);
  s.layers = detail::read_le<std::uint64_t>(buf, pos + 28);
  s.output = detail::read_le<std::uint64_t>(buf, pos + 36);
  pos += 44;
  constexpr std::uint64_t kSane = 1u << 20;
  if (s.input == 0 || s.hidden == 0 || s.layers == 0 || s.output == 0 || s.input > kSane ||
      s.hidden > kSane || s.layers > 64 || s.output > kSane) {
    throw bad("implausible network shape");
  }
  std::uint64_t values = 4 * s.hidden * (s.input + s.hidden + 1) + s.output * (s.hidden + 1);
  values += (s.layers - 1) * 4 * s.hidden * (2 * s.hidden + 1);
  if (buf.size() < pos + values * 8) throw bad("truncated weight data");
  RecurrentNetParams p = init_params(s);
  const auto get = [&](auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = detail::read_le<double>(buf, pos);
        pos += 8;
      }
  };
  for (auto& L : p.layers) {
    get(L.w_in);
    get(L.w_rec);
    get(L.bias);
  }
  get(p.w_out);
  get(p.b_out);
  return p;
}

inline void save_params(const std::filesystem::path& path, const RecurrentNetParams& p) {
  std::string out;
  serialize_params(p, out);
  detail::dump(path, out);
}

inline RecurrentNetParams load_params(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  std::size_t pos = 0;
  auto p = parse_params(buf, pos, path.string());
  if (pos != buf.size()) throw IoError("'" + path.string() + "': trailing bytes after weights");
  return p;
}

// Loads and insists on a given shape.
inline RecurrentNetParams load_params(const std::filesystem::path& path, const NetShape& expected) {
  auto p = load_params(path);
  if (!(p.shape() == expected)) {
    throw ShapeError("'" + path.string() + "' holds a network with " + describe(p.shape()) +
                     "; expected " + describe(expected));
  }
  return p;
}

}  // namespace howlkit

#endif  // HOWLKIT_NEURAL_HPP_
