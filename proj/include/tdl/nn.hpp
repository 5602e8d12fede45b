#pragma once

// Differentiable building blocks with hand-written adjoints, the Adam
// optimizer with step-halving learning rate, and a finite-difference
// gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tdl/error.hpp"
#include "tdl/rng.hpp"
#include "tdl/tensor.hpp"

namespace tdl::nn {

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

// Same-length (zero padded) stride-1 convolution over time.
// weights(i, c, m): tap i, input channel c, output channel m.
struct Conv1dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  Tensor weights;
  Tensor bias;

  Conv1dLayer() = default;
  Conv1dLayer(std::size_t in, std::size_t out, std::size_t k)
      : in_channels(in), out_channels(out), kernel(k),
        weights({k, in, out}), bias({out}) {
    if (k % 2 == 0) throw ConfigError("convolution kernel must be odd, got " + std::to_string(k));
  }

  std::size_t half() const { return kernel / 2; }
  std::size_t num_params() const { return weights.size() + bias.size(); }
};

struct FcLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weights;  // (out, in)
  Tensor bias;

  FcLayer() = default;
  FcLayer(std::size_t in, std::size_t out)
      : in_features(in), out_features(out), weights({out, in}), bias({out}) {}

  std::size_t num_params() const { return weights.size() + bias.size(); }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline void init_uniform(Conv1dLayer& layer, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer.kernel * layer.in_channels));
  for (double& w : layer.weights.values()) w = uniform(rng, -bound, bound);
  for (double& b : layer.bias.values()) b = uniform(rng, -bound, bound);
}

inline void init_uniform(FcLayer& layer, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_features));
  for (double& w : layer.weights.values()) w = uniform(rng, -bound, bound);
  for (double& b : layer.bias.values()) b = uniform(rng, -bound, bound);
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

inline void check_conv_input(const Conv1dLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.rows() != layer.in_channels) {
    throw ShapeError("conv1d: expected (" + std::to_string(layer.in_channels) +
                     ", T) input, got " + x.shape_string());
  }
}

// out(m, t) = bias(m) + sum_{i,c} weights(i, c, m) * x(c, t - k/2 + i)
inline Tensor conv1d_forward(const Conv1dLayer& layer, const Tensor& x) {
  check_conv_input(layer, x);
  const std::size_t T = x.cols(), half = layer.half();
  Tensor out = Tensor::matrix(layer.out_channels, T);
  for (std::size_t m = 0; m < layer.out_channels; ++m) {
    for (std::size_t t = 0; t < T; ++t) out(m, t) = layer.bias[m];
  }
  for (std::size_t i = 0; i < layer.kernel; ++i) {
    // Source column s = t + i - half must lie in [0, T).
    const std::size_t t_lo = i < half ? half - i : 0;
    const std::size_t t_hi = T + half > i ? std::min(T, T + half - i) : 0;
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      const double* xr = &x(c, 0);
      for (std::size_t m = 0; m < layer.out_channels; ++m) {
        const double w = layer.weights(i, c, m);
        double* orow = &out(m, 0);
        for (std::size_t t = t_lo; t < t_hi; ++t) orow[t] += w * xr[t + i - half];
      }
    }
  }
  return out;
}

struct Conv1dGrads {
  Tensor x;
  Tensor weights;
  Tensor bias;
};

inline Conv1dGrads conv1d_backward(const Conv1dLayer& layer, const Tensor& x,
                                   const Tensor& grad_out) {
  check_conv_input(layer, x);
  const std::size_t T = x.cols(), half = layer.half();
  if (grad_out.rank() != 2 || grad_out.rows() != layer.out_channels || grad_out.cols() != T) {
    throw ShapeError("conv1d_backward: grad_out shape " + grad_out.shape_string());
  }
  Conv1dGrads g{Tensor::matrix(layer.in_channels, T), Tensor(layer.weights.shape()),
                Tensor(layer.bias.shape())};
  for (std::size_t m = 0; m < layer.out_channels; ++m) {
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) s += grad_out(m, t);
    g.bias[m] = s;
  }
  for (std::size_t i = 0; i < layer.kernel; ++i) {
    const std::size_t t_lo = i < half ? half - i : 0;
    const std::size_t t_hi = T + half > i ? std::min(T, T + half - i) : 0;
    for (std::size_t c = 0; c < layer.in_channels; ++c) {
      const double* xr = &x(c, 0);
      double* gx = &g.x(c, 0);
      for (std::size_t m = 0; m < layer.out_channels; ++m) {
        const double w = layer.weights(i, c, m);
        const double* go = &grad_out(m, 0);
        double gw = 0.0;
        for (std::size_t t = t_lo; t < t_hi; ++t) {
          gw += go[t] * xr[t + i - half];
          gx[t + i - half] += w * go[t];
        }
        g.weights(i, c, m) = gw;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

inline Tensor fc_forward(const FcLayer& layer, const Tensor& x) {
  if (x.size() != layer.in_features) {
    throw ShapeError("fc: expected " + std::to_string(layer.in_features) + " inputs, got " +
                     std::to_string(x.size()));
  }
  Tensor out = Tensor::vector(layer.out_features);
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    const double* w = &layer.weights(o, 0);
    double s = layer.bias[o];
    for (std::size_t i = 0; i < layer.in_features; ++i) s += w[i] * x[i];
    out[o] = s;
  }
  return out;
}

struct FcGrads {
  Tensor x;
  Tensor weights;
  Tensor bias;
};

inline FcGrads fc_backward(const FcLayer& layer, const Tensor& x, const Tensor& grad_out) {
  if (x.size() != layer.in_features || grad_out.size() != layer.out_features) {
    throw ShapeError("fc_backward: shape mismatch");
  }
  FcGrads g{Tensor(x.shape()), Tensor(layer.weights.shape()), Tensor(layer.bias.shape())};
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    const double go = grad_out[o];
    g.bias[o] = go;
    const double* w = &layer.weights(o, 0);
    double* gw = &g.weights(o, 0);
    for (std::size_t i = 0; i < layer.in_features; ++i) {
      gw[i] = go * x[i];
      g.x[i] += go * w[i];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise activations and column normalization
// ---------------------------------------------------------------------------

inline Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Subgradient 0 at 0.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  x.require_same_shape(grad_out, "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Tensor sigmoid_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  return y;
}

// Takes the forward output y.
inline Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  y.require_same_shape(grad_out, "sigmoid_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
  return g;
}

inline constexpr double kNormFloor = 1e-12;

// Per time step (column) over channels: y = x / max(||x||, 1e-12).
inline Tensor l2_normalize_forward(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("l2_normalize: expected (C, T), got " + x.shape_string());
  Tensor y = x;
  for (std::size_t t = 0; t < x.cols(); ++t) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < x.rows(); ++c) n2 += x(c, t) * x(c, t);
    const double inv = 1.0 / std::max(std::sqrt(n2), kNormFloor);
    for (std::size_t c = 0; c < x.rows(); ++c) y(c, t) *= inv;
  }
  return y;
}

inline Tensor l2_normalize_backward(const Tensor& x, const Tensor& grad_out) {
  x.require_same_shape(grad_out, "l2_normalize_backward");
  if (x.rank() != 2) throw ShapeError("l2_normalize_backward: expected (C, T)");
  Tensor g = Tensor(x.shape());
  for (std::size_t t = 0; t < x.cols(); ++t) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < x.rows(); ++c) n2 += x(c, t) * x(c, t);
    const double n = std::sqrt(n2);
    if (n <= kNormFloor) {
      for (std::size_t c = 0; c < x.rows(); ++c) g(c, t) = grad_out(c, t) / kNormFloor;
      continue;
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < x.rows(); ++c) dot += x(c, t) * grad_out(c, t);
    dot /= n2;
    for (std::size_t c = 0; c < x.rows(); ++c) g(c, t) = (grad_out(c, t) - x(c, t) * dot) / n;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Binary cross-entropy
// ---------------------------------------------------------------------------

inline constexpr double kScoreClamp = 1e-7;

struct BceResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d scores
};

// loss = -(1/L) sum_j w_j [y_j log s_j + (1 - y_j) log(1 - s_j)] with s
// clamped to [1e-7, 1 - 1e-7]; the gradient is zero where the clamp is active.
inline BceResult bce_loss(std::span<const double> scores, std::span<const std::uint8_t> labels,
                          std::span<const double> weights = {}) {
  if (scores.size() != labels.size() || (!weights.empty() && weights.size() != scores.size())) {
    throw ShapeError("bce_loss: length mismatch");
  }
  if (scores.empty()) throw ShapeError("bce_loss: empty input");
  const double inv_len = 1.0 / static_cast<double>(scores.size());
  BceResult r{0.0, Tensor::vector(scores.size())};
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double w = weights.empty() ? 1.0 : weights[j];
    const bool clamped = scores[j] < kScoreClamp || scores[j] > 1.0 - kScoreClamp;
    const double s = std::clamp(scores[j], kScoreClamp, 1.0 - kScoreClamp);
    if (labels[j]) {
      r.loss -= w * std::log(s);
      if (!clamped) r.grad[j] = -w * inv_len / s;
    } else {
      r.loss -= w * std::log(1.0 - s);
      if (!clamped) r.grad[j] = w * inv_len / (1.0 - s);
    }
  }
  r.loss *= inv_len;
  return r;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double base_lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-9;
  double weight_decay = 1e-4;
  int halving_period_epochs = 5;
  // false: L2 term added to the gradient before the moments (classic Adam).
  // true: decoupled decay applied directly to the parameters (AdamW).
  bool decoupled_weight_decay = false;

  double lr(int epoch) const {
    if (halving_period_epochs <= 0) return base_lr;
    return base_lr * std::ldexp(1.0, -(epoch / halving_period_epochs));
  }
};

struct NamedParam {
  std::string name;
  Tensor* value;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

inline void adam_step(AdamState& state, std::span<const NamedParam> params,
                      std::span<const Tensor> grads, int epoch) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    params[p].value->require_same_shape(grads[p], ("adam_step: " + params[p].name).c_str());
    if (!grads[p].all_finite()) {
      throw NumericError("non-finite gradient for parameter " + params[p].name);
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");

  const auto& cfg = state.config;
  ++state.step;
  const double lr = cfg.lr(epoch);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p].value;
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double g = grads[p][i];
      if (!cfg.decoupled_weight_decay) g += cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      if (cfg.decoupled_weight_decay) theta[i] -= lr * cfg.weight_decay * theta[i];
      theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

struct GradEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradReport {
  double tolerance = 0.0;
  std::vector<GradEntry> entries;

  double max_rel_error() const {
    double e = 0.0;
    for (const auto& x : entries) e = std::max(e, x.max_rel_error);
    return e;
  }
  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& x) { return x.passed; });
  }
  void merge(const GradReport& other) {
    entries.insert(entries.end(), other.entries.begin(), other.entries.end());
  }
};

// A block of coordinates to perturb and its analytic gradient.
struct GradBlock {
  std::string name;
  Tensor* value;
  const Tensor* analytic;
};

struct GradCheckOptions {
  double tolerance = 1e-6;
  double step = 1e-5;
  // Blocks larger than this are checked on a random subset of this size.
  std::size_t max_coords_per_block = 200;
  std::uint64_t seed = 0;
};

// Central differences of `objective` with respect to every block coordinate
// (or a seeded sample of them). The objective must read the blocks' current
// values. Failures are reported, never thrown.
inline GradReport grad_check(const std::function<double()>& objective,
                             std::span<const GradBlock> blocks, const GradCheckOptions& opt = {}) {
  GradReport report;
  report.tolerance = opt.tolerance;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    Tensor& x = *blk.value;
    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opt.max_coords_per_block) {
      Rng rng = substream(opt.seed, "gradcheck", b);
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_block);
      std::sort(coords.begin(), coords.end());
    }
    GradEntry e{blk.name, coords.size(), 0.0, true};
    for (std::size_t i : coords) {
      const double saved = x[i];
      x[i] = saved + opt.step;
      const double fp = objective();
      x[i] = saved - opt.step;
      const double fm = objective();
      x[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = relative_error((*blk.analytic)[i], numeric);
      if (!std::isfinite(err)) {
        e.max_rel_error = std::numeric_limits<double>::infinity();
      } else {
        e.max_rel_error = std::max(e.max_rel_error, err);
      }
    }
    e.passed = e.max_rel_error < opt.tolerance;
    report.entries.push_back(e);
  }
  return report;
}

inline std::size_t count_params(const Conv1dLayer& layer) { return layer.num_params(); }
inline std::size_t count_params(const FcLayer& layer) { return layer.num_params(); }

}  // namespace tdl::nn
