#pragma once

// Similarity-modulated temporal convolution. Each input column feeding
// output frame t through tap i is scaled by a(i, t), the rectified cosine
// similarity between embedding frames t and t - k/2 + i.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tdl/error.hpp"
#include "tdl/esm.hpp"
#include "tdl/nn.hpp"
#include "tdl/tensor.hpp"

namespace tdl::tconv {

using esm::EmbeddingSequence;
using esm::FrameClass;

struct SimilarityMatrix {
  std::size_t kernel = 0;
  Tensor values;  // (kernel, T)

  std::size_t num_frames() const { return values.cols(); }
  double operator()(std::size_t i, std::size_t t) const { return values(i, t); }
};

struct TconvLayer {
  nn::Conv1dLayer conv;

  TconvLayer() = default;
  TconvLayer(std::size_t channels, std::size_t kernel) : conv(channels, channels, kernel) {}
  explicit TconvLayer(nn::Conv1dLayer c) : conv(std::move(c)) {
    if (conv.in_channels != conv.out_channels) {
      throw ConfigError("temporal convolution needs in_channels == out_channels");
    }
  }

  std::size_t channels() const { return conv.in_channels; }
  std::size_t kernel() const { return conv.kernel; }
};

namespace detail {

inline bool is_padding(const EmbeddingSequence& e, std::size_t t) {
  return e.frame_class[t] == FrameClass::padding;
}

inline void check_kernel(std::size_t k) {
  if (k % 2 == 0) throw ConfigError("similarity kernel must be odd, got " + std::to_string(k));
}

}  // namespace detail

// a(i, t) = max(0, S(e_t, e_{t-k/2+i})) for in-range, non-padding pairs and 0
// otherwise. The centre row is exactly 1 on non-padding frames. With
// rectify = false the raw cosine is used.
inline SimilarityMatrix neighbor_similarity(const EmbeddingSequence& e, std::size_t k,
                                            bool rectify = true) {
  detail::check_kernel(k);
  if (e.frame_class.size() != e.num_frames()) {
    throw ShapeError("neighbor_similarity: frame_class length mismatch");
  }
  const std::size_t T = e.num_frames(), half = k / 2;
  SimilarityMatrix a{k, Tensor::matrix(k, T)};
  const auto norms = esm::detail::column_norms(e.values);
  for (std::size_t t = 0; t < T; ++t) {
    if (detail::is_padding(e, t)) continue;
    for (std::size_t i = 0; i < k; ++i) {
      if (t + i < half || t + i - half >= T) continue;
      const std::size_t n = t + i - half;
      if (detail::is_padding(e, n)) continue;
      if (n == t) {
        a.values(i, t) = 1.0;
        continue;
      }
      const double s = esm::detail::column_cosine(e.values, norms, t, n);
      a.values(i, t) = rectify ? std::max(0.0, s) : s;
    }
  }
  return a;
}

// Chains d loss / d a into d loss / d e.values.
inline Tensor neighbor_similarity_backward(const EmbeddingSequence& e, std::size_t k,
                                           const Tensor& grad_a, bool rectify = true) {
  detail::check_kernel(k);
  const std::size_t T = e.num_frames(), half = k / 2;
  if (grad_a.rank() != 2 || grad_a.rows() != k || grad_a.cols() != T) {
    throw ShapeError("neighbor_similarity_backward: grad_a shape " + grad_a.shape_string());
  }
  Tensor grad(e.values.shape());
  const auto norms = esm::detail::column_norms(e.values);
  for (std::size_t t = 0; t < T; ++t) {
    if (detail::is_padding(e, t)) continue;
    for (std::size_t i = 0; i < k; ++i) {
      if (t + i < half || t + i - half >= T) continue;
      const std::size_t n = t + i - half;
      if (n == t || detail::is_padding(e, n) || grad_a(i, t) == 0.0) continue;
      if (rectify && !(esm::detail::column_cosine(e.values, norms, t, n) > 0.0)) continue;
      esm::detail::add_cosine_grad(e.values, norms, t, n, grad_a(i, t), grad);
    }
  }
  return grad;
}

inline void check_tconv_shapes(const TconvLayer& layer, const Tensor& x, const SimilarityMatrix& a) {
  nn::check_conv_input(layer.conv, x);
  if (a.kernel != layer.kernel() || a.values.rows() != layer.kernel() ||
      a.values.cols() != x.cols()) {
    throw ShapeError("tconv: similarity matrix " + a.values.shape_string() +
                     " does not match kernel " + std::to_string(layer.kernel()) + " and " +
                     std::to_string(x.cols()) + " frames");
  }
}

// out(m, t) = bias(m) + sum_i sum_c W(i, c, m) * x(c, t - k/2 + i) * a(i, t)
inline Tensor tconv_forward(const TconvLayer& layer, const Tensor& x, const SimilarityMatrix& a) {
  check_tconv_shapes(layer, x, a);
  const auto& conv = layer.conv;
  const std::size_t T = x.cols(), half = conv.half(), C = conv.in_channels;
  Tensor out = Tensor::matrix(conv.out_channels, T);
  for (std::size_t m = 0; m < conv.out_channels; ++m) {
    for (std::size_t t = 0; t < T; ++t) out(m, t) = conv.bias[m];
  }
  std::vector<double> xbar(T);
  for (std::size_t i = 0; i < conv.kernel; ++i) {
    const std::size_t t_lo = i < half ? half - i : 0;
    const std::size_t t_hi = T + half > i ? std::min(T, T + half - i) : 0;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = t_lo; t < t_hi; ++t) xbar[t] = x(c, t + i - half) * a.values(i, t);
      for (std::size_t m = 0; m < conv.out_channels; ++m) {
        const double w = conv.weights(i, c, m);
        double* orow = &out(m, 0);
        for (std::size_t t = t_lo; t < t_hi; ++t) orow[t] += w * xbar[t];
      }
    }
  }
  return out;
}

struct TconvGrads {
  Tensor x;
  Tensor a;
  Tensor weights;
  Tensor bias;
};

inline TconvGrads tconv_backward(const TconvLayer& layer, const Tensor& x,
                                 const SimilarityMatrix& a, const Tensor& grad_out) {
  check_tconv_shapes(layer, x, a);
  const auto& conv = layer.conv;
  const std::size_t T = x.cols(), half = conv.half(), C = conv.in_channels;
  if (grad_out.rank() != 2 || grad_out.rows() != conv.out_channels || grad_out.cols() != T) {
    throw ShapeError("tconv_backward: grad_out shape " + grad_out.shape_string());
  }
  TconvGrads g{Tensor(x.shape()), Tensor(a.values.shape()), Tensor(conv.weights.shape()),
               Tensor(conv.bias.shape())};
  for (std::size_t m = 0; m < conv.out_channels; ++m) {
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) s += grad_out(m, t);
    g.bias[m] = s;
  }
  // q(t) = sum_m W(i, c, m) * grad_out(m, t) for the current (i, c).
  std::vector<double> q(T);
  for (std::size_t i = 0; i < conv.kernel; ++i) {
    const std::size_t t_lo = i < half ? half - i : 0;
    const std::size_t t_hi = T + half > i ? std::min(T, T + half - i) : 0;
    for (std::size_t c = 0; c < C; ++c) {
      std::fill(q.begin(), q.end(), 0.0);
      for (std::size_t m = 0; m < conv.out_channels; ++m) {
        const double w = conv.weights(i, c, m);
        const double* go = &grad_out(m, 0);
        double gw = 0.0;
        for (std::size_t t = t_lo; t < t_hi; ++t) {
          gw += go[t] * x(c, t + i - half) * a.values(i, t);
          q[t] += w * go[t];
        }
        g.weights(i, c, m) = gw;
      }
      for (std::size_t t = t_lo; t < t_hi; ++t) {
        const std::size_t s = t + i - half;
        g.x(c, s) += q[t] * a.values(i, t);
        g.a(i, t) += q[t] * x(c, s);
      }
    }
  }
  return g;
}

}  // namespace tdl::tconv
