#pragma once

// Independent reference implementations for the test suite. They follow the
// textbook definitions directly (nested loops, exhaustive scans, millisecond
// counting) and share no code paths with the library beyond its data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "tdl/data.hpp"
#include "tdl/esm.hpp"
#include "tdl/metrics.hpp"
#include "tdl/nn.hpp"
#include "tdl/tconv.hpp"

namespace oracle {

using tdl::Tensor;

// out[m][t] = b[m] + sum_{i,c} W[i][c][m] * x[c][t - k/2 + i]
inline Tensor conv1d(const tdl::nn::Conv1dLayer& l, const Tensor& x) {
  const long T = static_cast<long>(x.cols()), h = static_cast<long>(l.kernel / 2);
  Tensor out({l.out_channels, x.cols()});
  for (std::size_t m = 0; m < l.out_channels; ++m) {
    for (long t = 0; t < T; ++t) {
      double s = l.bias[m];
      for (std::size_t i = 0; i < l.kernel; ++i) {
        const long src = t - h + static_cast<long>(i);
        if (src < 0 || src >= T) continue;
        for (std::size_t c = 0; c < l.in_channels; ++c) {
          s += l.weights(i, c, m) * x(c, static_cast<std::size_t>(src));
        }
      }
      out(m, static_cast<std::size_t>(t)) = s;
    }
  }
  return out;
}

// Modulated taps summed directly, one output cell at a time.
inline Tensor tconv(const tdl::tconv::TconvLayer& layer, const Tensor& x, const Tensor& a) {
  const auto& l = layer.conv;
  const long T = static_cast<long>(x.cols()), h = static_cast<long>(l.kernel / 2);
  Tensor out({l.out_channels, x.cols()});
  for (std::size_t m = 0; m < l.out_channels; ++m) {
    for (long t = 0; t < T; ++t) {
      double s = l.bias[m];
      for (std::size_t i = 0; i < l.kernel; ++i) {
        const long src = t - h + static_cast<long>(i);
        if (src < 0 || src >= T) continue;
        for (std::size_t c = 0; c < l.in_channels; ++c) {
          const double xbar = x(c, static_cast<std::size_t>(src)) * a(i, static_cast<std::size_t>(t));
          s += l.weights(i, c, m) * xbar;
        }
      }
      out(m, static_cast<std::size_t>(t)) = s;
    }
  }
  return out;
}

inline double cosine(const Tensor& e, std::size_t x, std::size_t y) {
  double d = 0, nx = 0, ny = 0;
  for (std::size_t c = 0; c < e.rows(); ++c) {
    d += e(c, x) * e(c, y);
    nx += e(c, x) * e(c, x);
    ny += e(c, y) * e(c, y);
  }
  return std::clamp(d / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
}

inline Tensor neighbor_similarity(const tdl::esm::EmbeddingSequence& e, std::size_t k) {
  using tdl::esm::FrameClass;
  const long T = static_cast<long>(e.num_frames()), h = static_cast<long>(k / 2);
  Tensor a({k, e.num_frames()});
  for (std::size_t i = 0; i < k; ++i) {
    for (long t = 0; t < T; ++t) {
      const long n = t - h + static_cast<long>(i);
      if (n < 0 || n >= T) continue;
      const auto tt = static_cast<std::size_t>(t), nn = static_cast<std::size_t>(n);
      if (e.frame_class[tt] == FrameClass::padding || e.frame_class[nn] == FrameClass::padding) continue;
      a(i, tt) = tt == nn ? 1.0 : std::max(0.0, cosine(e.values, tt, nn));
    }
  }
  return a;
}

// Every unordered pair (x < y) of the requested classes.
inline double esm_pair_scan(const tdl::esm::EmbeddingSequence& e, tdl::esm::FrameClass a,
                            tdl::esm::FrameClass b, double tau_same, double tau_diff) {
  double best = 0.0;
  const std::size_t T = e.num_frames();
  for (std::size_t x = 0; x < T; ++x) {
    for (std::size_t y = x + 1; y < T; ++y) {
      const auto cx = e.frame_class[x], cy = e.frame_class[y];
      if (a == b) {
        if (cx != a || cy != a) continue;
        best = std::max(best, std::max(0.0, tau_same - cosine(e.values, x, y)));
      } else {
        if (!((cx == a && cy == b) || (cx == b && cy == a))) continue;
        best = std::max(best, std::max(0.0, cosine(e.values, x, y) - tau_diff));
      }
    }
  }
  return best;
}

// Exhaustive sweep: for each candidate threshold (every distinct score and
// one above the maximum) count FAR and FRR from scratch, then interpolate at
// the first crossing.
inline double eer_pct(const std::vector<tdl::metrics::ScoredFrame>& pool) {
  std::vector<double> th;
  for (const auto& f : pool) th.push_back(f.score);
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  th.push_back(std::nextafter(th.back(), std::numeric_limits<double>::infinity()));
  double n_real = 0, n_fake = 0;
  for (const auto& f : pool) (f.label ? n_real : n_fake) += 1;
  std::vector<double> far, frr;
  for (double t : th) {
    double fa = 0, fr = 0;
    for (const auto& f : pool) {
      if (!f.label && f.score >= t) fa += 1;
      if (f.label && f.score < t) fr += 1;
    }
    far.push_back(fa / n_fake);
    frr.push_back(fr / n_real);
  }
  for (std::size_t j = 1; j < th.size(); ++j) {
    const double d1 = far[j] - frr[j];
    if (d1 > 0) continue;
    if (d1 == 0) return 100.0 * far[j];
    const double d0 = far[j - 1] - frr[j - 1];
    const double w = d0 / (d0 - d1);
    return 100.0 * (far[j - 1] + w * (far[j] - far[j - 1]));
  }
  return std::numeric_limits<double>::quiet_NaN();
}

// Annotation on an integer-millisecond grid.
struct MsAnnotation {
  long duration_ms = 0;
  std::vector<long> cuts;               // segment ends, last == duration_ms
  std::vector<bool> real;               // per segment
};

inline MsAnnotation random_ms_annotation(std::mt19937_64& rng, long max_ms = 5000) {
  MsAnnotation a;
  a.duration_ms = std::uniform_int_distribution<long>(1, max_ms)(rng);
  const int n = std::uniform_int_distribution<int>(1, 6)(rng);
  std::vector<long> c;
  for (int i = 0; i + 1 < n && a.duration_ms > 1; ++i) {
    c.push_back(std::uniform_int_distribution<long>(1, a.duration_ms - 1)(rng));
  }
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  c.push_back(a.duration_ms);
  a.cuts = c;
  for (std::size_t i = 0; i < c.size(); ++i) a.real.push_back(std::bernoulli_distribution(0.5)(rng));
  return a;
}

inline tdl::SegmentAnnotation to_annotation(const MsAnnotation& a, std::string id = "ms") {
  tdl::SegmentAnnotation ann;
  ann.sample_id = std::move(id);
  ann.duration_s = static_cast<double>(a.duration_ms) / 1000.0;
  long start = 0;
  for (std::size_t i = 0; i < a.cuts.size(); ++i) {
    ann.segments.push_back({static_cast<double>(start) / 1000.0, static_cast<double>(a.cuts[i]) / 1000.0,
                            a.real[i] ? tdl::SegmentLabel::real : tdl::SegmentLabel::fake});
    start = a.cuts[i];
  }
  return ann;
}

// 1 ms occupancy count per label frame: real iff strictly more real
// milliseconds than fake ones.
inline std::vector<std::uint8_t> ms_authenticity(const MsAnnotation& a, long res_ms) {
  const long n = (a.duration_ms + res_ms - 1) / res_ms;
  std::vector<std::uint8_t> out;
  for (long j = 0; j < n; ++j) {
    long real = 0, fake = 0;
    for (long ms = j * res_ms; ms < std::min((j + 1) * res_ms, a.duration_ms); ++ms) {
      std::size_t s = 0;
      while (a.cuts[s] <= ms) ++s;
      (a.real[s] ? real : fake) += 1;
    }
    out.push_back(real > fake ? 1 : 0);
  }
  return out;
}

}  // namespace oracle
