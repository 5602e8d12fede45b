#pragma once

// Embedding similarity losses: pull same-class frame embeddings together,
// push real and fake frames apart, all in cosine space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdl/data.hpp"
#include "tdl/error.hpp"
#include "tdl/rng.hpp"
#include "tdl/tensor.hpp"

namespace tdl::esm {

enum class FrameClass : std::uint8_t { real, fake, padding, unlabeled };

// Column t of `values` is the embedding of frame t.
struct EmbeddingSequence {
  Tensor values;  // (dim, T)
  std::vector<FrameClass> frame_class;

  std::size_t dim() const { return values.rows(); }
  std::size_t num_frames() const { return values.cols(); }

  void validate(double tol = 1e-9) const {
    if (values.rank() != 2) throw ShapeError("embedding must be (dim, T)");
    if (frame_class.size() != num_frames()) {
      throw ShapeError("frame_class length does not match embedding frames");
    }
    for (std::size_t t = 0; t < num_frames(); ++t) {
      if (frame_class[t] == FrameClass::padding) continue;
      double n2 = 0.0;
      for (std::size_t c = 0; c < dim(); ++c) n2 += values(c, t) * values(c, t);
      if (std::abs(std::sqrt(n2) - 1.0) > tol) {
        throw ValidationError("embedding column " + std::to_string(t) + " is not unit norm");
      }
    }
  }
};

struct EsmConfig {
  double tau_same = 0.9;
  double tau_diff = 0.0;
  // Caps the pairs scanned per component; unset scans all pairs.
  std::optional<std::size_t> pair_budget;
  std::uint64_t sample_seed = 0;

  void validate() const {
    if (!(tau_same > -1.0 && tau_same <= 1.0)) throw ConfigError("tau_same must lie in (-1, 1]");
    if (!(tau_diff >= -1.0 && tau_diff < 1.0)) throw ConfigError("tau_diff must lie in [-1, 1)");
    if (!(tau_same > tau_diff)) throw ConfigError("tau_same must exceed tau_diff");
    if (pair_budget && *pair_budget == 0) throw ConfigError("pair_budget must be positive");
  }
};

struct EsmLoss {
  double l_real = 0.0;
  double l_fake = 0.0;
  double l_diff = 0.0;
  double total = 0.0;
};

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu < 1e-12 || nv < 1e-12) throw DegenerateInputError("cosine_similarity: zero vector");
  return std::clamp(dot / (nu * nv), -1.0, 1.0);
}

// Embedding frame t reads label index floor(t * L / T_e).
inline std::size_t label_index(std::size_t t, std::size_t label_len, std::size_t embed_len) {
  return t * label_len / embed_len;
}

inline std::vector<FrameClass> align_labels_to_embedding(const FrameLabels& labels,
                                                         std::size_t embed_len) {
  if (embed_len == 0) throw ShapeError("align_labels_to_embedding: empty embedding");
  const std::size_t L = labels.padded_len();
  if (L == 0) throw ShapeError("align_labels_to_embedding: empty labels");
  std::vector<FrameClass> out(embed_len);
  for (std::size_t t = 0; t < embed_len; ++t) {
    const std::size_t j = label_index(t, L, embed_len);
    if (j >= labels.true_labels) {
      out[t] = FrameClass::padding;
    } else {
      out[t] = labels.authenticity[j] ? FrameClass::real : FrameClass::fake;
    }
  }
  return out;
}

namespace detail {

// Column norms of e; zero columns are rejected when a cosine touches them.
inline std::vector<double> column_norms(const Tensor& e) {
  std::vector<double> n(e.cols(), 0.0);
  for (std::size_t c = 0; c < e.rows(); ++c) {
    for (std::size_t t = 0; t < e.cols(); ++t) n[t] += e(c, t) * e(c, t);
  }
  for (double& v : n) v = std::sqrt(v);
  return n;
}

inline double column_cosine(const Tensor& e, const std::vector<double>& norms, std::size_t x,
                            std::size_t y) {
  if (norms[x] < 1e-12 || norms[y] < 1e-12) {
    throw DegenerateInputError("embedding column has zero norm");
  }
  double dot = 0.0;
  for (std::size_t c = 0; c < e.rows(); ++c) dot += e(c, x) * e(c, y);
  return std::clamp(dot / (norms[x] * norms[y]), -1.0, 1.0);
}

// grad(:, x) += scale * dS/de_x, grad(:, y) += scale * dS/de_y
inline void add_cosine_grad(const Tensor& e, const std::vector<double>& norms, std::size_t x,
                            std::size_t y, double scale, Tensor& grad) {
  const double s = column_cosine(e, norms, x, y);
  const double nxy = norms[x] * norms[y];
  const double nx2 = norms[x] * norms[x], ny2 = norms[y] * norms[y];
  for (std::size_t c = 0; c < e.rows(); ++c) {
    const double ex = e(c, x), ey = e(c, y);
    grad(c, x) += scale * (ey / nxy - s * ex / nx2);
    grad(c, y) += scale * (ex / nxy - s * ey / ny2);
  }
}

struct HingeMax {
  double value = 0.0;
  std::optional<std::pair<std::size_t, std::size_t>> argmax;
};

inline std::vector<std::size_t> frames_of(const EmbeddingSequence& e, FrameClass cls) {
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < e.frame_class.size(); ++t) {
    if (e.frame_class[t] == cls) idx.push_back(t);
  }
  return idx;
}

// max over pairs of max(0, sign * S + offset). Pairs are visited in
// lexicographic order and only a strictly larger hinge replaces the argmax.
inline HingeMax hinge_max(const Tensor& e, const std::vector<double>& norms,
                          const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                          bool same_class, double sign, double offset, const EsmConfig& cfg,
                          std::uint64_t stream) {
  HingeMax best;
  double top = 0.0;
  auto visit = [&](std::size_t x, std::size_t y) {
    const double h = sign * column_cosine(e, norms, x, y) + offset;
    if (h > top) {
      top = h;
      best.argmax = std::make_pair(x, y);
    }
  };
  const std::size_t total =
      same_class ? (a.size() < 2 ? 0 : a.size() * (a.size() - 1) / 2) : a.size() * b.size();
  if (total == 0) return best;
  if (cfg.pair_budget && total > *cfg.pair_budget) {
    Rng rng = substream(cfg.sample_seed, "esm_pairs", stream);
    std::uniform_int_distribution<std::size_t> pick_a(0, a.size() - 1), pick_b(0, b.size() - 1);
    for (std::size_t n = 0; n < *cfg.pair_budget; ++n) {
      std::size_t i = pick_a(rng);
      if (same_class) {
        std::size_t j = pick_a(rng);
        while (j == i) j = pick_a(rng);
        visit(a[std::min(i, j)], a[std::max(i, j)]);
      } else {
        visit(a[i], b[pick_b(rng)]);
      }
    }
  } else if (same_class) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = i + 1; j < a.size(); ++j) visit(a[i], a[j]);
    }
  } else {
    for (std::size_t x : a) {
      for (std::size_t y : b) visit(x, y);
    }
  }
  best.value = top;
  return best;
}

inline HingeMax real_hinge(const EmbeddingSequence& e, const std::vector<double>& n,
                           const EsmConfig& cfg) {
  auto r = frames_of(e, FrameClass::real);
  return hinge_max(e.values, n, r, r, true, -1.0, cfg.tau_same, cfg, 0);
}

inline HingeMax fake_hinge(const EmbeddingSequence& e, const std::vector<double>& n,
                           const EsmConfig& cfg) {
  auto f = frames_of(e, FrameClass::fake);
  return hinge_max(e.values, n, f, f, true, -1.0, cfg.tau_same, cfg, 1);
}

inline HingeMax diff_hinge(const EmbeddingSequence& e, const std::vector<double>& n,
                           const EsmConfig& cfg) {
  auto r = frames_of(e, FrameClass::real);
  auto f = frames_of(e, FrameClass::fake);
  return hinge_max(e.values, n, r, f, false, 1.0, -cfg.tau_diff, cfg, 2);
}

}  // namespace detail

// max over distinct real-frame pairs of max(0, tau_same - S).
inline double esm_real_loss(const EmbeddingSequence& e, const EsmConfig& cfg) {
  return detail::real_hinge(e, detail::column_norms(e.values), cfg).value;
}

// max over distinct fake-frame pairs of max(0, tau_same - S).
inline double esm_fake_loss(const EmbeddingSequence& e, const EsmConfig& cfg) {
  return detail::fake_hinge(e, detail::column_norms(e.values), cfg).value;
}

// max over (real, fake) pairs of max(0, S - tau_diff).
inline double esm_diff_loss(const EmbeddingSequence& e, const EsmConfig& cfg) {
  return detail::diff_hinge(e, detail::column_norms(e.values), cfg).value;
}

struct EsmResult {
  EsmLoss loss;
  Tensor grad;  // d total / d e.values; only argmax pairs contribute
};

inline EsmResult esm_loss(const EmbeddingSequence& e, const EsmConfig& cfg) {
  if (e.frame_class.size() != e.num_frames()) {
    throw ShapeError("esm_loss: frame_class length does not match embedding frames");
  }
  const auto norms = detail::column_norms(e.values);
  EsmResult r{{}, Tensor(e.values.shape())};
  const auto real = detail::real_hinge(e, norms, cfg);
  const auto fake = detail::fake_hinge(e, norms, cfg);
  const auto diff = detail::diff_hinge(e, norms, cfg);
  r.loss.l_real = real.value;
  r.loss.l_fake = fake.value;
  r.loss.l_diff = diff.value;
  r.loss.total = real.value + fake.value + diff.value;
  if (real.argmax) {
    detail::add_cosine_grad(e.values, norms, real.argmax->first, real.argmax->second, -1.0, r.grad);
  }
  if (fake.argmax) {
    detail::add_cosine_grad(e.values, norms, fake.argmax->first, fake.argmax->second, -1.0, r.grad);
  }
  if (diff.argmax) {
    detail::add_cosine_grad(e.values, norms, diff.argmax->first, diff.argmax->second, 1.0, r.grad);
  }
  return r;
}

struct EsmBatchResult {
  EsmLoss mean;
  std::vector<Tensor> grads;  // per utterance, already scaled by 1/batch
};

// Per-utterance losses averaged over the batch.
inline EsmBatchResult esm_batch_loss(std::span<const EmbeddingSequence> batch,
                                     const EsmConfig& cfg) {
  if (batch.empty()) throw EmptyInputError("esm_batch_loss: empty batch");
  EsmBatchResult out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    auto r = esm_loss(e, cfg);
    out.mean.l_real += inv * r.loss.l_real;
    out.mean.l_fake += inv * r.loss.l_fake;
    out.mean.l_diff += inv * r.loss.l_diff;
    out.mean.total += inv * r.loss.total;
    r.grad *= inv;
    out.grads.push_back(std::move(r.grad));
  }
  return out;
}

}  // namespace tdl::esm
