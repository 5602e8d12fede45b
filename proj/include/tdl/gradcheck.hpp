#pragma once

// Finite-difference checks of every differentiable op and of the assembled
// model. Ops are checked through a random linear functional of their output.

#include <cmath>
#include <string>
#include <vector>

#include "tdl/data.hpp"
#include "tdl/esm.hpp"
#include "tdl/model.hpp"
#include "tdl/nn.hpp"
#include "tdl/rng.hpp"
#include "tdl/tconv.hpp"
#include "tdl/tensor.hpp"

namespace tdl::gradcheck {

enum class Size { tiny, small };

inline Size parse_size(const std::string& s) {
  if (s == "tiny") return Size::tiny;
  if (s == "small") return Size::small;
  throw ConfigError("unknown gradcheck size \"" + s + "\" (expected tiny or small)");
}

inline model::TdlConfig config_for(Size size, std::uint64_t seed) {
  model::TdlConfig c = model::TdlConfig::tiny();
  if (size == Size::small) {
    c.feat_dim = 16;
    c.t_max = 32;
    c.embed_dim = 8;
    c.conv_hidden = 16;
    c.tconv_channels = 16;
    c.label_len = 8;
  }
  c.seed = seed;
  return c;
}

struct Options {
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  // Corrupts the analytic fc.bias gradient so the model check must fail.
  bool inject_fault = false;
};

namespace detail {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

// Entries bounded away from zero, so ReLU never crosses its kink under the step.
inline Tensor off_kink_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    const double m = uniform(rng, 0.1, 1.0);
    v = uniform(rng, 0.0, 1.0) < 0.5 ? -m : m;
  }
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline nn::GradCheckOptions grad_options(const Options& o) {
  nn::GradCheckOptions g;
  g.tolerance = o.tolerance;
  g.seed = o.seed;
  return g;
}

}  // namespace detail

inline nn::GradReport check_conv1d(const Options& o, std::size_t kernel) {
  Rng rng = substream(o.seed, "gradcheck_conv1d", kernel);
  nn::Conv1dLayer layer(3, 4, kernel);
  nn::init_uniform(layer, rng);
  Tensor x = detail::random_tensor({3, 7}, rng);
  const Tensor r = detail::random_tensor({4, 7}, rng);
  const auto g = nn::conv1d_backward(layer, x, r);
  auto f = [&] { return detail::dot(r, nn::conv1d_forward(layer, x)); };
  const std::string p = "conv1d_k" + std::to_string(kernel) + ".";
  const std::vector<nn::GradBlock> blocks{
      {p + "x", &x, &g.x}, {p + "weights", &layer.weights, &g.weights}, {p + "bias", &layer.bias, &g.bias}};
  return nn::grad_check(f, blocks, detail::grad_options(o));
}

inline nn::GradReport check_fc(const Options& o) {
  Rng rng = substream(o.seed, "gradcheck_fc");
  nn::FcLayer layer(6, 5);
  nn::init_uniform(layer, rng);
  Tensor x = detail::random_tensor({6}, rng);
  const Tensor r = detail::random_tensor({5}, rng);
  const auto g = nn::fc_backward(layer, x, r);
  auto f = [&] { return detail::dot(r, nn::fc_forward(layer, x)); };
  const std::vector<nn::GradBlock> blocks{
      {"fc.x", &x, &g.x}, {"fc.weights", &layer.weights, &g.weights}, {"fc.bias", &layer.bias, &g.bias}};
  return nn::grad_check(f, blocks, detail::grad_options(o));
}

inline nn::GradReport check_activations(const Options& o) {
  Rng rng = substream(o.seed, "gradcheck_activations");
  nn::GradReport rep;
  {
    Tensor x = detail::off_kink_tensor({4, 5}, rng);
    const Tensor r = detail::random_tensor({4, 5}, rng);
    const Tensor g = nn::relu_backward(x, r);
    auto f = [&] { return detail::dot(r, nn::relu_forward(x)); };
    const std::vector<nn::GradBlock> b{{"relu.x", &x, &g}};
    rep.merge(nn::grad_check(f, b, detail::grad_options(o)));
  }
  {
    Tensor x = detail::random_tensor({4, 5}, rng, -3.0, 3.0);
    const Tensor r = detail::random_tensor({4, 5}, rng);
    const Tensor g = nn::sigmoid_backward(nn::sigmoid_forward(x), r);
    auto f = [&] { return detail::dot(r, nn::sigmoid_forward(x)); };
    const std::vector<nn::GradBlock> b{{"sigmoid.x", &x, &g}};
    rep.merge(nn::grad_check(f, b, detail::grad_options(o)));
  }
  {
    Tensor x = detail::random_tensor({4, 6}, rng);
    const Tensor r = detail::random_tensor({4, 6}, rng);
    const Tensor g = nn::l2_normalize_backward(x, r);
    auto f = [&] { return detail::dot(r, nn::l2_normalize_forward(x)); };
    const std::vector<nn::GradBlock> b{{"l2_normalize.x", &x, &g}};
    rep.merge(nn::grad_check(f, b, detail::grad_options(o)));
  }
  return rep;
}

inline nn::GradReport check_bce(const Options& o) {
  Rng rng = substream(o.seed, "gradcheck_bce");
  Tensor s = detail::random_tensor({8}, rng, 0.05, 0.95);
  std::vector<std::uint8_t> labels(8);
  std::vector<double> weights(8);
  for (std::size_t i = 0; i < 8; ++i) {
    labels[i] = uniform(rng, 0.0, 1.0) < 0.5 ? 1 : 0;
    weights[i] = uniform(rng, 0.5, 2.0);
  }
  nn::GradReport rep;
  for (bool weighted : {false, true}) {
    const std::span<const double> w = weighted ? std::span<const double>(weights) : std::span<const double>();
    const auto res = nn::bce_loss(s.values(), labels, w);
    const Tensor& g = res.grad;
    auto f = [&] { return nn::bce_loss(s.values(), labels, w).loss; };
    const std::vector<nn::GradBlock> b{{weighted ? "bce_weighted.scores" : "bce.scores", &s, &g}};
    rep.merge(nn::grad_check(f, b, detail::grad_options(o)));
  }
  return rep;
}

inline nn::GradReport check_esm(const Options& o) {
  Rng rng = substream(o.seed, "gradcheck_esm");
  esm::EmbeddingSequence e{detail::random_tensor({4, 10}, rng), {}};
  for (std::size_t t = 0; t < 10; ++t) {
    e.frame_class.push_back(t >= 8 ? esm::FrameClass::padding
                                   : (t % 3 == 1 ? esm::FrameClass::fake : esm::FrameClass::real));
  }
  esm::EsmConfig cfg;
  const auto res = esm::esm_loss(e, cfg);
  auto f = [&] { return esm::esm_loss(e, cfg).loss.total; };
  const std::vector<nn::GradBlock> b{{"esm.embedding", &e.values, &res.grad}};
  return nn::grad_check(f, b, detail::grad_options(o));
}

inline nn::GradReport check_similarity(const Options& o) {
  nn::GradReport rep;
  for (std::size_t k : {3u, 5u}) {
    Rng rng = substream(o.seed, "gradcheck_similarity", k);
    esm::EmbeddingSequence e{detail::random_tensor({4, 9}, rng), {}};
    e.frame_class.assign(9, esm::FrameClass::unlabeled);
    e.frame_class[8] = esm::FrameClass::padding;
    const Tensor r = detail::random_tensor({k, 9}, rng);
    for (bool rectify : {true, false}) {
      const Tensor g = tconv::neighbor_similarity_backward(e, k, r, rectify);
      auto f = [&] { return detail::dot(r, tconv::neighbor_similarity(e, k, rectify).values); };
      const std::string name = "neighbor_similarity_k" + std::to_string(k) + (rectify ? "" : "_raw") + ".e";
      const std::vector<nn::GradBlock> b{{name, &e.values, &g}};
      rep.merge(nn::grad_check(f, b, detail::grad_options(o)));
    }
  }
  return rep;
}

inline nn::GradReport check_tconv(const Options& o) {
  Rng rng = substream(o.seed, "gradcheck_tconv");
  tconv::TconvLayer layer(4, 3);
  nn::init_uniform(layer.conv, rng);
  Tensor x = detail::random_tensor({4, 7}, rng);
  tconv::SimilarityMatrix a{3, detail::random_tensor({3, 7}, rng, 0.0, 1.0)};
  const Tensor r = detail::random_tensor({4, 7}, rng);
  const auto g = tconv::tconv_backward(layer, x, a, r);
  auto f = [&] { return detail::dot(r, tconv::tconv_forward(layer, x, a)); };
  const std::vector<nn::GradBlock> blocks{{"tconv.x", &x, &g.x},
                                          {"tconv.a", &a.values, &g.a},
                                          {"tconv.weights", &layer.conv.weights, &g.weights},
                                          {"tconv.bias", &layer.conv.bias, &g.bias}};
  return nn::grad_check(f, blocks, detail::grad_options(o));
}

// An annotation filling the model's label window with real, fake, real.
inline SegmentAnnotation probe_annotation(const model::TdlConfig& cfg) {
  const double dur = cfg.label_resolution_s * static_cast<double>(cfg.label_len);
  SegmentAnnotation ann{"gradcheck", dur, {}};
  ann.segments = {{0.0, 0.25 * dur, SegmentLabel::real},
                  {0.25 * dur, 0.6 * dur, SegmentLabel::fake},
                  {0.6 * dur, dur, SegmentLabel::real}};
  return ann;
}

// Loss of the full model with respect to every parameter and the input.
inline nn::GradReport check_model(Size size, const Options& o) {
  const auto cfg = config_for(size, o.seed);
  auto m = model::TdlModel::create(cfg);
  Rng rng = substream(o.seed, "gradcheck_model");
  const std::size_t true_frames = cfg.t_max - 1;
  Tensor x = detail::random_tensor({cfg.feat_dim, cfg.t_max}, rng);
  for (std::size_t c = 0; c < cfg.feat_dim; ++c) x(c, cfg.t_max - 1) = 0.0;
  const auto labels = compile_frame_labels(probe_annotation(cfg), cfg.label_resolution_s, cfg.label_len,
                                           cfg.label_setting);

  auto res = model::total_loss(m, x, true_frames, labels);
  if (o.inject_fault) {
    for (double& v : res.grads.back().values()) v += 1e-2;
  }
  auto f = [&] { return model::total_loss(m, x, true_frames, labels).total; };
  std::vector<nn::GradBlock> blocks;
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    blocks.push_back({"model." + params[i].name, params[i].value, &res.grads[i]});
  }
  blocks.push_back({"model.input", &x, &res.grad_x});
  return nn::grad_check(f, blocks, detail::grad_options(o));
}

inline nn::GradReport run(Size size, const Options& o) {
  nn::GradReport rep;
  rep.tolerance = o.tolerance;
  rep.merge(check_conv1d(o, 3));
  rep.merge(check_conv1d(o, 1));
  rep.merge(check_fc(o));
  rep.merge(check_activations(o));
  rep.merge(check_bce(o));
  rep.merge(check_esm(o));
  rep.merge(check_similarity(o));
  rep.merge(check_tconv(o));
  rep.merge(check_model(size, o));
  return rep;
}

}  // namespace tdl::gradcheck
