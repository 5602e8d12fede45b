#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tdl/gradcheck.hpp"
#include "tdl/tconv.hpp"

using namespace tdl;
using namespace tdl::tconv;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

EmbeddingSequence unit_columns(std::mt19937_64& rng, std::size_t dim, std::size_t T) {
  EmbeddingSequence e{random_tensor({dim, T}, rng), std::vector<FrameClass>(T, FrameClass::unlabeled)};
  e.values = nn::l2_normalize_forward(e.values);
  return e;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Similarity, IdenticalColumns) {
  EmbeddingSequence e{Tensor({2, 5}), std::vector<FrameClass>(5, FrameClass::unlabeled)};
  for (std::size_t t = 0; t < 5; ++t) e.values(0, t) = 1.0;
  const auto a = neighbor_similarity(e, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < 5; ++t) {
      const bool border = (i == 0 && t == 0) || (i == 2 && t == 4);
      EXPECT_EQ(a(i, t), border ? 0.0 : 1.0) << i << "," << t;
    }
  }
}

TEST(Similarity, CentreRowAndRange) {
  std::mt19937_64 rng(1);
  auto e = unit_columns(rng, 4, 9);
  e.frame_class[7] = e.frame_class[8] = FrameClass::padding;
  const auto a = neighbor_similarity(e, 5);
  for (std::size_t t = 0; t < 9; ++t) {
    EXPECT_EQ(a(2, t), t < 7 ? 1.0 : 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(a(i, t), 0.0);
      EXPECT_LE(a(i, t), 1.0);
    }
  }
  EXPECT_EQ(a(3, 6), 0.0);  // neighbour 7 is padding
  EXPECT_THROW(neighbor_similarity(e, 4), ConfigError);
}

TEST(Similarity, MatchesDirectCosines) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto e = unit_columns(rng, 5, 11);
    if (trial % 2) e.frame_class[10] = FrameClass::padding;
    const auto a = neighbor_similarity(e, 3);
    EXPECT_LE(max_abs_diff(a.values, oracle::neighbor_similarity(e, 3)), 1e-12);
  }
}

TEST(Tconv, UnitModulationEqualsConvolution) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 1 + trial % 5, T = 1 + trial % 13, k = trial % 3 == 0 ? 1 : 3;
    TconvLayer layer(C, k);
    nn::init_uniform(layer.conv, rng);
    const auto x = random_tensor({C, T}, rng);
    SimilarityMatrix a{k, Tensor({k, T}, 1.0)};
    EXPECT_LE(max_abs_diff(tconv_forward(layer, x, a), nn::conv1d_forward(layer.conv, x)), 1e-12);
  }
}

TEST(Tconv, CentreOnlyModulationIsPointwiseConvolution) {
  std::mt19937_64 rng(4);
  TconvLayer layer(3, 3);
  nn::init_uniform(layer.conv, rng);
  const auto x = random_tensor({3, 6}, rng);
  SimilarityMatrix a{3, Tensor({3, 6})};
  for (std::size_t t = 0; t < 6; ++t) a.values(1, t) = 1.0;
  nn::Conv1dLayer centre(3, 3, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t m = 0; m < 3; ++m) centre.weights(0, c, m) = layer.conv.weights(1, c, m);
  }
  centre.bias = layer.conv.bias;
  EXPECT_LE(max_abs_diff(tconv_forward(layer, x, a), nn::conv1d_forward(centre, x)), 1e-12);
}

TEST(Tconv, MatchesDirectEquations) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    TconvLayer layer(4, trial % 2 ? 3 : 5);
    nn::init_uniform(layer.conv, rng);
    const auto x = random_tensor({4, 8}, rng);
    SimilarityMatrix a{layer.kernel(), random_tensor({layer.kernel(), 8}, rng, 0, 1)};
    EXPECT_LE(max_abs_diff(tconv_forward(layer, x, a), oracle::tconv(layer, x, a.values)), 1e-12);
  }
}

TEST(Tconv, ZeroSimilarityMasksNeighbour) {
  std::mt19937_64 rng(6);
  TconvLayer layer(2, 3);
  nn::init_uniform(layer.conv, rng);
  auto x = random_tensor({2, 5}, rng);
  SimilarityMatrix a{3, random_tensor({3, 5}, rng, 0, 1)};
  a.values(0, 3) = 0.0;  // output 3 ignores x[:, 2] through tap 0
  a.values(1, 2) = 0.0;  // output 2 ignores x[:, 2] through the centre tap
  a.values(2, 1) = 0.0;  // output 1 ignores x[:, 2] through tap 2
  const auto y0 = tconv_forward(layer, x, a);
  x(0, 2) += 5.0;
  x(1, 2) -= 3.0;
  const auto y1 = tconv_forward(layer, x, a);
  for (std::size_t m = 0; m < 2; ++m) {
    for (std::size_t t : {1u, 2u, 3u}) EXPECT_EQ(y0(m, t), y1(m, t));
  }
}

TEST(Tconv, LinearInInputForFixedSimilarity) {
  std::mt19937_64 rng(7);
  TconvLayer layer(3, 3);
  nn::init_uniform(layer.conv, rng);
  const auto x1 = random_tensor({3, 6}, rng), x2 = random_tensor({3, 6}, rng);
  SimilarityMatrix a{3, random_tensor({3, 6}, rng, 0, 1)};
  const double al = 0.3, be = -1.7;
  Tensor mix({3, 6});
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = al * x1[i] + be * x2[i];
  const auto y = tconv_forward(layer, mix, a);
  const auto y1 = tconv_forward(layer, x1, a), y2 = tconv_forward(layer, x2, a);
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t t = 0; t < 6; ++t) {
      const double b = layer.conv.bias[m];
      EXPECT_NEAR(y(m, t) - b, al * (y1(m, t) - b) + be * (y2(m, t) - b), 1e-12);
    }
  }
}

TEST(Tconv, BackwardZeroAndReductionToConv) {
  std::mt19937_64 rng(8);
  TconvLayer layer(3, 3);
  nn::init_uniform(layer.conv, rng);
  const auto x = random_tensor({3, 7}, rng);
  SimilarityMatrix ones{3, Tensor({3, 7}, 1.0)};
  const auto z = tconv_backward(layer, x, ones, Tensor({3, 7}));
  EXPECT_EQ(z.x, Tensor({3, 7}));
  EXPECT_EQ(z.a, Tensor({3, 7}));
  const auto go = random_tensor({3, 7}, rng);
  const auto g = tconv_backward(layer, x, ones, go);
  const auto c = nn::conv1d_backward(layer.conv, x, go);
  EXPECT_LE(max_abs_diff(g.x, c.x), 1e-12);
  EXPECT_LE(max_abs_diff(g.weights, c.weights), 1e-12);
  EXPECT_LE(max_abs_diff(g.bias, c.bias), 1e-12);
}

TEST(Tconv, FullChainMatchesFiniteDifferences) {
  // e -> a -> tconv -> random linear functional, D=6, T=9, k=3.
  std::mt19937_64 rng(9);
  TconvLayer layer(6, 3);
  nn::init_uniform(layer.conv, rng);
  Tensor x = random_tensor({6, 9}, rng);
  EmbeddingSequence e{random_tensor({4, 9}, rng), std::vector<FrameClass>(9, FrameClass::unlabeled)};
  const auto r = random_tensor({6, 9}, rng);
  auto objective = [&] {
    const auto a = neighbor_similarity(e, 3);
    const auto y = tconv_forward(layer, x, a);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  const auto a = neighbor_similarity(e, 3);
  const auto g = tconv_backward(layer, x, a, r);
  const auto ge = neighbor_similarity_backward(e, 3, g.a);
  const std::vector<nn::GradBlock> blocks{{"e", &e.values, &ge}, {"x", &x, &g.x},
                                          {"weights", &layer.conv.weights, &g.weights}};
  nn::GradCheckOptions o;
  o.tolerance = 1e-4;
  const auto rep = nn::grad_check(objective, blocks, o);
  for (const auto& en : rep.entries) EXPECT_TRUE(en.passed) << en.name << " " << en.max_rel_error;
}

TEST(Tconv, OpGradientChecks) {
  gradcheck::Options o;
  o.tolerance = 1e-6;
  auto rep = gradcheck::check_tconv(o);
  rep.merge(gradcheck::check_similarity(o));
  for (const auto& en : rep.entries) EXPECT_TRUE(en.passed) << en.name << " " << en.max_rel_error;
}

TEST(Tconv, ShapeErrors) {
  TconvLayer layer(3, 3);
  SimilarityMatrix a{3, Tensor({3, 5})};
  EXPECT_THROW(tconv_forward(layer, Tensor({3, 6}), a), ShapeError);
  EXPECT_THROW(tconv_forward(layer, Tensor({2, 5}), a), ShapeError);
  EXPECT_THROW(TconvLayer(nn::Conv1dLayer(2, 3, 3)), ConfigError);
}
