#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tdl/metrics.hpp"

using namespace tdl;
using namespace tdl::metrics;

namespace {

EvalPool random_pool(std::mt19937_64& rng, std::size_t n, bool coarse) {
  EvalPool p;
  p.num_utterances = 1;
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = i == 0 ? 1 : (i == 1 ? 0 : static_cast<std::uint8_t>(u(rng) < 0.5));
    double s = u(rng) + (label ? 0.3 : 0.0);
    if (coarse) s = std::round(s * 10) / 10;  // forces tied scores
    p.frames.push_back({s, label});
  }
  return p;
}

FrameLabels labels_of(std::vector<std::uint8_t> auth, std::size_t true_labels) {
  FrameLabels l;
  l.authenticity = auth;
  l.labels = auth;
  l.true_labels = true_labels;
  return l;
}

}  // namespace

TEST(Eer, PerfectSeparationIsZero) {
  EvalPool p;
  p.frames = {{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
  EXPECT_EQ(eer(p).eer_pct, 0.0);
}

TEST(Eer, FullyInvertedIsHundred) {
  EvalPool p;
  p.frames = {{0.1, 1}, {0.2, 1}, {0.8, 0}, {0.9, 0}};
  EXPECT_EQ(eer(p).eer_pct, 100.0);
}

TEST(Eer, CoinFlipLabelsOnTiedScoresNearFifty) {
  std::mt19937_64 rng(1);
  EvalPool p;
  for (int i = 0; i < 20000; ++i) p.frames.push_back({0.5, static_cast<std::uint8_t>(rng() & 1)});
  EXPECT_NEAR(eer(p).eer_pct, 50.0, 1.0);
}

TEST(Eer, SingleClassIsUndefined) {
  EvalPool p;
  p.frames = {{0.3, 1}, {0.4, 1}};
  EXPECT_THROW(eer(p), MetricUndefinedError);
}

TEST(Eer, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 300; ++i) {
    const auto n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    const auto p = random_pool(rng, n, i % 3 == 0);
    ASSERT_NEAR(eer(p).eer_pct, oracle::eer_pct(p.frames), 1e-9) << "case " << i;
  }
}

TEST(Eer, InvariantUnderMonotoneMapAndFlip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    auto p = random_pool(rng, 80, false);
    const double base = eer(p).eer_pct;
    auto q = p;
    for (auto& f : q.frames) f.score = std::exp(3 * f.score) - 7;
    EXPECT_NEAR(eer(q).eer_pct, base, 1e-9);
    auto r = p;
    for (auto& f : r.frames) {
      f.score = -f.score;
      f.label = 1 - f.label;
    }
    EXPECT_NEAR(eer(r).eer_pct, base, 1e-9);
    auto s = p;
    std::shuffle(s.frames.begin(), s.frames.end(), rng);
    EXPECT_EQ(eer(s).eer_pct, base);
  }
}

TEST(Prf, PerfectAndAllReal) {
  EvalPool p;
  p.frames = {{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
  auto r = precision_recall_f1(p);
  EXPECT_EQ(*r.precision_pct, 100.0);
  EXPECT_EQ(*r.recall_pct, 100.0);
  EXPECT_EQ(r.f1_pct, 100.0);
  for (auto& f : p.frames) f.score = 0.9;
  r = precision_recall_f1(p);
  EXPECT_EQ(*r.precision_pct, 50.0);
  EXPECT_EQ(*r.recall_pct, 100.0);
  EXPECT_NEAR(r.f1_pct, 200.0 / 3.0, 1e-12);
}

TEST(Prf, UndefinedPrecisionGivesZeroF1) {
  EvalPool p;
  p.frames = {{0.1, 1}, {0.2, 0}};
  const auto r = precision_recall_f1(p);
  EXPECT_FALSE(r.precision_pct.has_value());
  EXPECT_EQ(*r.recall_pct, 0.0);
  EXPECT_EQ(r.f1_pct, 0.0);
  EXPECT_THROW(precision_recall_f1(EvalPool{}), EmptyInputError);
}

TEST(Prf, MatchesConfusionRecount) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_pool(rng, 120, false);
    const auto r = precision_recall_f1(p, 0.5);
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (const auto& f : p.frames) {
      if (f.score >= 0.5) (f.label ? tp : fp)++;
      else (f.label ? fn : tn)++;
    }
    EXPECT_EQ(r.counts, (Confusion{tp, tn, fp, fn}));
    EXPECT_EQ(r.counts.total(), p.size());
    if (r.precision_pct && r.recall_pct) {
      const double P = *r.precision_pct, R = *r.recall_pct;
      EXPECT_NEAR(r.f1_pct, 2 * P * R / (P + R), 1e-9);
    }
  }
}

TEST(Pool, DropsPaddingAndChecksLengths) {
  std::vector<std::vector<double>> scores{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7}, {0.9}};
  std::vector<FrameLabels> labels{labels_of({1, 0, 1, 0}, 2), labels_of({0, 0, 1}, 3), labels_of({1}, 1)};
  const auto p = pool_predictions(scores, labels);
  ASSERT_EQ(p.size(), 6u);
  EXPECT_EQ(p.num_utterances, 3u);
  const std::vector<std::pair<double, int>> expect{{0.1, 1}, {0.2, 0}, {0.5, 0}, {0.6, 0}, {0.7, 1}, {0.9, 1}};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(p.frames[i].score, expect[i].first);
    EXPECT_EQ(p.frames[i].label, expect[i].second);
  }
  std::vector<std::vector<double>> short_scores{{0.1}, {0.5, 0.6, 0.7}, {0.9}};
  EXPECT_THROW(pool_predictions(short_scores, labels), ShapeError);
  std::vector<std::vector<double>> reordered{scores[2], scores[0], scores[1]};
  std::vector<FrameLabels> relabels{labels[2], labels[0], labels[1]};
  EXPECT_EQ(pool_predictions(reordered, relabels).size(), 6u);
}

TEST(Report, JsonRoundTripAndDeterminism) {
  std::mt19937_64 rng(5);
  const auto p = random_pool(rng, 100, false);
  const auto rep = evaluate(p, 0.5);
  const json meta = {{"run", "unit"}};
  const auto a = render_report(rep, meta), b = render_report(rep, meta);
  EXPECT_EQ(a.json, b.json);
  EXPECT_EQ(a.text, b.text);
  const auto j = json::parse(a.json);
  for (const char* key : {"eer_pct", "eer_threshold", "precision_pct", "recall_pct", "f1_pct", "counts",
                          "threshold", "num_frames", "num_utterances"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  for (const char* key : {"tp", "tn", "fp", "fn"}) EXPECT_TRUE(j["counts"].contains(key));
  const auto back = report_from_json(j);
  EXPECT_EQ(back.eer_pct, rep.eer_pct);
  EXPECT_EQ(back.eer_threshold, rep.eer_threshold);
  EXPECT_EQ(back.at_threshold.counts, rep.at_threshold.counts);
  EXPECT_EQ(back.at_threshold.precision_pct, rep.at_threshold.precision_pct);
  EXPECT_EQ(back.at_eer.f1_pct, rep.at_eer.f1_pct);
  EXPECT_EQ(back.num_frames, 100u);
}

TEST(Report, UndefinedPrecisionSerialisesAsNull) {
  EvalPool p;
  p.frames = {{0.1, 1}, {0.2, 0}};
  const auto j = report_to_json(evaluate(p, 0.5));
  EXPECT_TRUE(j["precision_pct"].is_null());
  EXPECT_FALSE(report_from_json(j).at_threshold.precision_pct.has_value());
}
