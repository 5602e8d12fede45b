#pragma once

// Frame-level evaluation. Real frames are the positive class throughout:
// a high score means "real".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdl/data.hpp"
#include "tdl/error.hpp"

namespace tdl::metrics {

using json = nlohmann::json;

struct ScoredFrame {
  double score = 0.0;
  std::uint8_t label = 0;  // 1 = real
};

// Scores and labels of every true (non-padding) frame of a test set.
struct EvalPool {
  std::vector<ScoredFrame> frames;
  std::size_t num_utterances = 0;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
};

// Drops padding: utterance u contributes scores[u][0 .. true_labels).
inline EvalPool pool_predictions(std::span<const std::vector<double>> scores,
                                 std::span<const FrameLabels> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("pool_predictions: " + std::to_string(scores.size()) + " score vectors for " +
                     std::to_string(labels.size()) + " label vectors");
  }
  EvalPool pool;
  pool.num_utterances = scores.size();
  for (std::size_t u = 0; u < scores.size(); ++u) {
    const auto& lab = labels[u];
    if (scores[u].size() < lab.true_labels || lab.authenticity.size() < lab.true_labels) {
      throw ShapeError("pool_predictions: " + lab.sample_id + " has " +
                       std::to_string(scores[u].size()) + " scores for " +
                       std::to_string(lab.true_labels) + " true frames");
    }
    for (std::size_t j = 0; j < lab.true_labels; ++j) {
      pool.frames.push_back({scores[u][j], lab.authenticity[j]});
    }
  }
  return pool;
}

struct EerResult {
  double eer_pct = 0.0;
  double threshold = 0.0;
};

// Thresholds sweep every distinct score plus one just above the maximum.
// FAR(th) = fake frames with score >= th, FRR(th) = real frames with score
// < th. The EER is read off the first crossing by linear interpolation
// between the two bracketing thresholds.
inline EerResult eer(const EvalPool& pool) {
  std::vector<ScoredFrame> f = pool.frames;
  std::size_t n_real = 0;
  for (const auto& x : f) n_real += x.label != 0;
  const std::size_t n_fake = f.size() - n_real;
  if (n_real == 0 || n_fake == 0) {
    throw MetricUndefinedError("EER needs both real and fake frames in the pool");
  }
  std::sort(f.begin(), f.end(), [](const auto& a, const auto& b) { return a.score < b.score; });

  struct Point {
    double threshold, far, frr;
  };
  std::vector<Point> pts;
  std::size_t real_below = 0, fake_below = 0;
  for (std::size_t i = 0; i < f.size();) {
    const double th = f[i].score;
    pts.push_back({th, static_cast<double>(n_fake - fake_below) / static_cast<double>(n_fake),
                   static_cast<double>(real_below) / static_cast<double>(n_real)});
    for (; i < f.size() && f[i].score == th; ++i) {
      (f[i].label ? real_below : fake_below) += 1;
    }
  }
  pts.push_back({std::nextafter(f.back().score, std::numeric_limits<double>::infinity()), 0.0, 1.0});

  for (std::size_t j = 1; j < pts.size(); ++j) {
    const double d_cur = pts[j].far - pts[j].frr;
    if (d_cur > 0.0) continue;
    if (d_cur == 0.0) return {100.0 * pts[j].far, pts[j].threshold};
    const auto& p = pts[j - 1];
    const double d_prev = p.far - p.frr;
    const double alpha = d_prev / (d_prev - d_cur);
    return {100.0 * (p.far + alpha * (pts[j].far - p.far)),
            p.threshold + alpha * (pts[j].threshold - p.threshold)};
  }
  // Unreachable: the sentinel point always has FRR = 1 > FAR = 0.
  throw MetricUndefinedError("EER sweep found no crossing");
}

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Precision/recall are empty when their denominator is zero; F1 is then 0.
struct PrfResult {
  double threshold = 0.5;
  Confusion counts;
  std::optional<double> precision_pct;
  std::optional<double> recall_pct;
  double f1_pct = 0.0;
};

inline double f1_from(std::optional<double> p, std::optional<double> r) {
  if (!p || !r || *p + *r == 0.0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

// Predicted real iff score >= threshold.
inline PrfResult precision_recall_f1(const EvalPool& pool, double threshold = 0.5) {
  if (pool.empty()) throw EmptyInputError("precision_recall_f1: empty pool");
  PrfResult r;
  r.threshold = threshold;
  for (const auto& x : pool.frames) {
    const bool pred = x.score >= threshold;
    if (pred && x.label) ++r.counts.tp;
    else if (pred) ++r.counts.fp;
    else if (x.label) ++r.counts.fn;
    else ++r.counts.tn;
  }
  const auto& c = r.counts;
  if (c.tp + c.fp > 0) r.precision_pct = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) r.recall_pct = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.f1_pct = f1_from(r.precision_pct, r.recall_pct);
  return r;
}

struct MetricsReport {
  double eer_pct = 0.0;
  double eer_threshold = 0.0;
  PrfResult at_threshold;  // the configured decision threshold (default 0.5)
  PrfResult at_eer;        // the EER threshold
  std::size_t num_frames = 0;
  std::size_t num_utterances = 0;
};

inline MetricsReport evaluate(const EvalPool& pool, double threshold = 0.5) {
  MetricsReport rep;
  const auto e = eer(pool);
  rep.eer_pct = e.eer_pct;
  rep.eer_threshold = e.threshold;
  rep.at_threshold = precision_recall_f1(pool, threshold);
  rep.at_eer = precision_recall_f1(pool, e.threshold);
  rep.num_frames = pool.size();
  rep.num_utterances = pool.num_utterances;
  return rep;
}

namespace detail {

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline json counts_json(const Confusion& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}

inline Confusion counts_from(const json& j) {
  return {j.at("tp").get<std::size_t>(), j.at("tn").get<std::size_t>(),
          j.at("fp").get<std::size_t>(), j.at("fn").get<std::size_t>()};
}

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string fmt_pct(const std::optional<double>& v) {
  return v ? fmt("%.2f %%", *v) : std::string("undefined");
}

}  // namespace detail

inline json report_to_json(const MetricsReport& r, const json& metadata = json::object()) {
  json j = {{"eer_pct", r.eer_pct},
            {"eer_threshold", r.eer_threshold},
            {"precision_pct", detail::opt_json(r.at_threshold.precision_pct)},
            {"recall_pct", detail::opt_json(r.at_threshold.recall_pct)},
            {"f1_pct", r.at_threshold.f1_pct},
            {"counts", detail::counts_json(r.at_threshold.counts)},
            {"threshold", r.at_threshold.threshold},
            {"num_frames", r.num_frames},
            {"num_utterances", r.num_utterances},
            {"eer_operating_point",
             {{"threshold", r.at_eer.threshold},
              {"precision_pct", detail::opt_json(r.at_eer.precision_pct)},
              {"recall_pct", detail::opt_json(r.at_eer.recall_pct)},
              {"f1_pct", r.at_eer.f1_pct},
              {"counts", detail::counts_json(r.at_eer.counts)}}}};
  if (!metadata.empty()) j["metadata"] = metadata;
  return j;
}

inline MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  try {
    r.eer_pct = j.at("eer_pct").get<double>();
    r.eer_threshold = j.at("eer_threshold").get<double>();
    r.at_threshold.precision_pct = detail::opt_from(j.at("precision_pct"));
    r.at_threshold.recall_pct = detail::opt_from(j.at("recall_pct"));
    r.at_threshold.f1_pct = j.at("f1_pct").get<double>();
    r.at_threshold.counts = detail::counts_from(j.at("counts"));
    r.at_threshold.threshold = j.at("threshold").get<double>();
    r.num_frames = j.at("num_frames").get<std::size_t>();
    r.num_utterances = j.at("num_utterances").get<std::size_t>();
    const auto& op = j.at("eer_operating_point");
    r.at_eer.threshold = op.at("threshold").get<double>();
    r.at_eer.precision_pct = detail::opt_from(op.at("precision_pct"));
    r.at_eer.recall_pct = detail::opt_from(op.at("recall_pct"));
    r.at_eer.f1_pct = op.at("f1_pct").get<double>();
    r.at_eer.counts = detail::counts_from(op.at("counts"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

struct RenderedReport {
  std::string text;
  std::string json;
};

inline RenderedReport render_report(const MetricsReport& r, const json& metadata = json::object()) {
  using detail::fmt;
  std::string t;
  for (auto it = metadata.begin(); it != metadata.end(); ++it) {
    t += it.key() + ": " + (it->is_string() ? it->get<std::string>() : it->dump()) + "\n";
  }
  t += "utterances   " + std::to_string(r.num_utterances) + "\n";
  t += "frames       " + std::to_string(r.num_frames) + "\n";
  t += "EER          " + fmt("%.2f %%", r.eer_pct) + "  (threshold " + fmt("%.6f", r.eer_threshold) + ")\n";
  auto block = [&](const char* title, const PrfResult& p) {
    t += std::string(title) + " threshold " + fmt("%.6f", p.threshold) + "\n";
    t += "  precision  " + detail::fmt_pct(p.precision_pct) + "\n";
    t += "  recall     " + detail::fmt_pct(p.recall_pct) + "\n";
    t += "  F1         " + fmt("%.2f %%", p.f1_pct) + "\n";
    t += "  TP " + std::to_string(p.counts.tp) + "  TN " + std::to_string(p.counts.tn) + "  FP " +
         std::to_string(p.counts.fp) + "  FN " + std::to_string(p.counts.fn) + "\n";
  };
  block("decision", r.at_threshold);
  block("EER", r.at_eer);
  return {t, report_to_json(r, metadata).dump(2) + "\n"};
}

}  // namespace tdl::metrics
