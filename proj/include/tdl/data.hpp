#pragma once

// Feature files, segment annotations, frame labels, padding, synthetic
// corpora and corpus statistics.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdl/error.hpp"
#include "tdl/rng.hpp"
#include "tdl/tensor.hpp"

namespace tdl {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// FeatureSequence and the TDLF binary format
// ---------------------------------------------------------------------------

// Front-end feature matrix, channel-contiguous: values[c * num_frames + t].
struct FeatureSequence {
  std::string sample_id;
  std::uint32_t dim = 0;
  std::uint32_t num_frames = 0;
  std::uint32_t true_frames = 0;
  std::vector<float> values;

  float at(std::size_t c, std::size_t t) const { return values[c * num_frames + t]; }
  float& at(std::size_t c, std::size_t t) { return values[c * num_frames + t]; }

  void validate() const {
    if (dim == 0 || num_frames == 0) {
      throw ValidationError(sample_id + ": dim and num_frames must be positive");
    }
    if (true_frames == 0 || true_frames > num_frames) {
      throw ValidationError(sample_id + ": true_frames must be in [1, num_frames]");
    }
    if (values.size() != std::size_t{dim} * num_frames) {
      throw ValidationError(sample_id + ": value count does not match dim x num_frames");
    }
    for (std::size_t c = 0; c < dim; ++c) {
      for (std::size_t t = 0; t < num_frames; ++t) {
        float v = at(c, t);
        if (!std::isfinite(v)) {
          throw ValidationError(sample_id + ": non-finite feature value");
        }
        if (t >= true_frames && v != 0.0f) {
          throw ValidationError(sample_id + ": padding column " + std::to_string(t) +
                                " is not zero");
        }
      }
    }
  }

  // Bitwise comparison of the payload (distinguishes -0.0f from 0.0f).
  friend bool operator==(const FeatureSequence& a, const FeatureSequence& b) {
    return a.sample_id == b.sample_id && a.dim == b.dim &&
           a.num_frames == b.num_frames && a.true_frames == b.true_frames &&
           a.values.size() == b.values.size() &&
           (a.values.empty() ||
            std::memcmp(a.values.data(), b.values.data(),
                        a.values.size() * sizeof(float)) == 0);
  }
};

inline Tensor to_tensor(const FeatureSequence& seq) {
  Tensor x = Tensor::matrix(seq.dim, seq.num_frames);
  for (std::size_t i = 0; i < seq.values.size(); ++i) x[i] = seq.values[i];
  return x;
}

namespace detail {

inline constexpr std::array<char, 4> kFeatureMagic{'T', 'D', 'L', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
// Upper bound on D*T accepted from a file header (1 GiB of f32).
inline constexpr std::uint64_t kMaxFeatureValues = std::uint64_t{1} << 28;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_feature_bytes(const FeatureSequence& seq) {
  seq.validate();
  std::string out;
  out.reserve(20 + seq.values.size() * 4);
  out.append(detail::kFeatureMagic.data(), 4);
  detail::put_u32(out, detail::kFeatureVersion);
  detail::put_u32(out, seq.dim);
  detail::put_u32(out, seq.num_frames);
  detail::put_u32(out, seq.true_frames);
  for (float v : seq.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline FeatureSequence decode_feature_bytes(const std::string& bytes,
                                            std::string sample_id = {}) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 20 || std::memcmp(p, detail::kFeatureMagic.data(), 4) != 0) {
    throw FormatError("not a TDLF feature file (bad magic or short header)");
  }
  std::uint32_t version = detail::get_u32(p + 4);
  if (version != detail::kFeatureVersion) {
    throw FormatError("unsupported TDLF version " + std::to_string(version));
  }
  FeatureSequence seq;
  seq.sample_id = std::move(sample_id);
  seq.dim = detail::get_u32(p + 8);
  seq.num_frames = detail::get_u32(p + 12);
  seq.true_frames = detail::get_u32(p + 16);
  std::uint64_t n = std::uint64_t{seq.dim} * seq.num_frames;
  if (n > detail::kMaxFeatureValues) {
    throw ValidationError("TDLF dimensions overflow the accepted payload size");
  }
  if (bytes.size() != 20 + n * 4) {
    throw FormatError("TDLF payload size mismatch: expected " + std::to_string(n * 4) +
                      " bytes, found " + std::to_string(bytes.size() - 20));
  }
  seq.values.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    seq.values[i] = std::bit_cast<float>(detail::get_u32(p + 20 + 4 * i));
  }
  seq.validate();
  return seq;
}

inline void write_feature_file(const FeatureSequence& seq, const fs::path& path) {
  detail::write_file_bytes(path, encode_feature_bytes(seq));
}

// The sample id is taken from the file stem; the format does not store it.
inline FeatureSequence load_feature_file(const fs::path& path) {
  return decode_feature_bytes(detail::read_file_bytes(path), path.stem().string());
}

inline FeatureSequence pad_features(const FeatureSequence& seq, std::uint32_t target_frames) {
  if (target_frames < seq.true_frames) {
    throw SizeError(seq.sample_id + ": cannot pad to " + std::to_string(target_frames) +
                    " frames, below true length " + std::to_string(seq.true_frames));
  }
  FeatureSequence out;
  out.sample_id = seq.sample_id;
  out.dim = seq.dim;
  out.num_frames = target_frames;
  out.true_frames = seq.true_frames;
  out.values.assign(std::size_t{seq.dim} * target_frames, 0.0f);
  for (std::size_t c = 0; c < seq.dim; ++c) {
    for (std::size_t t = 0; t < seq.true_frames; ++t) out.at(c, t) = seq.at(c, t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment annotations
// ---------------------------------------------------------------------------

enum class SegmentLabel { real, fake };

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
  SegmentLabel label = SegmentLabel::real;
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentAnnotation {
  std::string sample_id;
  double duration_s = 0.0;
  std::vector<Segment> segments;

  // Segments must be sorted, non-overlapping and tile [0, duration_s].
  void validate() const {
    constexpr double tol = 1e-9;
    if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
      throw AnnotationError(sample_id + ": duration must be positive and finite");
    }
    if (segments.empty()) throw AnnotationError(sample_id + ": no segments");
    double cursor = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      if (!(s.start_s < s.end_s)) {
        throw AnnotationError(sample_id + ": segment " + std::to_string(i) +
                              " has start >= end");
      }
      if (s.start_s < cursor - tol) {
        throw AnnotationError(sample_id + ": segment " + std::to_string(i) + " overlaps");
      }
      if (s.start_s > cursor + tol) {
        throw AnnotationError(sample_id + ": gap before segment " + std::to_string(i));
      }
      cursor = s.end_s;
    }
    if (std::abs(cursor - duration_s) > tol) {
      throw AnnotationError(sample_id + ": segments do not cover the full duration");
    }
  }

  friend bool operator==(const SegmentAnnotation&, const SegmentAnnotation&) = default;
};

inline json annotation_to_json(const SegmentAnnotation& ann) {
  json segs = json::array();
  for (const auto& s : ann.segments) {
    segs.push_back({{"start_s", s.start_s},
                    {"end_s", s.end_s},
                    {"label", s.label == SegmentLabel::real ? "real" : "fake"}});
  }
  return {{"sample_id", ann.sample_id}, {"duration_s", ann.duration_s}, {"segments", segs}};
}

inline SegmentAnnotation annotation_from_json(const json& j) {
  SegmentAnnotation ann;
  try {
    ann.sample_id = j.at("sample_id").get<std::string>();
    ann.duration_s = j.at("duration_s").get<double>();
    for (const auto& s : j.at("segments")) {
      Segment seg;
      seg.start_s = s.at("start_s").get<double>();
      seg.end_s = s.at("end_s").get<double>();
      auto label = s.at("label").get<std::string>();
      if (label == "real") {
        seg.label = SegmentLabel::real;
      } else if (label == "fake") {
        seg.label = SegmentLabel::fake;
      } else {
        throw AnnotationError("segment label must be \"real\" or \"fake\", got \"" + label + "\"");
      }
      ann.segments.push_back(seg);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed annotation JSON: ") + e.what());
  }
  ann.validate();
  return ann;
}

inline void write_annotation_file(const SegmentAnnotation& ann, const fs::path& path) {
  ann.validate();
  detail::write_file_bytes(path, annotation_to_json(ann).dump(2) + "\n");
}

inline SegmentAnnotation load_annotation_file(const fs::path& path) {
  json j;
  try {
    j = json::parse(detail::read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return annotation_from_json(j);
}

// ---------------------------------------------------------------------------
// Frame labels
// ---------------------------------------------------------------------------

enum class LabelSetting { real1_fake0, real0_fake1, boundary1 };

inline std::string to_string(LabelSetting s) {
  switch (s) {
    case LabelSetting::real1_fake0: return "real1_fake0";
    case LabelSetting::real0_fake1: return "real0_fake1";
    case LabelSetting::boundary1: return "boundary1";
  }
  return "?";
}

inline LabelSetting parse_label_setting(const std::string& s) {
  if (s == "real1_fake0") return LabelSetting::real1_fake0;
  if (s == "real0_fake1") return LabelSetting::real0_fake1;
  if (s == "boundary1") return LabelSetting::boundary1;
  throw ConfigError("unknown label setting \"" + s + "\"");
}

inline constexpr double kDefaultLabelResolution = 0.16;

struct FrameLabels {
  std::string sample_id;
  double resolution_s = kDefaultLabelResolution;
  LabelSetting setting = LabelSetting::real1_fake0;
  std::size_t true_labels = 0;
  // Training targets coded per `setting`; zero on padding.
  std::vector<std::uint8_t> labels;
  // 1 = real, 0 = fake, independent of `setting`; zero on padding.
  std::vector<std::uint8_t> authenticity;

  std::size_t padded_len() const { return labels.size(); }
};

inline std::size_t num_label_frames(double duration_s, double resolution_s) {
  return static_cast<std::size_t>(std::ceil(duration_s / resolution_s - 1e-9));
}

// Majority occupancy per frame span [j*r, min((j+1)*r, duration)); exact
// ties go to fake.
inline FrameLabels compile_frame_labels(const SegmentAnnotation& ann, double resolution_s,
                                        std::size_t padded_len,
                                        LabelSetting setting = LabelSetting::real1_fake0) {
  ann.validate();
  if (!(resolution_s > 0.0)) throw ConfigError("label resolution must be positive");
  const std::size_t n = num_label_frames(ann.duration_s, resolution_s);
  if (padded_len < n) {
    throw SizeError(ann.sample_id + ": padded label length " + std::to_string(padded_len) +
                    " is shorter than " + std::to_string(n) + " true frames");
  }
  FrameLabels out;
  out.sample_id = ann.sample_id;
  out.resolution_s = resolution_s;
  out.setting = setting;
  out.true_labels = n;
  out.labels.assign(padded_len, 0);
  out.authenticity.assign(padded_len, 0);

  const double tie_tol = 1e-9 * resolution_s;
  std::size_t seg = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double lo = static_cast<double>(j) * resolution_s;
    const double hi = std::min(static_cast<double>(j + 1) * resolution_s, ann.duration_s);
    while (seg < ann.segments.size() && ann.segments[seg].end_s <= lo) ++seg;
    double real = 0.0, fake = 0.0;
    for (std::size_t s = seg; s < ann.segments.size() && ann.segments[s].start_s < hi; ++s) {
      double overlap = std::min(hi, ann.segments[s].end_s) - std::max(lo, ann.segments[s].start_s);
      if (overlap <= 0.0) continue;
      (ann.segments[s].label == SegmentLabel::real ? real : fake) += overlap;
    }
    out.authenticity[j] = real > fake + tie_tol ? 1 : 0;
  }

  switch (setting) {
    case LabelSetting::real1_fake0:
      for (std::size_t j = 0; j < n; ++j) out.labels[j] = out.authenticity[j];
      break;
    case LabelSetting::real0_fake1:
      for (std::size_t j = 0; j < n; ++j) out.labels[j] = 1 - out.authenticity[j];
      break;
    case LabelSetting::boundary1:
      // Four frames per transition: two on each side of the change point.
      for (std::size_t j = 1; j < n; ++j) {
        if (out.authenticity[j] == out.authenticity[j - 1]) continue;
        std::size_t first = j >= 2 ? j - 2 : 0;
        std::size_t last = std::min(j + 1, n - 1);
        for (std::size_t b = first; b <= last; ++b) out.labels[b] = 1;
      }
      break;
  }
  return out;
}

// Per-frame BCE weights: `boundary_weight` on boundary frames under
// boundary1, 1 everywhere else.
inline std::vector<double> label_weights(const FrameLabels& labels, double boundary_weight = 100.0) {
  std::vector<double> w(labels.padded_len(), 1.0);
  if (labels.setting == LabelSetting::boundary1) {
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (labels.labels[j]) w[j] = boundary_weight;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Corpus statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
  double frame_fake_pct = 0.0;
  double utterance_fake_pct = 0.0;
  std::size_t num_utterances = 0;
  std::size_t num_frames = 0;
  std::size_t num_fake_frames = 0;
  std::size_t num_fake_utterances = 0;
};

inline DatasetStats dataset_stats(const std::vector<SegmentAnnotation>& anns,
                                  double resolution_s = kDefaultLabelResolution) {
  if (anns.empty()) throw EmptyInputError("dataset_stats: no annotations");
  DatasetStats st;
  for (const auto& ann : anns) {
    auto labels = compile_frame_labels(ann, resolution_s,
                                       num_label_frames(ann.duration_s, resolution_s));
    std::size_t fake = 0;
    for (std::size_t j = 0; j < labels.true_labels; ++j) fake += labels.authenticity[j] == 0;
    st.num_frames += labels.true_labels;
    st.num_fake_frames += fake;
    st.num_fake_utterances += fake > 0;
  }
  st.num_utterances = anns.size();
  st.frame_fake_pct = 100.0 * static_cast<double>(st.num_fake_frames) /
                      static_cast<double>(st.num_frames);
  st.utterance_fake_pct = 100.0 * static_cast<double>(st.num_fake_utterances) /
                          static_cast<double>(st.num_utterances);
  return st;
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

// Per-frame Gaussian features: real frames ~ N(0, s^2 I), fake frames
// ~ N(separation * u, s^2 I) with u = (1, ..., 1) / sqrt(dim).
struct SynthSpec {
  std::uint32_t dim = 16;
  double frame_rate_hz = 25.0;
  std::size_t num_utterances = 100;
  double min_duration_s = 1.0;
  double max_duration_s = 2.56;
  int min_fake_segments = 0;
  int max_fake_segments = 2;
  // Mean fraction of a fake-containing utterance covered by fake speech.
  double fake_fraction = 0.5;
  double fake_fraction_jitter = 0.2;
  double separation = 2.0;
  double noise_std = 1.0;
  // Segment boundaries are snapped to this grid; 0 means one feature frame.
  // The default keeps every boundary on the 0.16 s label grid.
  double boundary_quantum_s = kDefaultLabelResolution;
  // Pad every utterance to this many frames; 0 leaves them unpadded.
  std::uint32_t max_frames = 64;

  double quantum() const {
    return boundary_quantum_s > 0.0 ? boundary_quantum_s : 1.0 / frame_rate_hz;
  }

  void validate() const {
    if (dim == 0) throw ConfigError("synth: dim must be positive");
    if (!(frame_rate_hz > 0.0)) throw ConfigError("synth: frame_rate_hz must be positive");
    if (num_utterances == 0) throw ConfigError("synth: num_utterances must be positive");
    if (!(min_duration_s > 0.0) || max_duration_s < min_duration_s) {
      throw ConfigError("synth: need 0 < min_duration_s <= max_duration_s");
    }
    if (min_fake_segments < 0 || max_fake_segments < min_fake_segments) {
      throw ConfigError("synth: need 0 <= min_fake_segments <= max_fake_segments");
    }
    if (!(fake_fraction > 0.0 && fake_fraction < 1.0)) {
      throw ConfigError("synth: fake_fraction must lie in (0, 1)");
    }
    if (fake_fraction_jitter < 0.0) throw ConfigError("synth: negative fake_fraction_jitter");
    if (noise_std < 0.0) throw ConfigError("synth: negative noise_std");
    if (separation <= 0.0 && noise_std == 0.0) {
      throw ConfigError("synth: non-positive separation with zero noise is degenerate");
    }
    if (max_frames > 0 &&
        num_label_frames(max_duration_s, 1.0 / frame_rate_hz) > max_frames) {
      throw ConfigError("synth: max_duration_s does not fit in max_frames");
    }
  }
};

inline json synth_spec_to_json(const SynthSpec& s) {
  return {{"dim", s.dim},
          {"frame_rate_hz", s.frame_rate_hz},
          {"num_utterances", s.num_utterances},
          {"min_duration_s", s.min_duration_s},
          {"max_duration_s", s.max_duration_s},
          {"min_fake_segments", s.min_fake_segments},
          {"max_fake_segments", s.max_fake_segments},
          {"fake_fraction", s.fake_fraction},
          {"fake_fraction_jitter", s.fake_fraction_jitter},
          {"separation", s.separation},
          {"noise_std", s.noise_std},
          {"boundary_quantum_s", s.boundary_quantum_s},
          {"max_frames", s.max_frames}};
}

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  const json defaults = synth_spec_to_json(s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) {
      throw ConfigError("synth spec: unknown key \"" + it.key() + "\"");
    }
  }
  try {
    s.dim = j.value("dim", s.dim);
    s.frame_rate_hz = j.value("frame_rate_hz", s.frame_rate_hz);
    s.num_utterances = j.value("num_utterances", s.num_utterances);
    s.min_duration_s = j.value("min_duration_s", s.min_duration_s);
    s.max_duration_s = j.value("max_duration_s", s.max_duration_s);
    s.min_fake_segments = j.value("min_fake_segments", s.min_fake_segments);
    s.max_fake_segments = j.value("max_fake_segments", s.max_fake_segments);
    s.fake_fraction = j.value("fake_fraction", s.fake_fraction);
    s.fake_fraction_jitter = j.value("fake_fraction_jitter", s.fake_fraction_jitter);
    s.separation = j.value("separation", s.separation);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.boundary_quantum_s = j.value("boundary_quantum_s", s.boundary_quantum_s);
    s.max_frames = j.value("max_frames", s.max_frames);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

struct Dataset {
  std::vector<FeatureSequence> features;
  std::vector<SegmentAnnotation> annotations;
  std::size_t size() const { return features.size(); }
};

namespace detail {

inline std::string synth_id(std::size_t i) {
  std::ostringstream os;
  os << "synth_" << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

inline SegmentAnnotation synth_annotation(const SynthSpec& spec, Rng& rng, std::string id) {
  const double q = spec.quantum();
  double duration = uniform(rng, spec.min_duration_s, spec.max_duration_s);
  duration = std::max(q, std::round(duration / q) * q);
  duration = std::min(duration, std::floor(spec.max_duration_s / q + 1e-9) * q);

  int n_fake = std::uniform_int_distribution<int>(spec.min_fake_segments,
                                                  spec.max_fake_segments)(rng);
  SegmentAnnotation ann;
  ann.sample_id = std::move(id);
  ann.duration_s = duration;
  if (n_fake == 0) {
    ann.segments.push_back({0.0, duration, SegmentLabel::real});
    return ann;
  }
  double frac = spec.fake_fraction + spec.fake_fraction_jitter * uniform(rng, -1.0, 1.0);
  frac = std::clamp(frac, 0.05, 0.95);
  const double fake_total = frac * duration;
  const double real_total = duration - fake_total;

  auto split = [&rng](int parts, double total, double lo, double hi) {
    std::vector<double> w(static_cast<std::size_t>(parts));
    double sum = 0.0;
    for (double& v : w) sum += (v = uniform(rng, lo, hi));
    for (double& v : w) v = v / sum * total;
    return w;
  };
  auto fake_parts = split(n_fake, fake_total, 0.5, 1.5);
  auto real_parts = split(n_fake + 1, real_total, 0.0, 1.0);

  // real, fake, real, ..., fake, real; boundaries snapped to the grid.
  std::vector<std::pair<double, SegmentLabel>> pieces;
  for (int i = 0; i < n_fake; ++i) {
    pieces.emplace_back(real_parts[static_cast<std::size_t>(i)], SegmentLabel::real);
    pieces.emplace_back(fake_parts[static_cast<std::size_t>(i)], SegmentLabel::fake);
  }
  pieces.emplace_back(real_parts.back(), SegmentLabel::real);

  double cursor = 0.0, raw = 0.0;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    raw += pieces[i].first;
    double end = i + 1 == pieces.size() ? duration : std::round(raw / q) * q;
    end = std::clamp(end, cursor, duration);
    if (end - cursor < 0.5 * q) continue;
    if (!ann.segments.empty() && ann.segments.back().label == pieces[i].second) {
      ann.segments.back().end_s = end;
    } else {
      ann.segments.push_back({cursor, end, pieces[i].second});
    }
    cursor = end;
  }
  if (ann.segments.empty()) {
    ann.segments.push_back({0.0, duration, SegmentLabel::real});
  } else {
    ann.segments.back().end_s = duration;
  }
  return ann;
}

}  // namespace detail

// Utterance i draws from its own sub-stream, so the result is a pure
// function of (spec, seed) and independent of generation order.
inline Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.features.reserve(spec.num_utterances);
  ds.annotations.reserve(spec.num_utterances);
  const double shift = spec.separation / std::sqrt(static_cast<double>(spec.dim));
  for (std::size_t i = 0; i < spec.num_utterances; ++i) {
    Rng rng = substream(seed, "data", i);
    SegmentAnnotation ann = detail::synth_annotation(spec, rng, detail::synth_id(i));
    const std::size_t true_frames = num_label_frames(ann.duration_s, 1.0 / spec.frame_rate_hz);
    const auto frame_class = compile_frame_labels(ann, 1.0 / spec.frame_rate_hz, true_frames);

    FeatureSequence seq;
    seq.sample_id = ann.sample_id;
    seq.dim = spec.dim;
    seq.true_frames = static_cast<std::uint32_t>(true_frames);
    seq.num_frames = std::max<std::uint32_t>(seq.true_frames, spec.max_frames);
    seq.values.assign(std::size_t{seq.dim} * seq.num_frames, 0.0f);
    for (std::size_t t = 0; t < true_frames; ++t) {
      const double mean = frame_class.authenticity[t] ? 0.0 : shift;
      for (std::size_t c = 0; c < spec.dim; ++c) {
        seq.at(c, t) = static_cast<float>(mean + spec.noise_std * normal(rng));
      }
    }
    ds.features.push_back(std::move(seq));
    ds.annotations.push_back(std::move(ann));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset directories: manifest.json + features/*.tdlf + annotations/*.json
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::string features;     // relative to the dataset directory
  std::string annotations;  // relative to the dataset directory
};

inline constexpr const char* kManifestName = "manifest.json";

inline std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  if (!fs::exists(path)) throw IoError("no " + std::string(kManifestName) + " in " + dir.string());
  std::vector<ManifestEntry> entries;
  try {
    json j = json::parse(detail::read_file_bytes(path));
    for (const auto& s : j.at("samples")) {
      entries.push_back({s.at("id").get<std::string>(), s.at("features").get<std::string>(),
                         s.at("annotations").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return entries;
}

inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  fs::create_directories(dir / "annotations", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json samples = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& id = ds.features[i].sample_id;
    const std::string feat = "features/" + id + ".tdlf";
    const std::string ann = "annotations/" + id + ".json";
    write_feature_file(ds.features[i], dir / feat);
    write_annotation_file(ds.annotations[i], dir / ann);
    samples.push_back({{"id", id}, {"features", feat}, {"annotations", ann}});
  }
  detail::write_file_bytes(dir / kManifestName, json{{"samples", samples}}.dump(2) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  for (const auto& e : read_manifest(dir)) {
    auto seq = load_feature_file(dir / e.features);
    seq.sample_id = e.id;
    auto ann = load_annotation_file(dir / e.annotations);
    if (ann.sample_id != e.id) {
      throw ValidationError("annotation id \"" + ann.sample_id + "\" does not match manifest id \"" +
                            e.id + "\"");
    }
    ds.features.push_back(std::move(seq));
    ds.annotations.push_back(std::move(ann));
  }
  return ds;
}

}  // namespace tdl
