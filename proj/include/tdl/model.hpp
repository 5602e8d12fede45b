#pragma once

// The TDL back-end:
//
//   x (D, T) -> conv_a -> relu -> conv_b -> l2norm -> e (E, T)
//   a = neighbor_similarity(e)
//   x -> tconv_1(., a) -> relu -> tconv_2(., a) -> relu -> conv_head (2, T)
//     -> flatten -> fc -> sigmoid -> scores (L)
//
// trained on BCE(scores, labels) + lambda * ESM(e).

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tdl/data.hpp"
#include "tdl/error.hpp"
#include "tdl/esm.hpp"
#include "tdl/metrics.hpp"
#include "tdl/nn.hpp"
#include "tdl/rng.hpp"
#include "tdl/tconv.hpp"
#include "tdl/tensor.hpp"

namespace tdl::model {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TdlConfig {
  std::size_t feat_dim = 1024;
  std::size_t t_max = 1050;
  std::size_t embed_dim = 32;
  std::size_t conv_hidden = 512;
  std::size_t tconv_channels = 1024;
  std::size_t kernel = 3;
  std::size_t label_len = 132;
  double label_resolution_s = kDefaultLabelResolution;
  LabelSetting label_setting = LabelSetting::real1_fake0;
  double boundary_weight = 100.0;
  esm::EsmConfig esm;
  double lambda = 0.1;
  bool rectify_similarity = true;
  bool relu_after_conv_a = true;
  bool relu_after_tconv = true;
  nn::AdamConfig optimizer;
  int epochs = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!feat_dim || !t_max || !embed_dim || !conv_hidden || !tconv_channels || !label_len) {
      throw ConfigError("all dimensions must be positive");
    }
    if (kernel % 2 == 0) throw ConfigError("kernel must be odd");
    if (tconv_channels != feat_dim) {
      throw ConfigError("tconv_channels (" + std::to_string(tconv_channels) +
                        ") must equal feat_dim (" + std::to_string(feat_dim) +
                        "): the temporal convolutions keep the feature width");
    }
    if (label_len > t_max) throw ConfigError("label_len must not exceed t_max");
    if (!(label_resolution_s > 0.0)) throw ConfigError("label_resolution_s must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
    if (epochs < 0) throw ConfigError("epochs must be nonnegative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(optimizer.base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
        !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(optimizer.eps > 0.0) || optimizer.weight_decay < 0.0) {
      throw ConfigError("Adam eps must be positive and weight_decay nonnegative");
    }
    esm.validate();
  }

  // Full-size shapes: 1024-dim features, 1050 frames, 132 labels.
  static TdlConfig full() { return TdlConfig{}; }

  // Scaled-down network for the synthetic benchmark.
  static TdlConfig desk() {
    TdlConfig c;
    c.feat_dim = 16;
    c.t_max = 64;
    c.embed_dim = 8;
    c.conv_hidden = 32;
    c.tconv_channels = 16;
    c.label_len = 16;
    c.optimizer.base_lr = 3e-3;
    c.epochs = 30;
    c.batch_size = 8;
    c.seed = 7;
    return c;
  }

  // Smallest configuration exercising every layer; used for gradient checks.
  static TdlConfig tiny() {
    TdlConfig c;
    c.feat_dim = 8;
    c.t_max = 12;
    c.embed_dim = 4;
    c.conv_hidden = 8;
    c.tconv_channels = 8;
    c.label_len = 4;
    c.epochs = 1;
    c.batch_size = 2;
    return c;
  }
};

inline json config_to_json(const TdlConfig& c) {
  return {{"feat_dim", c.feat_dim},
          {"t_max", c.t_max},
          {"embed_dim", c.embed_dim},
          {"conv_hidden", c.conv_hidden},
          {"tconv_channels", c.tconv_channels},
          {"kernel", c.kernel},
          {"label_len", c.label_len},
          {"label_resolution_s", c.label_resolution_s},
          {"label_setting", to_string(c.label_setting)},
          {"boundary_weight", c.boundary_weight},
          {"tau_same", c.esm.tau_same},
          {"tau_diff", c.esm.tau_diff},
          {"pair_budget", c.esm.pair_budget ? json(*c.esm.pair_budget) : json(nullptr)},
          {"lambda", c.lambda},
          {"rectify_similarity", c.rectify_similarity},
          {"relu_after_conv_a", c.relu_after_conv_a},
          {"relu_after_tconv", c.relu_after_tconv},
          {"base_lr", c.optimizer.base_lr},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"weight_decay", c.optimizer.weight_decay},
          {"halving_period_epochs", c.optimizer.halving_period_epochs},
          {"decoupled_weight_decay", c.optimizer.decoupled_weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

// Keys absent from `j` keep the values of `base`; unknown keys are errors.
inline TdlConfig config_from_json(const json& j, TdlConfig base = TdlConfig{}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const json known = config_to_json(base);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown config key \"" + it.key() + "\"");
  }
  TdlConfig c = base;
  try {
    auto get = [&j](const char* k, auto& dst) {
      if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
    };
    get("feat_dim", c.feat_dim);
    get("t_max", c.t_max);
    get("embed_dim", c.embed_dim);
    get("conv_hidden", c.conv_hidden);
    get("tconv_channels", c.tconv_channels);
    get("kernel", c.kernel);
    get("label_len", c.label_len);
    get("label_resolution_s", c.label_resolution_s);
    if (j.contains("label_setting")) c.label_setting = parse_label_setting(j.at("label_setting").get<std::string>());
    get("boundary_weight", c.boundary_weight);
    get("tau_same", c.esm.tau_same);
    get("tau_diff", c.esm.tau_diff);
    if (j.contains("pair_budget")) {
      const auto& pb = j.at("pair_budget");
      c.esm.pair_budget = pb.is_null() ? std::nullopt : std::optional<std::size_t>(pb.get<std::size_t>());
    }
    get("lambda", c.lambda);
    get("rectify_similarity", c.rectify_similarity);
    get("relu_after_conv_a", c.relu_after_conv_a);
    get("relu_after_tconv", c.relu_after_tconv);
    get("base_lr", c.optimizer.base_lr);
    get("beta1", c.optimizer.beta1);
    get("beta2", c.optimizer.beta2);
    get("eps", c.optimizer.eps);
    get("weight_decay", c.optimizer.weight_decay);
    get("halving_period_epochs", c.optimizer.halving_period_epochs);
    get("decoupled_weight_decay", c.optimizer.decoupled_weight_decay);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    get("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// "key = value" lines, '#' comments. Values become JSON scalars.
inline json parse_key_values(const std::string& text) {
  json j = json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    json v = json::parse(val, nullptr, false);
    j[key] = v.is_discarded() ? json(val) : v;
  }
  return j;
}

}  // namespace detail

// JSON (leading '{') or key=value text.
inline TdlConfig load_config(const fs::path& path, TdlConfig base = TdlConfig{}) {
  const std::string text = tdl::detail::read_file_bytes(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  json j;
  if (first != std::string::npos && text[first] == '{') {
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  } else {
    j = detail::parse_key_values(text);
  }
  return config_from_json(j, base);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct TdlModel {
  TdlConfig config;
  nn::Conv1dLayer conv_a;
  nn::Conv1dLayer conv_b;
  tconv::TconvLayer tconv_1;
  tconv::TconvLayer tconv_2;
  nn::Conv1dLayer conv_head;
  nn::FcLayer fc;
  nn::AdamState adam;
  int epoch = 0;  // completed epochs
  std::optional<double> best_dev_eer;

  // Zero-initialized layers with the configured shapes.
  static TdlModel shapes_only(const TdlConfig& cfg) {
    cfg.validate();
    TdlModel m;
    m.config = cfg;
    m.conv_a = nn::Conv1dLayer(cfg.feat_dim, cfg.conv_hidden, cfg.kernel);
    m.conv_b = nn::Conv1dLayer(cfg.conv_hidden, cfg.embed_dim, cfg.kernel);
    m.tconv_1 = tconv::TconvLayer(cfg.tconv_channels, cfg.kernel);
    m.tconv_2 = tconv::TconvLayer(cfg.tconv_channels, cfg.kernel);
    m.conv_head = nn::Conv1dLayer(cfg.tconv_channels, 2, 1);
    m.fc = nn::FcLayer(2 * cfg.t_max, cfg.label_len);
    m.adam.config = cfg.optimizer;
    return m;
  }

  // Seeded uniform initialization from the "init" sub-stream.
  static TdlModel create(const TdlConfig& cfg) {
    TdlModel m = shapes_only(cfg);
    Rng rng = substream(cfg.seed, "init");
    nn::init_uniform(m.conv_a, rng);
    nn::init_uniform(m.conv_b, rng);
    nn::init_uniform(m.tconv_1.conv, rng);
    nn::init_uniform(m.tconv_2.conv, rng);
    nn::init_uniform(m.conv_head, rng);
    nn::init_uniform(m.fc, rng);
    return m;
  }

  // Declaration order; gradients, optimizer moments and checkpoint payloads
  // all follow it.
  std::vector<nn::NamedParam> parameters() {
    return {{"conv_a.weight", &conv_a.weights},        {"conv_a.bias", &conv_a.bias},
            {"conv_b.weight", &conv_b.weights},        {"conv_b.bias", &conv_b.bias},
            {"tconv_1.weight", &tconv_1.conv.weights}, {"tconv_1.bias", &tconv_1.conv.bias},
            {"tconv_2.weight", &tconv_2.conv.weights}, {"tconv_2.bias", &tconv_2.conv.bias},
            {"conv_head.weight", &conv_head.weights},  {"conv_head.bias", &conv_head.bias},
            {"fc.weight", &fc.weights},                {"fc.bias", &fc.bias}};
  }

  std::vector<std::pair<std::string, const Tensor*>> parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& p : const_cast<TdlModel*>(this)->parameters()) out.emplace_back(p.name, p.value);
    return out;
  }
};

inline std::size_t count_params(const TdlModel& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.parameters()) n += t->size();
  return n;
}

struct LayerParams {
  std::string name;
  std::string shape;  // weight shape
  std::size_t count = 0;
};

inline std::vector<LayerParams> param_table(const TdlModel& m) {
  auto conv_row = [](const char* name, const nn::Conv1dLayer& l) {
    return LayerParams{name, l.weights.shape_string() + " + " + l.bias.shape_string(), l.num_params()};
  };
  return {conv_row("conv_a", m.conv_a),
          conv_row("conv_b", m.conv_b),
          conv_row("tconv_1", m.tconv_1.conv),
          conv_row("tconv_2", m.tconv_2.conv),
          conv_row("conv_head", m.conv_head),
          {"fc", m.fc.weights.shape_string() + " + " + m.fc.bias.shape_string(), m.fc.num_params()}};
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ForwardCache {
  Tensor x;   // (D, T)
  Tensor z1;  // conv_a output
  Tensor r1;  // after activation
  Tensor z2;  // conv_b output, pre-normalization
  esm::EmbeddingSequence e;
  tconv::SimilarityMatrix a;
  Tensor u1, h1, u2, h2;  // tconv outputs before/after activation
  Tensor head;            // (2, T)
  Tensor logits;          // (L)
  Tensor scores;          // (L)
};

inline void check_input(const TdlConfig& cfg, const Tensor& x, std::size_t true_frames) {
  if (x.rank() != 2 || x.rows() != cfg.feat_dim || x.cols() != cfg.t_max) {
    throw ShapeError("model input must be (" + std::to_string(cfg.feat_dim) + ", " +
                     std::to_string(cfg.t_max) + "), got " + x.shape_string());
  }
  if (true_frames == 0 || true_frames > cfg.t_max) {
    throw ShapeError("true_frames must lie in [1, t_max]");
  }
}

inline ForwardCache forward(const TdlModel& m, const Tensor& x, std::size_t true_frames) {
  const auto& cfg = m.config;
  check_input(cfg, x, true_frames);
  ForwardCache c;
  c.x = x;
  c.z1 = nn::conv1d_forward(m.conv_a, x);
  c.r1 = cfg.relu_after_conv_a ? nn::relu_forward(c.z1) : c.z1;
  c.z2 = nn::conv1d_forward(m.conv_b, c.r1);
  c.e.values = nn::l2_normalize_forward(c.z2);
  c.e.frame_class.assign(cfg.t_max, esm::FrameClass::unlabeled);
  std::fill(c.e.frame_class.begin() + static_cast<std::ptrdiff_t>(true_frames), c.e.frame_class.end(),
            esm::FrameClass::padding);
  c.a = tconv::neighbor_similarity(c.e, cfg.kernel, cfg.rectify_similarity);
  c.u1 = tconv::tconv_forward(m.tconv_1, x, c.a);
  c.h1 = cfg.relu_after_tconv ? nn::relu_forward(c.u1) : c.u1;
  c.u2 = tconv::tconv_forward(m.tconv_2, c.h1, c.a);
  c.h2 = cfg.relu_after_tconv ? nn::relu_forward(c.u2) : c.u2;
  c.head = nn::conv1d_forward(m.conv_head, c.h2);
  c.logits = nn::fc_forward(m.fc, Tensor({c.head.size()}, c.head.storage()));
  c.scores = nn::sigmoid_forward(c.logits);
  return c;
}

inline ForwardCache forward(const TdlModel& m, const FeatureSequence& seq) {
  if (seq.num_frames != m.config.t_max) {
    throw ShapeError(seq.sample_id + ": expected features padded to " +
                     std::to_string(m.config.t_max) + " frames, got " +
                     std::to_string(seq.num_frames));
  }
  if (seq.dim != m.config.feat_dim) {
    throw ShapeError(seq.sample_id + ": feature dim " + std::to_string(seq.dim) +
                     " does not match model feat_dim " + std::to_string(m.config.feat_dim));
  }
  return forward(m, to_tensor(seq), seq.true_frames);
}

struct LossResult {
  double total = 0.0;
  double bce = 0.0;
  esm::EsmLoss esm;
  std::vector<Tensor> grads;  // parallel to TdlModel::parameters()
  Tensor grad_x;
  std::vector<double> scores;
};

// L_all = BCE(scores, labels) + lambda * ESM(e), with gradients through the
// whole chain, including e -> a -> both temporal convolutions.
inline LossResult total_loss(const TdlModel& m, const Tensor& x, std::size_t true_frames,
                             const FrameLabels& labels) {
  const auto& cfg = m.config;
  if (labels.padded_len() != cfg.label_len) {
    throw ShapeError(labels.sample_id + ": labels padded to " + std::to_string(labels.padded_len()) +
                     ", model expects " + std::to_string(cfg.label_len));
  }
  ForwardCache c = forward(m, x, true_frames);
  LossResult r;
  r.scores.assign(c.scores.storage().begin(), c.scores.storage().end());

  std::vector<double> weights;
  if (cfg.label_setting == LabelSetting::boundary1) weights = label_weights(labels, cfg.boundary_weight);
  auto bce = nn::bce_loss(c.scores.values(), labels.labels, weights);
  r.bce = bce.loss;
  if (!std::isfinite(r.bce)) throw NumericError(labels.sample_id + ": non-finite BCE term");

  esm::EmbeddingSequence labelled{c.e.values, esm::align_labels_to_embedding(labels, cfg.t_max)};
  esm::EsmResult es{{}, Tensor(c.e.values.shape())};
  if (cfg.lambda > 0.0) {
    esm::EsmConfig ec = cfg.esm;
    ec.sample_seed = cfg.seed;
    es = esm::esm_loss(labelled, ec);
  }
  r.esm = es.loss;
  if (!std::isfinite(r.esm.total)) throw NumericError(labels.sample_id + ": non-finite ESM term");
  r.total = r.bce + cfg.lambda * r.esm.total;

  Tensor g_logits = nn::sigmoid_backward(c.scores, bce.grad);
  auto fcg = nn::fc_backward(m.fc, Tensor({c.head.size()}, c.head.storage()), g_logits);
  Tensor g_head(c.head.shape(), std::move(fcg.x.storage()));
  auto hg = nn::conv1d_backward(m.conv_head, c.h2, g_head);
  Tensor g_u2 = cfg.relu_after_tconv ? nn::relu_backward(c.u2, hg.x) : hg.x;
  auto t2 = tconv::tconv_backward(m.tconv_2, c.h1, c.a, g_u2);
  Tensor g_u1 = cfg.relu_after_tconv ? nn::relu_backward(c.u1, t2.x) : t2.x;
  auto t1 = tconv::tconv_backward(m.tconv_1, c.x, c.a, g_u1);
  Tensor g_a = t1.a;
  g_a += t2.a;
  Tensor g_e = tconv::neighbor_similarity_backward(c.e, cfg.kernel, g_a, cfg.rectify_similarity);
  if (cfg.lambda > 0.0) {
    es.grad *= cfg.lambda;
    g_e += es.grad;
  }
  Tensor g_z2 = nn::l2_normalize_backward(c.z2, g_e);
  auto bg = nn::conv1d_backward(m.conv_b, c.r1, g_z2);
  Tensor g_z1 = cfg.relu_after_conv_a ? nn::relu_backward(c.z1, bg.x) : bg.x;
  auto ag = nn::conv1d_backward(m.conv_a, c.x, g_z1);
  r.grad_x = ag.x;
  r.grad_x += t1.x;

  r.grads.reserve(12);
  r.grads.push_back(std::move(ag.weights));
  r.grads.push_back(std::move(ag.bias));
  r.grads.push_back(std::move(bg.weights));
  r.grads.push_back(std::move(bg.bias));
  r.grads.push_back(std::move(t1.weights));
  r.grads.push_back(std::move(t1.bias));
  r.grads.push_back(std::move(t2.weights));
  r.grads.push_back(std::move(t2.bias));
  r.grads.push_back(std::move(hg.weights));
  r.grads.push_back(std::move(hg.bias));
  r.grads.push_back(std::move(fcg.weights));
  r.grads.push_back(std::move(fcg.bias));
  return r;
}

inline LossResult total_loss(const TdlModel& m, const FeatureSequence& seq, const FrameLabels& labels) {
  if (seq.num_frames != m.config.t_max || seq.dim != m.config.feat_dim) {
    throw ShapeError(seq.sample_id + ": features do not match the model input shape");
  }
  return total_loss(m, to_tensor(seq), seq.true_frames, labels);
}

// Label frames covered by `true_frames` feature frames.
inline std::size_t true_label_count(const TdlConfig& cfg, std::size_t true_frames) {
  return (true_frames * cfg.label_len + cfg.t_max - 1) / cfg.t_max;
}

// Scores for the unpadded label frames. Under real1_fake0 a high score
// means real.
inline std::vector<double> predict(const TdlModel& m, const FeatureSequence& seq,
                                   std::optional<std::size_t> true_labels = std::nullopt) {
  const auto c = forward(m, seq);
  const std::size_t n = true_labels.value_or(true_label_count(m.config, seq.true_frames));
  if (n > m.config.label_len) throw ShapeError(seq.sample_id + ": true_labels exceeds label_len");
  return {c.scores.storage().begin(), c.scores.storage().begin() + static_cast<std::ptrdiff_t>(n)};
}

// Scores oriented so that high means real, whatever the training labels.
inline std::vector<double> realness_scores(const TdlConfig& cfg, std::vector<double> scores) {
  if (cfg.label_setting == LabelSetting::real0_fake1) {
    for (double& s : scores) s = 1.0 - s;
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Checkpoints: "TDLC", u32 version, u32 header length, JSON header, then
// little-endian f64 parameters followed by the Adam first and second moments.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const TdlModel& m) {
  const auto params = m.parameters();
  const bool has_moments = !m.adam.m.empty();
  json layers = json::array();
  for (const auto& [name, t] : params) layers.push_back({{"name", name}, {"shape", t->shape()}});
  json header = {
      {"config", config_to_json(m.config)},
      {"epoch", m.epoch},
      {"best_dev_eer", m.best_dev_eer ? json(*m.best_dev_eer) : json(nullptr)},
      {"adam",
       {{"step", m.adam.step},
        {"base_lr", m.adam.config.base_lr},
        {"beta1", m.adam.config.beta1},
        {"beta2", m.adam.config.beta2},
        {"eps", m.adam.config.eps},
        {"weight_decay", m.adam.config.weight_decay},
        {"halving_period_epochs", m.adam.config.halving_period_epochs},
        {"decoupled_weight_decay", m.adam.config.decoupled_weight_decay},
        {"has_moments", has_moments}}},
      {"layers", layers}};
  const std::string h = header.dump();

  std::string out = "TDLC";
  tdl::detail::put_u32(out, kCheckpointVersion);
  tdl::detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  auto put_tensor = [&out](const Tensor& t) {
    for (double v : t.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
  };
  for (const auto& [name, t] : params) put_tensor(*t);
  if (has_moments) {
    for (const auto& t : m.adam.m) put_tensor(t);
    for (const auto& t : m.adam.v) put_tensor(t);
  }
  return out;
}

inline TdlModel decode_checkpoint(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "TDLC", 4) != 0) {
    throw FormatError("not a TDLC checkpoint (bad magic or short header)");
  }
  const std::uint32_t version = tdl::detail::get_u32(p + 4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t hlen = tdl::detail::get_u32(p + 8);
  if (bytes.size() < 12 + std::size_t{hlen}) throw FormatError("checkpoint header truncated");
  json header;
  TdlModel m;
  bool has_moments = false;
  try {
    header = json::parse(bytes.substr(12, hlen));
    m = TdlModel::shapes_only(config_from_json(header.at("config")));
    m.epoch = header.at("epoch").get<int>();
    const auto& be = header.at("best_dev_eer");
    if (!be.is_null()) m.best_dev_eer = be.get<double>();
    const auto& ad = header.at("adam");
    m.adam.step = ad.at("step").get<std::uint64_t>();
    m.adam.config.base_lr = ad.at("base_lr").get<double>();
    m.adam.config.beta1 = ad.at("beta1").get<double>();
    m.adam.config.beta2 = ad.at("beta2").get<double>();
    m.adam.config.eps = ad.at("eps").get<double>();
    m.adam.config.weight_decay = ad.at("weight_decay").get<double>();
    m.adam.config.halving_period_epochs = ad.at("halving_period_epochs").get<int>();
    m.adam.config.decoupled_weight_decay = ad.at("decoupled_weight_decay").get<bool>();
    has_moments = ad.at("has_moments").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }

  auto params = m.parameters();
  const auto& layers = header.at("layers");
  if (layers.size() != params.size()) throw FormatError("checkpoint layer count mismatch");
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (layers[i].at("name") != params[i].name ||
        layers[i].at("shape").get<std::vector<std::size_t>>() != params[i].value->shape()) {
      throw FormatError("checkpoint layer " + params[i].name + " does not match its config");
    }
    total += params[i].value->size();
  }
  const std::size_t expected = 12 + std::size_t{hlen} + 8 * total * (has_moments ? 3 : 1);
  if (bytes.size() != expected) {
    throw FormatError("checkpoint payload size mismatch: expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  std::size_t off = 12 + hlen;
  auto get_tensor = [&](Tensor& t) {
    for (double& v : t.values()) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= std::uint64_t{p[off + i]} << (8 * i);
      v = std::bit_cast<double>(bits);
      off += 8;
    }
  };
  for (auto& prm : params) get_tensor(*prm.value);
  if (has_moments) {
    for (auto& prm : params) m.adam.m.emplace_back(prm.value->shape());
    for (auto& prm : params) m.adam.v.emplace_back(prm.value->shape());
    for (auto& t : m.adam.m) get_tensor(t);
    for (auto& t : m.adam.v) get_tensor(t);
  }
  return m;
}

inline void save_checkpoint(const TdlModel& m, const fs::path& path) {
  tdl::detail::write_file_bytes(path, encode_checkpoint(m));
}

inline TdlModel load_checkpoint(const fs::path& path) {
  return decode_checkpoint(tdl::detail::read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_bce = 0.0;
  double mean_esm_real = 0.0;
  double mean_esm_fake = 0.0;
  double mean_esm_diff = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
  std::optional<double> dev_eer_pct;
};

inline json record_to_json(const TrainRecord& r) {
  return {{"epoch", r.epoch},
          {"mean_loss", r.mean_loss},
          {"mean_bce", r.mean_bce},
          {"mean_esm_real", r.mean_esm_real},
          {"mean_esm_fake", r.mean_esm_fake},
          {"mean_esm_diff", r.mean_esm_diff},
          {"lr", r.lr},
          {"wall_time_s", r.wall_time_s},
          {"dev_eer_pct", r.dev_eer_pct ? json(*r.dev_eer_pct) : json(nullptr)}};
}

// Features as double tensors plus labels compiled for the model's config.
struct PreparedSet {
  std::vector<std::string> ids;
  std::vector<Tensor> x;
  std::vector<std::size_t> true_frames;
  std::vector<FrameLabels> labels;

  std::size_t size() const { return x.size(); }
};

inline PreparedSet prepare(const Dataset& ds, const TdlConfig& cfg) {
  PreparedSet p;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& f = ds.features[i];
    if (f.dim != cfg.feat_dim) {
      throw ShapeError(f.sample_id + ": feature dim " + std::to_string(f.dim) +
                       " does not match config feat_dim " + std::to_string(cfg.feat_dim));
    }
    if (f.true_frames > cfg.t_max) {
      throw ShapeError(f.sample_id + ": " + std::to_string(f.true_frames) +
                       " frames exceed t_max " + std::to_string(cfg.t_max));
    }
    const auto padded = f.num_frames == cfg.t_max ? f : pad_features(f, static_cast<std::uint32_t>(cfg.t_max));
    p.ids.push_back(f.sample_id);
    p.x.push_back(to_tensor(padded));
    p.true_frames.push_back(f.true_frames);
    p.labels.push_back(compile_frame_labels(ds.annotations[i], cfg.label_resolution_s, cfg.label_len,
                                            cfg.label_setting));
  }
  return p;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write to
// per-index slots, so the result never depends on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::vector<std::vector<double>> predict_all(const TdlModel& m, const PreparedSet& set,
                                                    std::size_t threads = 1) {
  std::vector<std::vector<double>> scores(set.size());
  parallel_for(set.size(), threads, [&](std::size_t i) {
    const auto c = forward(m, set.x[i], set.true_frames[i]);
    std::vector<double> s(c.scores.storage().begin(),
                          c.scores.storage().begin() + static_cast<std::ptrdiff_t>(set.labels[i].true_labels));
    scores[i] = realness_scores(m.config, std::move(s));
  });
  return scores;
}

inline metrics::EvalPool evaluation_pool(const TdlModel& m, const PreparedSet& set, std::size_t threads = 1) {
  const auto scores = predict_all(m, set, threads);
  return metrics::pool_predictions(scores, set.labels);
}

// Dev EER, or empty when the dev pool lacks one of the classes.
inline std::optional<double> dev_eer(const TdlModel& m, const PreparedSet& dev, std::size_t threads = 1) {
  if (dev.size() == 0) return std::nullopt;
  try {
    return metrics::eer(evaluation_pool(m, dev, threads)).eer_pct;
  } catch (const MetricUndefinedError&) {
    return std::nullopt;
  }
}

// Batch-mean loss and gradients; per-utterance results are summed in index
// order.
struct BatchResult {
  double loss = 0.0, bce = 0.0;
  esm::EsmLoss esm;
  std::vector<Tensor> grads;
};

inline BatchResult batch_loss(const TdlModel& m, const PreparedSet& set, std::span<const std::size_t> idx,
                              std::size_t threads = 1) {
  std::vector<LossResult> parts(idx.size());
  parallel_for(idx.size(), threads, [&](std::size_t b) {
    const std::size_t i = idx[b];
    parts[b] = total_loss(m, set.x[i], set.true_frames[i], set.labels[i]);
  });
  BatchResult out;
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (auto& p : parts) {
    out.loss += inv * p.total;
    out.bce += inv * p.bce;
    out.esm.l_real += inv * p.esm.l_real;
    out.esm.l_fake += inv * p.esm.l_fake;
    out.esm.l_diff += inv * p.esm.l_diff;
    out.esm.total += inv * p.esm.total;
    if (out.grads.empty()) {
      out.grads = std::move(p.grads);
      for (auto& g : out.grads) g *= inv;
    } else {
      for (std::size_t k = 0; k < p.grads.size(); ++k) {
        p.grads[k] *= inv;
        out.grads[k] += p.grads[k];
      }
    }
  }
  return out;
}

// Epoch e visits the training set in the order drawn from ("shuffle", e),
// so resuming from a checkpoint replays the same batches.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = substream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct TrainOptions {
  std::size_t threads = 1;
  // Called after every epoch with the updated model; `improved` is true when
  // the dev EER is the best so far.
  std::function<void(const TdlModel&, const TrainRecord&, bool improved)> on_epoch;
};

struct TrainResult {
  TdlModel last;
  TdlModel best;
  std::vector<TrainRecord> history;
};

// Runs epochs model.epoch .. config.epochs - 1. A non-finite loss aborts
// with NumericError; the last good state is whatever on_epoch last saw.
inline TrainResult train(TdlModel model, const PreparedSet& train_set, const PreparedSet& dev_set,
                         const TrainOptions& opt = {}) {
  if (train_set.size() == 0) throw EmptyInputError("train: empty training set");
  const auto& cfg = model.config;
  TrainResult result{model, model, {}};
  for (int epoch = model.epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(cfg.seed, epoch, train_set.size());
    TrainRecord rec;
    rec.epoch = epoch;
    rec.lr = model.adam.config.lr(epoch);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      auto br = batch_loss(model, train_set, idx, opt.threads);
      if (!std::isfinite(br.loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      auto params = model.parameters();
      nn::adam_step(model.adam, params, br.grads, epoch);
      rec.mean_loss += br.loss;
      rec.mean_bce += br.bce;
      rec.mean_esm_real += br.esm.l_real;
      rec.mean_esm_fake += br.esm.l_fake;
      rec.mean_esm_diff += br.esm.l_diff;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    rec.mean_loss *= inv;
    rec.mean_bce *= inv;
    rec.mean_esm_real *= inv;
    rec.mean_esm_fake *= inv;
    rec.mean_esm_diff *= inv;
    model.epoch = epoch + 1;
    rec.dev_eer_pct = dev_eer(model, dev_set, opt.threads);
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    bool improved = false;
    if (rec.dev_eer_pct && (!model.best_dev_eer || *rec.dev_eer_pct < *model.best_dev_eer)) {
      model.best_dev_eer = rec.dev_eer_pct;
      improved = true;
    }
    result.history.push_back(rec);
    if (improved || result.history.size() == 1) result.best = model;
    if (opt.on_epoch) opt.on_epoch(model, rec, improved);
  }
  result.last = std::move(model);
  return result;
}

inline TrainResult train(const TdlConfig& cfg, const Dataset& train_set, const Dataset& dev_set,
                         const TrainOptions& opt = {}) {
  return train(TdlModel::create(cfg), prepare(train_set, cfg), prepare(dev_set, cfg), opt);
}

}  // namespace tdl::model
