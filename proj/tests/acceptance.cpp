// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include "oracles.hpp"
#include "tdl/gradcheck.hpp"
#include "tdl/model.hpp"

using namespace tdl;

namespace {

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& v : t.values()) v = u(rng);
  return t;
}

Dataset slice(const Dataset& ds, std::size_t begin, std::size_t end) {
  Dataset out;
  for (std::size_t i = begin; i < end; ++i) {
    out.features.push_back(ds.features[i]);
    out.annotations.push_back(ds.annotations[i]);
  }
  return out;
}

void gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = gradcheck::run(gradcheck::Size::tiny, {});
  const double dt = seconds_since(t0);
  bool covered = true;
  for (const char* op : {"conv1d", "fc", "relu", "sigmoid", "l2_normalize", "bce", "esm", "similarity", "tconv",
                         "model.fc.bias", "model.conv_a.weight", "model.input"}) {
    bool found = false;
    for (const auto& e : rep.entries) found |= e.name.find(op) != std::string::npos;
    if (!found) std::printf("  missing gradient check for %s\n", op);
    covered &= found;
  }
  report(1, "gradient integrity", rep.passed() && covered && rep.max_rel_error() < 1e-4 && dt < 60.0,
         fmt("%zu blocks, max rel err %.3e (< 1e-4), %.2f s", rep.entries.size(), rep.max_rel_error(), dt));
}

void modulation_identity() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t C = 1 + rng() % 8, T = 1 + rng() % 40, k = 1 + 2 * (rng() % 3);
    tconv::TconvLayer layer(C, k);
    nn::init_uniform(layer.conv, rng);
    const auto x = random_tensor({C, T}, rng);
    const auto y = tconv::tconv_forward(layer, x, {k, Tensor({k, T}, 1.0)});
    const auto z = nn::conv1d_forward(layer.conv, x);
    for (std::size_t j = 0; j < y.size(); ++j) worst = std::max(worst, std::abs(y[j] - z[j]));
  }
  report(2, "modulation identity", worst <= 1e-12, fmt("100 instances, max abs diff %.3e (<= 1e-12)", worst));
}

void esm_oracle() {
  std::mt19937_64 rng(102);
  esm::EsmConfig cfg;
  int mismatches = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t T = 1 + rng() % 64, D = 1 + rng() % 16;
    esm::EmbeddingSequence e{nn::l2_normalize_forward(random_tensor({D, T}, rng)),
                             std::vector<esm::FrameClass>(T)};
    for (auto& c : e.frame_class) {
      const auto r = rng() % 10;
      c = r < 5 ? esm::FrameClass::real : (r < 9 ? esm::FrameClass::fake : esm::FrameClass::padding);
    }
    using esm::FrameClass;
    mismatches += esm::esm_real_loss(e, cfg) !=
                  oracle::esm_pair_scan(e, FrameClass::real, FrameClass::real, cfg.tau_same, cfg.tau_diff);
    mismatches += esm::esm_fake_loss(e, cfg) !=
                  oracle::esm_pair_scan(e, FrameClass::fake, FrameClass::fake, cfg.tau_same, cfg.tau_diff);
    mismatches += esm::esm_diff_loss(e, cfg) !=
                  oracle::esm_pair_scan(e, FrameClass::real, FrameClass::fake, cfg.tau_same, cfg.tau_diff);
  }
  report(3, "ESM oracle equivalence", mismatches == 0, fmt("200 embeddings x 3 terms, %d inexact", mismatches));
}

void eer_oracle() {
  std::mt19937_64 rng(103);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    metrics::EvalPool p;
    const std::size_t n = 2 + rng() % 199;
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint8_t label = j < 2 ? static_cast<std::uint8_t>(j) : static_cast<std::uint8_t>(rng() & 1);
      double s = std::uniform_real_distribution<double>(0, 1)(rng) + 0.3 * label;
      if (i % 4 == 0) s = std::round(s * 8) / 8;
      p.frames.push_back({s, label});
    }
    worst = std::max(worst, std::abs(metrics::eer(p).eer_pct - oracle::eer_pct(p.frames)));
  }
  metrics::EvalPool sep;
  for (int j = 0; j < 50; ++j) sep.frames.push_back({0.6 + 0.001 * j, 1});
  for (int j = 0; j < 50; ++j) sep.frames.push_back({0.4 - 0.001 * j, 0});
  const double zero = metrics::eer(sep).eer_pct;
  report(4, "EER oracle equivalence", worst <= 1e-9 && zero == 0.0,
         fmt("200 pools, max diff %.3e (<= 1e-9); separated pool EER %.1f", worst, zero));
}

struct RunOutcome {
  double test_eer = 0, test_f1 = 0, best_dev_eer = 0, seconds = 0;
  int best_epoch = 0;
};

RunOutcome synthetic_run(double lambda, const Dataset& tr, const Dataset& dev, const Dataset& test) {
  auto cfg = model::TdlConfig::desk();
  cfg.lambda = lambda;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = model::train(cfg, tr, dev);
  RunOutcome o;
  o.seconds = seconds_since(t0);
  const auto rep = metrics::evaluate(model::evaluation_pool(r.best, model::prepare(test, cfg)), 0.5);
  o.test_eer = rep.eer_pct;
  o.test_f1 = rep.at_threshold.f1_pct;
  o.best_dev_eer = r.best.best_dev_eer.value_or(100.0);
  o.best_epoch = r.best.epoch;
  return o;
}

void synthetic_benchmark() {
  SynthSpec spec;
  spec.num_utterances = 300;
  const auto ds = synth_dataset(spec, 7);
  const auto tr = slice(ds, 0, 200), dev = slice(ds, 200, 250), test = slice(ds, 250, 300);
  const auto with = synthetic_run(0.1, tr, dev, test);
  const auto without = synthetic_run(0.0, tr, dev, test);
  std::printf("  lambda=0.1: best epoch %d, dev EER %.3f%%, test EER %.3f%%, F1 %.2f%%, %.1f s\n", with.best_epoch,
              with.best_dev_eer, with.test_eer, with.test_f1, with.seconds);
  std::printf("  lambda=0  : best epoch %d, dev EER %.3f%%, test EER %.3f%%, F1 %.2f%%, %.1f s\n",
              without.best_epoch, without.best_dev_eer, without.test_eer, without.test_f1, without.seconds);
  const bool ok = with.best_dev_eer < 5.0 && with.test_eer < 5.0 && with.test_f1 > 90.0 &&
                  with.test_eer <= without.test_eer + 1.0 && with.seconds + without.seconds < 600.0;
  report(5, "end-to-end synthetic benchmark", ok,
         fmt("test EER %.3f%% (< 5), F1 %.2f%% (> 90), lambda=0 EER %.3f%% (+1 pt bound %.3f)", with.test_eer,
             with.test_f1, without.test_eer, without.test_eer + 1.0));
}

void parameter_count() {
  // Rows of the layer table: conv(k, in, out) and fc(in, out), with biases.
  auto conv = [](std::size_t k, std::size_t in, std::size_t out) { return k * in * out + out; };
  const std::size_t closed = conv(3, 1024, 512) + conv(3, 512, 32) + 2 * conv(3, 1024, 1024) +
                             conv(1, 1024, 2) + (2 * 1050 * 132 + 132);
  const auto m = model::TdlModel::shapes_only(model::TdlConfig::full());
  std::size_t table = 0;
  for (const auto& r : model::param_table(m)) table += r.count;
  const double rel = std::abs(static_cast<double>(table) - 8718000.0) / 8718000.0;
  report(6, "parameter count", table == closed && model::count_params(m) == closed && rel <= 0.10,
         fmt("%zu (closed form %zu), %.2f%% from 8,718k", table, closed, 100.0 * rel));
}

void label_pipeline() {
  std::mt19937_64 rng(104);
  int mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    const auto ms = oracle::random_ms_annotation(rng);
    const auto expect = oracle::ms_authenticity(ms, 160);
    const auto got = compile_frame_labels(oracle::to_annotation(ms), 0.16, expect.size());
    mismatches += got.labels != expect;
  }
  bool monotone = true;
  std::size_t prev = 0;
  for (std::size_t t = 0; t < 1050; ++t) {
    const auto j = esm::label_index(t, 132, 1050);
    monotone &= j >= prev && j < 132;
    prev = j;
  }
  const auto j0 = esm::label_index(0, 132, 1050), jl = esm::label_index(1049, 132, 1050);
  report(7, "label pipeline", mismatches == 0 && monotone && j0 == 0 && jl == 131,
         fmt("500 annotations, %d mismatches; j(0)=%zu j(1049)=%zu, monotone %s", mismatches, j0, jl,
             monotone ? "yes" : "no"));
}

void determinism() {
  SynthSpec spec;
  spec.num_utterances = 40;
  const auto ds = synth_dataset(spec, 7);
  auto cfg = model::TdlConfig::desk();
  cfg.epochs = 3;
  const auto tr = slice(ds, 0, 30), dev = slice(ds, 30, 40);
  const auto a = model::train(cfg, tr, dev), b = model::train(cfg, tr, dev);
  const std::string ca = model::encode_checkpoint(a.last), cb = model::encode_checkpoint(b.last);
  const auto back = model::decode_checkpoint(ca);
  bool same = true;
  for (const auto& f : dev.features) same &= model::predict(back, f) == model::predict(a.last, f);
  report(8, "determinism and persistence", ca == cb && same && model::encode_checkpoint(back) == ca,
         fmt("checkpoints %s (%zu bytes), round-trip predictions %s", ca == cb ? "identical" : "differ",
             ca.size(), same ? "identical" : "differ"));
}

void stats_corpus() {
  // 10,000 utterances of 10 label frames: 8,085 with 6 fake frames, 898 with 5.
  std::vector<SegmentAnnotation> anns;
  for (int i = 0; i < 10000; ++i) {
    SegmentAnnotation a;
    a.sample_id = "c" + std::to_string(i);
    a.duration_s = 1.6;
    const int fake = i < 8085 ? 6 : (i < 8983 ? 5 : 0);
    if (fake == 0) {
      a.segments = {{0.0, 1.6, SegmentLabel::real}};
    } else {
      const double cut = 0.16 * fake;
      a.segments = {{0.0, cut, SegmentLabel::fake}, {cut, 1.6, SegmentLabel::real}};
    }
    anns.push_back(std::move(a));
  }
  const auto st = dataset_stats(anns);
  report(9, "dataset stats", st.frame_fake_pct == 53.0 && st.utterance_fake_pct == 89.83,
         fmt("frame-level %.2f%% (53.00), utterance-level %.2f%% (89.83)", st.frame_fake_pct,
             st.utterance_fake_pct));
}

}  // namespace

int main() {
  const auto guard = [](auto fn, int id) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(id, "criterion", false, std::string("threw: ") + e.what());
    }
  };
  guard(gradient_integrity, 1);
  guard(modulation_identity, 2);
  guard(esm_oracle, 3);
  guard(eer_oracle, 4);
  guard(synthetic_benchmark, 5);
  guard(parameter_count, 6);
  guard(label_pipeline, 7);
  guard(determinism, 8);
  guard(stats_corpus, 9);
  std::printf("%s: %d of 9 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
