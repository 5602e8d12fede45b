#pragma once

// Subcommand implementations behind the `tdl` executable. Each takes parsed
// options and an output stream, and reports failures by throwing tdl::Error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include <json.hpp>

#include "tdl/data.hpp"
#include "tdl/error.hpp"
#include "tdl/gradcheck.hpp"
#include "tdl/metrics.hpp"
#include "tdl/model.hpp"

namespace tdl::cli {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kInvalid = 1, kNumeric = 2 };

// Runs `fn`, printing any error to `err` and mapping it to an exit code.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  }
}

inline void print_header(std::ostream& out, const char* command, const json& config, std::uint64_t seed) {
  out << "command: " << command << "\n";
  out << "config: " << config.dump() << "\n";
  out << "seed: " << seed << "\n";
}

inline model::TdlConfig resolve_config(const std::optional<std::string>& path) {
  return path ? model::load_config(*path) : model::TdlConfig::full();
}

// ---------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  std::optional<std::string> spec;
  std::uint64_t seed = 0;
};

inline int run_synth(const SynthOptions& o, std::ostream& out) {
  SynthSpec spec;
  if (o.spec) {
    try {
      spec = synth_spec_from_json(json::parse(tdl::detail::read_file_bytes(*o.spec)));
    } catch (const json::parse_error& e) {
      throw ConfigError(*o.spec + ": " + e.what());
    }
  }
  print_header(out, "synth", synth_spec_to_json(spec), o.seed);
  const Dataset ds = synth_dataset(spec, o.seed);
  write_dataset(ds, o.out);
  const auto st = dataset_stats(ds.annotations, kDefaultLabelResolution);
  out << "wrote " << ds.size() << " utterances to " << o.out << "\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "fake frames %.2f %%, fake utterances %.2f %%\n", st.frame_fake_pct,
                st.utterance_fake_pct);
  out << buf;
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string train;
  std::string dev;
  std::string out;
  std::optional<std::string> resume;
  std::size_t threads = 1;
};

inline constexpr const char* kLastCheckpoint = "last.tdlc";
inline constexpr const char* kBestCheckpoint = "best.tdlc";
inline constexpr const char* kTrainLog = "train_log.jsonl";

inline int run_train(const TrainOptions& o, std::ostream& out) {
  auto cfg = model::load_config(o.config);
  model::TdlModel m;
  if (o.resume) {
    m = model::load_checkpoint(*o.resume);
    const int epochs = cfg.epochs;
    cfg = m.config;
    cfg.epochs = epochs;
    m.config.epochs = epochs;
  } else {
    m = model::TdlModel::create(cfg);
  }
  print_header(out, "train", model::config_to_json(cfg), cfg.seed);

  const auto train_set = model::prepare(load_dataset(o.train), cfg);
  const auto dev_set = model::prepare(load_dataset(o.dev), cfg);
  if (train_set.size() == 0) throw EmptyInputError("train: " + o.train + " has no utterances");
  out << "train utterances: " << train_set.size() << ", dev utterances: " << dev_set.size() << "\n";
  if (o.resume) out << "resuming after epoch " << m.epoch << "\n";

  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream log(dir / kTrainLog, o.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + (dir / kTrainLog).string());

  model::TrainOptions topt;
  topt.threads = o.threads;
  topt.on_epoch = [&](const model::TdlModel& cur, const model::TrainRecord& rec, bool improved) {
    model::save_checkpoint(cur, dir / kLastCheckpoint);
    if (improved || !fs::exists(dir / kBestCheckpoint)) model::save_checkpoint(cur, dir / kBestCheckpoint);
    log << model::record_to_json(rec).dump() << "\n";
    log.flush();
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3d  loss %.6f  bce %.6f  lr %.3g  dev EER %s\n", rec.epoch,
                  rec.mean_loss, rec.mean_bce, rec.lr,
                  rec.dev_eer_pct ? (std::to_string(*rec.dev_eer_pct) + " %").c_str() : "n/a");
    out << buf << std::flush;
  };
  try {
    model::train(std::move(m), train_set, dev_set, topt);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; last good checkpoint: " + (dir / kLastCheckpoint).string());
  }
  out << "checkpoints: " << (dir / kBestCheckpoint).string() << ", " << (dir / kLastCheckpoint).string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string test;
  std::string report;
  double threshold = 0.5;
  std::size_t threads = 1;
};

inline int run_eval(const EvalOptions& o, std::ostream& out) {
  const auto m = model::load_checkpoint(o.checkpoint);
  print_header(out, "eval", model::config_to_json(m.config), m.config.seed);
  const Dataset ds = load_dataset(o.test);
  if (ds.size() == 0) throw EmptyInputError("eval: " + o.test + " has no utterances");
  for (const auto& f : ds.features) {
    if (f.dim != m.config.feat_dim) {
      throw ShapeError("feat_dim mismatch: sample " + f.sample_id + " has " + std::to_string(f.dim) +
                       " channels, checkpoint expects " + std::to_string(m.config.feat_dim));
    }
  }
  const auto set = model::prepare(ds, m.config);
  const auto pool = model::evaluation_pool(m, set, o.threads);
  const auto rep = metrics::evaluate(pool, o.threshold);
  const json meta = {{"checkpoint", o.checkpoint}, {"test", o.test}, {"epoch", m.epoch}};
  const auto rendered = metrics::render_report(rep, meta);
  out << rendered.text;
  fs::path report(o.report);
  tdl::detail::write_file_bytes(report, rendered.json);
  fs::path text = report;
  text.replace_extension(".txt");
  if (text != report) tdl::detail::write_file_bytes(text, rendered.text);
  return kOk;
}

// ---------------------------------------------------------------------------

struct StatsOptions {
  std::string data;
  double resolution_s = kDefaultLabelResolution;
};

inline int run_stats(const StatsOptions& o, std::ostream& out) {
  print_header(out, "stats", {{"data", o.data}, {"label_resolution_s", o.resolution_s}}, 0);
  const fs::path manifest = fs::path(o.data) / kManifestName;
  if (!fs::exists(o.data) || (fs::is_directory(o.data) && fs::is_empty(o.data))) {
    throw EmptyInputError("stats: " + o.data + " is empty");
  }
  if (!fs::exists(manifest)) throw IoError("stats: no " + std::string(kManifestName) + " in " + o.data);
  const Dataset ds = load_dataset(o.data);
  const auto st = dataset_stats(ds.annotations, o.resolution_s);
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %12s %16s\n%-12s %11.2f%% %15.2f%%\n", "", "frame-level",
                "utterance-level", "fake", st.frame_fake_pct, st.utterance_fake_pct);
  out << buf;
  out << "utterances " << st.num_utterances << " (" << st.num_fake_utterances << " with fake), frames "
      << st.num_frames << " (" << st.num_fake_frames << " fake)\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckOptions {
  std::string size = "tiny";
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  bool inject_fault = false;
};

inline int run_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  const auto size = gradcheck::parse_size(o.size);
  const auto cfg = gradcheck::config_for(size, o.seed);
  print_header(out, "gradcheck", model::config_to_json(cfg), o.seed);
  gradcheck::Options go{o.tolerance, o.seed, o.inject_fault};
  const auto rep = gradcheck::run(size, go);
  for (const auto& e : rep.entries) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-32s %6zu coords  max rel err %.3e  %s\n", e.name.c_str(), e.checked,
                  e.max_rel_error, e.passed ? "ok" : "FAIL");
    out << buf;
  }
  char buf[120];
  std::snprintf(buf, sizeof buf, "overall max rel err %.3e (tolerance %.1e): %s\n", rep.max_rel_error(),
                rep.tolerance, rep.passed() ? "PASS" : "FAIL");
  out << buf;
  return rep.passed() ? kOk : kNumeric;
}

// ---------------------------------------------------------------------------

struct ParamsOptions {
  std::optional<std::string> config;
};

inline int run_params(const ParamsOptions& o, std::ostream& out) {
  const auto cfg = resolve_config(o.config);
  print_header(out, "params", model::config_to_json(cfg), cfg.seed);
  const auto m = model::TdlModel::shapes_only(cfg);
  const auto rows = model::param_table(m);
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-10s %-36s %12s %14s\n", "layer", "shape", "params", "thousands");
  out << buf;
  std::size_t total = 0;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-36s %12zu %14.3f\n", r.name.c_str(), r.shape.c_str(), r.count,
                  static_cast<double>(r.count) / 1000.0);
    out << buf;
    total += r.count;
  }
  std::snprintf(buf, sizeof buf, "%-10s %-36s %12zu %14.3f\n", "total", "", total,
                static_cast<double>(total) / 1000.0);
  out << buf;
  return kOk;
}

}  // namespace tdl::cli
