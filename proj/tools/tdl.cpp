#include <iostream>

#include <CLI11.hpp>

#include "tdl/cli.hpp"

int main(int argc, char** argv) {
  using namespace tdl::cli;

  CLI::App app{"Temporal deepfake location: frame-level partial-spoof detection"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  c_synth->add_option("--out", synth.out, "Output dataset directory")->required();
  c_synth->add_option("--spec", synth.spec, "Synthetic spec JSON");
  c_synth->add_option("--seed", synth.seed, "Random seed");

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", train.config, "Training config (JSON or key=value)")->required();
  c_train->add_option("--train", train.train, "Training dataset directory")->required();
  c_train->add_option("--dev", train.dev, "Dev dataset directory")->required();
  c_train->add_option("--out", train.out, "Output directory for checkpoints and log")->required();
  c_train->add_option("--resume", train.resume, "Checkpoint to resume from");
  c_train->add_option("--threads", train.threads, "Worker threads")->check(CLI::PositiveNumber);

  EvalOptions eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  c_eval->add_option("--test", eval.test, "Test dataset directory")->required();
  c_eval->add_option("--report", eval.report, "JSON report path (text report alongside)")->required();
  c_eval->add_option("--threshold", eval.threshold, "Decision threshold on the real-class score");
  c_eval->add_option("--threads", eval.threads, "Worker threads")->check(CLI::PositiveNumber);

  StatsOptions stats;
  auto* c_stats = app.add_subcommand("stats", "Fake-class percentages of a dataset");
  c_stats->add_option("--data", stats.data, "Dataset directory")->required();

  GradcheckOptions grad;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  c_grad->add_option("--size", grad.size, "tiny or small")->check(CLI::IsMember({"tiny", "small"}));
  c_grad->add_option("--seed", grad.seed, "Random seed");
  c_grad->add_option("--tolerance", grad.tolerance, "Maximum relative error");
  c_grad->add_flag("--inject-fault", grad.inject_fault, "Corrupt one analytic gradient");

  ParamsOptions params;
  auto* c_params = app.add_subcommand("params", "Parameter count per layer");
  c_params->add_option("--config", params.config, "Model config (default: full-size shapes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kInvalid;
  }

  return guarded(std::cerr, [&] {
    if (*c_synth) return run_synth(synth, std::cout);
    if (*c_train) return run_train(train, std::cout);
    if (*c_eval) return run_eval(eval, std::cout);
    if (*c_stats) return run_stats(stats, std::cout);
    if (*c_grad) return run_gradcheck(grad, std::cout);
    return run_params(params, std::cout);
  });
}
