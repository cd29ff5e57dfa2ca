#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stagenet/experiment.hpp"

namespace {

stagenet::ExperimentConfig load_config(const std::string& config_path,
                                       std::optional<std::uint64_t> seed,
                                       std::optional<std::string> output,
                                       std::optional<int> runs) {
  auto cfg = stagenet::ExperimentConfig::load(config_path);
  if (seed) cfg.train.seed = *seed;
  if (output) cfg.output_dir = *output;
  if (runs) cfg.n_runs = *runs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curriculum multi-task 3D CNN pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::optional<int> runs;
  app.add_option("--config", config_path, "experiment config JSON")->required();
  app.add_option("--seed", seed, "override the training seed");
  app.add_option("--output", output, "override the output directory");
  app.add_option("--runs", runs, "override the number of runs");

  app.add_subcommand("generate", "write synthetic manifests + volumes + ground truth");
  app.add_subcommand("pretrain", "sex-classification proxy pretraining of the backbone");
  app.add_subcommand("train", "run curriculum training for every run seed");
  app.add_subcommand("evaluate", "in-distribution + zero-shot OOD reports");

  auto* occlude = app.add_subcommand("occlude", "occlusion-sensitivity heatmap for one subject");
  std::string subject_id, checkpoint;
  occlude->add_option("--subject", subject_id, "subject id")->required();
  occlude->add_option("--checkpoint", checkpoint,
                      "checkpoint path (default: runs/run_0/checkpoint.ck)");

  auto* search = app.add_subcommand("search", "random hyperparameter search");
  int n_trials = 8;
  int budget_epochs = 5;
  search->add_option("--trials", n_trials, "number of random trials");
  search->add_option("--budget-epochs", budget_epochs, "epochs per trial");

  app.add_subcommand("report", "re-aggregate per-run metrics into report.json");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = load_config(config_path, seed, output, runs);
    if (app.got_subcommand("generate")) {
      stagenet::cmd_generate(cfg);
      std::cout << "dataset written to " << stagenet::data_dir(cfg).string() << "\n";
    } else if (app.got_subcommand("pretrain")) {
      const std::string ck = stagenet::cmd_pretrain(cfg);
      std::cout << "backbone checkpoint written to " << ck << "\n";
    } else if (app.got_subcommand("train")) {
      auto arts = stagenet::cmd_train(cfg);
      for (const auto& a : arts) std::cout << "checkpoint: " << a.checkpoint << "\n";
    } else if (app.got_subcommand("evaluate")) {
      stagenet::cmd_evaluate(cfg);
      std::cout << "reports written to " << stagenet::reports_dir(cfg).string() << "\n";
    } else if (app.got_subcommand("occlude")) {
      if (checkpoint.empty()) {
        checkpoint = (stagenet::runs_dir(cfg) / "run_0" / "checkpoint.ck").string();
      }
      stagenet::cmd_occlude(cfg, checkpoint, subject_id);
      std::cout << "heatmap written to "
                << (std::filesystem::path(cfg.output_dir) / "occlusion").string() << "\n";
    } else if (app.got_subcommand("search")) {
      auto result = stagenet::cmd_search(cfg, n_trials, budget_epochs);
      std::cout << "best: lr=" << result.best.learning_rate
                << " optimizer=" << stagenet::to_string(result.best.optimizer)
                << " batch_size=" << result.best.batch_size << "\n";
    } else if (app.got_subcommand("report")) {
      stagenet::cmd_report(cfg);
      std::cout << "report written to "
                << (stagenet::reports_dir(cfg) / "report.json").string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
