// Command-line front end. Every subcommand loads the config, applies flag
// overrides, and operates inside the run directory derived from the config
// hash, so a pipeline can be executed step by step or in one shot.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "faithlab/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (json)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "override output directory");
  cmd->add_option("--seed", args.seed, "override master seed")
      ->each([&args](const std::string&) { args.has_seed = true; });
  cmd->add_option("--threads", args.threads, "worker threads for per-instance steps")
      ->check(CLI::PositiveNumber);
}

faithlab::ExperimentConfig make_config(const CommonArgs& args) {
  faithlab::ExperimentConfig cfg;
  if (!args.config_path.empty()) cfg = faithlab::ExperimentConfig::load(args.config_path);
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  if (args.has_seed) cfg.master_seed = args.seed;
  cfg.validate();
  return cfg;
}

// Steps other than gen-data expect the run directory to exist already.
faithlab::RunPaths existing_run_dir(const faithlab::ExperimentConfig& cfg) {
  const auto paths = faithlab::run_paths(cfg);
  if (!std::filesystem::is_directory(paths.dir)) {
    throw std::runtime_error("run directory '" + paths.dir.string() +
                             "' does not exist; run gen-data first");
  }
  return paths;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faithlab: removal-based explanation faithfulness metrics and their exploits"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* run_cmd = app.add_subcommand("run", "full pipeline into a fresh run directory");
  auto* gen_cmd = app.add_subcommand("gen-data", "generate or load the corpus and write the splits");
  auto* train_cmd = app.add_subcommand("train", "train the base classifier");
  auto* explain_cmd = app.add_subcommand("explain", "compute explanations for every configured method");
  auto* eraser_cmd = app.add_subcommand("eval-eraser", "score explanations with removal metrics");
  auto* attack_cmd = app.add_subcommand("attack-eraser", "train case detectors and score the wrapped model");
  auto* trainx_cmd = app.add_subcommand("train-evalx", "train the evaluator models");
  auto* attackx_cmd = app.add_subcommand("attack-evalx", "run the label-encoding sweeps");
  auto* report_cmd = app.add_subcommand("report", "regenerate csv tables from persisted detail json");
  for (auto* cmd : {run_cmd, gen_cmd, train_cmd, explain_cmd, eraser_cmd, attack_cmd, trainx_cmd,
                    attackx_cmd, report_cmd}) {
    add_common(cmd, args);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = make_config(args);

    if (run_cmd->parsed()) {
      const auto manifest = faithlab::run(cfg, args.threads);
      std::cout << "run complete: " << faithlab::run_paths(cfg).dir.string() << "\n"
                << "artifacts: " << manifest.at("artifacts").size() << "\n";
      return 0;
    }

    if (gen_cmd->parsed()) {
      const auto paths = faithlab::run_paths(cfg);
      std::filesystem::create_directories(paths.dir);
      faithlab::step_gen_data(cfg, paths);
      std::cout << "wrote splits under " << paths.dir.string() << "\n";
      return 0;
    }

    const auto paths = existing_run_dir(cfg);
    if (train_cmd->parsed()) {
      faithlab::step_train(cfg, paths);
      std::cout << "wrote " << paths.model().string() << "\n";
    } else if (explain_cmd->parsed()) {
      faithlab::step_explain(cfg, paths, args.threads);
      std::cout << "wrote explanations for " << cfg.saliency_methods.size() << " method(s)\n";
    } else if (eraser_cmd->parsed()) {
      faithlab::step_eval_eraser(cfg, paths, args.threads);
      std::cout << "wrote " << paths.eraser_detail().string() << "\n";
    } else if (attack_cmd->parsed()) {
      faithlab::step_attack_eraser(cfg, paths, args.threads);
      std::cout << "wrote " << paths.attack_detail().string() << "\n";
    } else if (trainx_cmd->parsed()) {
      faithlab::step_train_evalx(cfg, paths);
      std::cout << "wrote evaluator models under " << paths.dir.string() << "\n";
    } else if (attackx_cmd->parsed()) {
      faithlab::step_attack_evalx(cfg, paths, args.threads);
      std::cout << "wrote " << paths.evalx_detail().string() << "\n";
    } else if (report_cmd->parsed()) {
      faithlab::write_tables(cfg, paths);
      std::cout << "wrote tables under " << paths.dir.string() << "\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
