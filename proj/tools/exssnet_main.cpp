#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "exssnet/cli.hpp"
#include "exssnet/errors.hpp"

using exssnet::cli::CliConfig;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::string mode;
  std::string kkt;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file");
  cmd->add_option("--set", args.sets, "override a config key (key=value)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--mode", args.mode, "supsup | ssnet | exssnet")
      ->check(CLI::IsMember({"supsup", "ssnet", "exssnet"}));
  cmd->add_option("--kkt", args.kkt, "enable transfer selection: on | off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--seed", args.seed, "random seed")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

// File first, then --set overrides in order, then the dedicated flags.
CliConfig build_config(const CommonArgs& args) {
  CliConfig config;
  if (!args.config_path.empty()) {
    config = exssnet::cli::parse_config_file(args.config_path);
  }
  for (const auto& assignment : args.sets) {
    exssnet::cli::apply_override(config, assignment);
  }
  if (!args.mode.empty()) {
    exssnet::cli::apply_override(config, "mode=" + args.mode);
  }
  if (!args.kkt.empty()) {
    exssnet::cli::apply_override(config, "kkt=" + args.kkt);
  }
  if (args.seed_given) {
    exssnet::cli::apply_override(config, "seed=" + std::to_string(args.seed));
    exssnet::cli::apply_override(config, "seeds=" + std::to_string(args.seed));
  }
  if (!args.out_dir.empty()) {
    config.out_dir = args.out_dir;
  }
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning experiments with per-task supermasks"};
  app.require_subcommand(1);

  CommonArgs run_args, sweep_args, eval_args;
  std::string report_checkpoint, report_out, eval_checkpoint;

  CLI::App* run = app.add_subcommand("run", "run one experiment");
  add_common_options(run, run_args);

  CLI::App* sweep =
      app.add_subcommand("sweep", "run a sweep over density/overlap/tasks");
  add_common_options(sweep, sweep_args);

  CLI::App* report =
      app.add_subcommand("report", "summarize a checkpoint's masks and storage");
  report->add_option("checkpoint", report_checkpoint, "checkpoint file")
      ->required();
  report->add_option("--out", report_out, "directory for report.csv");

  CLI::App* eval = app.add_subcommand("eval", "re-evaluate a checkpoint");
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  add_common_options(eval, eval_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) {
      return exssnet::cli::cmd_run(build_config(run_args));
    }
    if (sweep->parsed()) {
      return exssnet::cli::cmd_sweep(build_config(sweep_args));
    }
    if (report->parsed()) {
      return exssnet::cli::cmd_report(report_checkpoint, report_out);
    }
    if (eval->parsed()) {
      return exssnet::cli::cmd_eval(build_config(eval_args), eval_checkpoint);
    }
  } catch (const std::exception& e) {
    // Config construction failures (bad file, unknown key, bad value).
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
