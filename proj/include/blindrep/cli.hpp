#pragma once

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "blindrep/config.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/pipeline.hpp"

namespace blindrep {

// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric error.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"blindrep - attribute-blinded embedding experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir_flag;
  app.add_option("--config", config_path, "configuration file (key = value lines)");
  app.add_option("--set", overrides, "override a config key, e.g. --set gen.num_identities=60");
  app.add_option("--out", out_dir_flag, "output directory (overrides config and $BLINDREP_OUT)");

  CLI::App* cmd_generate = app.add_subcommand("generate", "generate the synthetic dataset");
  CLI::App* cmd_train = app.add_subcommand("train", "train a suppressor");
  std::string method = "sn";
  cmd_train->add_option("--method", method, "sn or lnl")->required();
  CLI::App* cmd_probe =
      app.add_subcommand("probe", "probe representations and emit the accuracy table");
  CLI::App* cmd_ablate = app.add_subcommand("ablate", "random-feature-ablation curve");
  CLI::App* cmd_fairness =
      app.add_subcommand("fairness", "equality-of-opportunity experiment");
  CLI::App* cmd_report = app.add_subcommand("report", "re-render tables from saved metrics");
  std::string sections_arg;
  cmd_report->add_option("--sections", sections_arg,
                         "comma-separated sections (table1,ablation,fairness)");
  CLI::App* cmd_all = app.add_subcommand("all", "run the full pipeline");

  // CLI11 wants argv-style (reversed) input.
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    for (const std::string& o : overrides) apply_config_override(cfg, o);
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;

    Pipeline pipeline(std::move(cfg));
    if (cmd_generate->parsed()) {
      pipeline.generate();
    } else if (cmd_train->parsed()) {
      if (method == "sn") {
        pipeline.train(SuppressorKind::kSensitiveNets);
      } else if (method == "lnl") {
        pipeline.train(SuppressorKind::kLearnNotToLearn);
      } else {
        throw ConfigError("train: unknown method '" + method + "' (expected sn or lnl)");
      }
    } else if (cmd_probe->parsed()) {
      pipeline.probe();
    } else if (cmd_ablate->parsed()) {
      pipeline.ablate();
    } else if (cmd_fairness->parsed()) {
      pipeline.fairness();
    } else if (cmd_report->parsed()) {
      std::vector<std::string> sections;
      std::stringstream ss(sections_arg);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) sections.push_back(tok);
      }
      pipeline.report(sections);
    } else if (cmd_all->parsed()) {
      pipeline.all();
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

inline int run_cli(int argc, char** argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace blindrep
