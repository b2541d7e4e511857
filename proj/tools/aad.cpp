#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aad/commands.hpp"
#include "aad/common.hpp"
#include "aad/config.hpp"

namespace {

struct SubOpts {
  std::string config_file;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, SubOpts& opts) {
  sub->add_option("-c,--config", opts.config_file, "key=value configuration file");
  sub->add_option("-s,--set", opts.sets, "override a configuration key (key=value)");
  // direct flags for the most common keys
  static const std::vector<std::pair<std::string, std::string>> flags = {
      {"--seed", "seed"},           {"--epochs", "epochs"},
      {"--duration", "duration_s"}, {"--container", "container"},
      {"--manifest", "manifest"},   {"--checkpoint", "checkpoint"},
      {"--out-dir", "out_dir"},     {"--sparsity", "sparsity"},
      {"--ablation", "ablation"},   {"--snr", "snr_db"},
      {"--n-trials", "n_trials"},   {"--run", "run"},
  };
  for (const auto& [flag, key] : flags) {
    const std::string k = key;
    auto* opts_ptr = &opts;
    sub->add_option_function<std::string>(
        flag, [k, opts_ptr](const std::string& v) { opts_ptr->sets.push_back(k + "=" + v); },
        "sets " + key);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint CNN-LSTM auditory attention decoding pipeline"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a labeled synthetic trial container + manifest"},
      {"preprocess", "convert raw EEG CSV + speaker WAVs into a trial container"},
      {"train", "train the attention classifier on a trial container"},
      {"eval", "evaluate a checkpoint on a trial container"},
      {"ablate", "input-zeroing evaluation or retraining without BLSTM/FC"},
      {"prune", "magnitude-prune a dense checkpoint and fine-tune"},
      {"report", "regenerate the summary of an existing run directory"},
  };
  std::map<std::string, SubOpts> opts;
  for (const auto& [name, desc] : commands) {
    auto* sub = app.add_subcommand(name, desc);
    add_common(sub, opts[name]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const SubOpts& o = opts[command];

  aad::RunConfig cfg;
  try {
    cfg = aad::parse_config(o.config_file, o.sets);
  } catch (const std::exception& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  }

  try {
    return aad::run_command(command, cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
