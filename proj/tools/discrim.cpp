#include <CLI11.hpp>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <sstream>

#include "discrim/error.hpp"
#include "discrim/trainer.hpp"

namespace {

using namespace discrim;

struct CheckpointArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
};

void add_checkpoint_options(CLI::App* cmd, CheckpointArgs& args) {
  cmd->add_option("--ckpt", args.checkpoint, "Checkpoint written by train")->required();
  cmd->add_option("--data", args.data_dir, "Dataset directory (defaults to the run's data_dir or DISCRIM_DATA_DIR)");
  cmd->add_option("--split", args.split, "Dataset split")->check(CLI::IsMember({"train", "test"}));
}

app::LoadedRun open_run(const CheckpointArgs& args, data::Dataset& ds) {
  app::LoadedRun run = app::load_run(args.checkpoint);
  if (!args.data_dir.empty()) run.config.data_dir = args.data_dir;
  ds = app::load_split(run.config, args.split == "train" ? data::Split::train : data::Split::test);
  return run;
}

int run_command(CLI::App& cli, const std::string& config_path, const std::string& preset,
                const std::vector<std::string>& sets, std::uint64_t seed, const std::string& out, bool quiet,
                const CheckpointArgs& ckpt, std::size_t neuron) {
  if (cli.got_subcommand("train")) {
    if (config_path.empty() && preset.empty()) throw ConfigError("train needs --config, --preset or both");
    std::map<std::string, std::string> values;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError(fmt::format("cannot open config {}", config_path));
      std::stringstream ss;
      ss << in.rdbuf();
      values = app::parse_key_values(ss.str());
    }
    for (const auto& s : sets) {
      const auto kv = app::parse_key_values(s);
      if (kv.empty()) throw ConfigError(fmt::format("--set expects key=value, got '{}'", s));
      for (const auto& [k, v] : kv) values[k] = v;
    }
    app::RunConfig config;
    if (preset.empty()) {
      app::apply_values(config, values);
    } else {
      config = app::config_from_preset(preset, values);
    }
    if (cli.get_subcommand("train")->count("--seed") > 0) config.seed = seed;
    if (!out.empty()) config.out_dir = out;
    const auto result = app::train(config, quiet ? nullptr : &std::cerr);
    const auto& last = result.epochs.back();
    fmt::print("run_dir={}\nfinal_test_acc={}\nbest_test_epoch={}\n", result.run_dir.string(),
               loss::format_number(last.test_acc), result.best_test_epoch);
    return 0;
  }
  data::Dataset ds;
  if (cli.got_subcommand("eval")) {
    auto run = open_run(ckpt, ds);
    const auto r = app::evaluate(run.network, ds, run.config.eval_batch_size);
    fmt::print("split={}\nsamples={}\nloss={}\naccuracy={}\ndiscriminant_ratio={}\n", ckpt.split, r.samples,
               loss::format_number(r.loss), loss::format_number(r.accuracy),
               loss::format_number(r.discriminant_ratio));
    return 0;
  }
  if (cli.got_subcommand("export-histogram")) {
    auto run = open_run(ckpt, ds);
    app::export_histogram(run.network, ds, neuron, out, run.config.eval_batch_size);
    fmt::print("wrote {} rows to {}\n", ds.size(), out);
    return 0;
  }
  if (cli.got_subcommand("export-scatter")) {
    auto run = open_run(ckpt, ds);
    const auto means = app::export_scatter(run.network, ds, out, run.config.eval_batch_size);
    fmt::print("wrote {} rows to {} and class means to {}\n", ds.size(), out, means.string());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Discriminative-loss CNN training and export tool"};
  cli.require_subcommand(1);

  std::string config_path, preset, out;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool quiet = false;
  CheckpointArgs ckpt;
  std::size_t neuron = 0;

  auto* train = cli.add_subcommand("train", "Train a network and write a run directory");
  train->add_option("--config", config_path, "Flat key = value config file");
  train->add_option("--preset", preset, "Named preset (mnist-combined, mnist-baseline-desk, ...)");
  train->add_option("--set", sets, "Extra key=value override, repeatable");
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--out", out, "Run directory");
  train->add_flag("--quiet", quiet, "No per-epoch progress on stderr");

  auto* eval = cli.add_subcommand("eval", "Loss and accuracy of a checkpoint on a dataset split");
  add_checkpoint_options(eval, ckpt);

  auto* histogram = cli.add_subcommand("export-histogram", "Write one output neuron's inputs as CSV");
  add_checkpoint_options(histogram, ckpt);
  histogram->add_option("--neuron", neuron, "Output neuron index")->required();
  histogram->add_option("--out", out, "CSV path")->required();

  auto* scatter = cli.add_subcommand("export-scatter", "Write the 2-D hidden features and class means as CSV");
  add_checkpoint_options(scatter, ckpt);
  scatter->add_option("--out", out, "CSV path")->required();

  auto* presets = cli.add_subcommand("presets", "List preset names");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    cli.exit(e);
    return 2;
  }

  try {
    if (presets->parsed()) {
      for (const auto& p : app::presets()) fmt::print("{}\n", p.name);
      return 0;
    }
    return run_command(cli, config_path, preset, sets, seed, out, quiet, ckpt, neuron);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    fmt::print(stderr, "non-finite value: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
