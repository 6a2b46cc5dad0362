#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "discrim/error.hpp"
#include "discrim/losses.hpp"
#include "discrim/trainer.hpp"

using namespace discrim;
using namespace discrim::app;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("discrim_trainer_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Small synthetic run: 4 classes of 8x8 blobs through a narrow mnist_small.
RunConfig synth_config(const fs::path& out) {
  RunConfig cfg;
  cfg.dataset = DatasetKind::synth;
  cfg.synth.classes = 4;
  cfg.synth.side = 8;
  cfg.synth.train_per_class = 100;
  cfg.synth.test_per_class = 25;
  cfg.synth.separation = 6.0;
  cfg.network.conv_widths = {4, 8};
  cfg.network.dense_width = 32;
  cfg.network.hidden_width = 16;
  cfg.epochs = 4;
  cfg.batch_size = 20;
  cfg.schedule.base_lr = 0.05;
  cfg.weight_decay = 0.0005;
  cfg.eval_batch_size = 37;
  cfg.out_dir = out.string();
  return cfg;
}

}  // namespace

TEST_CASE("a synthetic run writes every artifact and learns") {
  TempDir dir("basic");
  RunConfig cfg = synth_config(dir.path / "run");
  cfg.lambda_adaptive_discriminant = 0.001;
  cfg.lambda_adaptive_center = 0.1;
  cfg.epochs = 10;
  std::ostringstream progress;
  const RunResult result = train(cfg, &progress);
  for (const char* f : {"config.txt", "epoch_log.csv", "step_log.csv", "checkpoint.bin", "summary.txt"}) {
    CHECK(fs::exists(result.run_dir / f));
  }
  REQUIRE(result.epochs.size() == 10);
  CHECK(result.epochs.back().test_acc > 0.9);
  CHECK(result.epochs.back().components.count("L_AD") == 1);
  CHECK(result.epochs.back().components.count("L_AC") == 1);
  CHECK(progress.str().find("epoch  10/10") != std::string::npos);

  const auto epoch_lines = lines_of(result.run_dir / "epoch_log.csv");
  CHECK(epoch_lines.size() == 11);
  CHECK(epoch_lines[0] == epoch_csv_header());
  CHECK(split_csv(epoch_lines[1]).size() == split_csv(epoch_csv_header()).size());
  const auto step_lines = lines_of(result.run_dir / "step_log.csv");
  CHECK(step_lines.size() == 1 + 10 * 20);
  CHECK(step_lines[0] == loss::report_csv_header());
  CHECK(slurp(result.run_dir / "config.txt") == cfg.to_text());
  CHECK(slurp(result.run_dir / "summary.txt").find("optimizer_steps = 200") != std::string::npos);
}

TEST_CASE("identical config and seed reproduce the logs bitwise") {
  TempDir dir("determinism");
  RunConfig a = synth_config(dir.path / "a");
  a.lambda_adaptive_discriminant = 0.001;
  a.lambda_adaptive_center = 0.1;
  RunConfig b = a;
  b.out_dir = (dir.path / "b").string();
  train(a);
  train(b);
  CHECK(slurp(dir.path / "a" / "epoch_log.csv") == slurp(dir.path / "b" / "epoch_log.csv"));
  CHECK(slurp(dir.path / "a" / "step_log.csv") == slurp(dir.path / "b" / "step_log.csv"));

  // Re-running from the written config reproduces the run too.
  RunConfig c = load_config(dir.path / "a" / "config.txt");
  c.out_dir = (dir.path / "c").string();
  train(c);
  CHECK(slurp(dir.path / "a" / "epoch_log.csv") == slurp(dir.path / "c" / "epoch_log.csv"));

  RunConfig d = a;
  d.seed = 2;
  d.out_dir = (dir.path / "d").string();
  train(d);
  CHECK(slurp(dir.path / "a" / "step_log.csv") != slurp(dir.path / "d" / "step_log.csv"));
}

TEST_CASE("a reloaded checkpoint reproduces the logged metrics") {
  TempDir dir("reload");
  RunConfig cfg = synth_config(dir.path / "run");
  cfg.lambda_center = 0.5;
  const RunResult result = train(cfg);
  LoadedRun run = load_run(result.run_dir / "checkpoint.bin");
  CHECK(run.config.to_text() == cfg.to_text());
  const auto train_set = load_split(run.config, data::Split::train);
  const auto test_set = load_split(run.config, data::Split::test);
  const EvalResult tr = evaluate(run.network, train_set, 50);
  const EvalResult te = evaluate(run.network, test_set, 50);
  CHECK(std::abs(tr.accuracy - result.epochs.back().train_acc) < 1e-6);
  CHECK(std::abs(tr.loss - result.epochs.back().train_loss) < 1e-9);
  CHECK(std::abs(te.accuracy - result.epochs.back().test_acc) < 1e-6);
  CHECK(std::abs(te.discriminant_ratio - result.epochs.back().test_discriminant_ratio) < 1e-9);
}

TEST_CASE("evaluation never augments and matches a direct forward pass") {
  TempDir dir("augment");
  RunConfig cfg = synth_config(dir.path / "run");
  cfg.augment = true;
  cfg.epochs = 2;
  const RunResult result = train(cfg);
  LoadedRun run = load_run(result.run_dir / "checkpoint.bin");
  const auto test_set = load_split(run.config, data::Split::test);
  const EvalResult a = evaluate(run.network, test_set, 7);
  const EvalResult b = evaluate(run.network, test_set, 100);
  CHECK(a.accuracy == b.accuracy);
  CHECK(std::abs(a.loss - b.loss) < 1e-12);
  CHECK(a.accuracy == result.epochs.back().test_acc);

  const auto taps = forward_all(run.network, test_set, 13);
  const auto direct = run.network.forward(test_set.images, nn::Mode::eval);
  // Different batch sizes change the summation order inside the products.
  double worst = 0.0;
  for (std::size_t i = 0; i < direct.logits.size(); ++i) {
    worst = std::max(worst, std::abs(taps.at("logits")[i] - direct.logits[i]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("untrained networks sit at chance level") {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    RunConfig cfg = synth_config("unused");
    cfg.synth.classes = 10;
    cfg.synth.test_per_class = 200;
    cfg.seed = seed;
    const auto test_set = load_split(cfg, data::Split::test);
    Rng rng(seed);
    nn::Network net = build_network(cfg, test_set, rng);
    const double acc = evaluate(net, test_set, 500).accuracy;
    MESSAGE("seed " << seed << " accuracy " << acc);
    CHECK(std::abs(acc - 0.1) <= 0.05);
  }
}

TEST_CASE("a trailing batch of one sample is skipped") {
  TempDir dir("trailing");
  RunConfig cfg = synth_config(dir.path / "a");
  cfg.train_subset = 41;
  cfg.batch_size = 10;
  cfg.epochs = 1;
  train(cfg);
  CHECK(slurp(dir.path / "a" / "summary.txt").find("optimizer_steps = 4\n") != std::string::npos);
  cfg.train_subset = 42;
  cfg.out_dir = (dir.path / "b").string();
  train(cfg);
  CHECK(slurp(dir.path / "b" / "summary.txt").find("optimizer_steps = 5\n") != std::string::npos);
}

TEST_CASE("divergence is reported with its step") {
  TempDir dir("diverge");
  RunConfig cfg = synth_config(dir.path / "run");
  cfg.schedule.base_lr = 1e12;
  try {
    train(cfg);
    FAIL("training should have diverged");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1 step") != std::string::npos);
  }
}

TEST_CASE("datasets without a loader are configuration errors") {
  RunConfig cfg;
  cfg.dataset = DatasetKind::cifar10;
  cfg.data_dir = "/nowhere";
  CHECK_THROWS_AS(load_split(cfg, data::Split::train), ConfigError);
}

TEST_CASE("evaluation rejects mismatched datasets") {
  RunConfig cfg = synth_config("unused");
  const auto ds = load_split(cfg, data::Split::test);
  Rng rng(1);
  nn::Network net = build_network(cfg, ds, rng);
  RunConfig other = cfg;
  other.synth.classes = 5;
  CHECK_THROWS_AS(evaluate(net, load_split(other, data::Split::test), 10), ShapeError);
}

TEST_CASE("histogram export") {
  TempDir dir("hist");
  RunConfig cfg = synth_config(dir.path / "run");
  const RunResult result = train(cfg);
  LoadedRun run = load_run(result.run_dir / "checkpoint.bin");
  const auto test_set = load_split(run.config, data::Split::test);
  const fs::path out = dir.path / "hist.csv";
  export_histogram(run.network, test_set, 2, out);
  const auto lines = lines_of(out);
  CHECK(lines[0] == "z,is_target");
  CHECK(lines.size() == test_set.size() + 1);
  std::size_t targets = 0, class_two = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) targets += split_csv(lines[i]).at(1) == "1";
  for (int l : test_set.labels) class_two += l == 2;
  CHECK(targets == class_two);
  CHECK_THROWS_AS(export_histogram(run.network, test_set, 4, out), ConfigError);
}

TEST_CASE("scatter export needs a width-2 hidden layer and writes class means") {
  TempDir dir("scatter");
  RunConfig cfg = synth_config(dir.path / "wide");
  cfg.epochs = 1;
  train(cfg);
  LoadedRun wide = load_run(dir.path / "wide" / "checkpoint.bin");
  const auto test_set = load_split(wide.config, data::Split::test);
  CHECK_THROWS_AS(export_scatter(wide.network, test_set, dir.path / "s.csv"), ConfigError);

  cfg.network.hidden_width = 2;
  cfg.out_dir = (dir.path / "narrow").string();
  train(cfg);
  LoadedRun narrow = load_run(dir.path / "narrow" / "checkpoint.bin");
  const fs::path means_path = export_scatter(narrow.network, test_set, dir.path / "s.csv");
  CHECK(means_path == dir.path / "s_means.csv");
  const auto rows = lines_of(dir.path / "s.csv");
  const auto means = lines_of(means_path);
  CHECK(rows[0] == "x1,x2,class");
  CHECK(means[0] == "class,x1,x2");
  CHECK(rows.size() == test_set.size() + 1);
  REQUIRE(means.size() == 5);
  std::vector<double> sx(4, 0.0), sy(4, 0.0), n(4, 0.0);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = split_csv(rows[i]);
    const auto k = std::stoul(cells[2]);
    sx[k] += std::stod(cells[0]);
    sy[k] += std::stod(cells[1]);
    n[k] += 1.0;
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const auto cells = split_csv(means[k + 1]);
    CHECK(std::stoul(cells[0]) == k);
    CHECK(std::abs(std::stod(cells[1]) - sx[k] / n[k]) < 1e-9);
    CHECK(std::abs(std::stod(cells[2]) - sy[k] / n[k]) < 1e-9);
  }
}

TEST_CASE("epoch csv rows use round-trip numbers") {
  EpochRecord r;
  r.epoch = 3;
  r.lr = 0.01;
  r.train_loss = 0.1;
  r.train_acc = 0.5;
  r.test_loss = 1.0 / 3.0;
  r.test_acc = 0.25;
  r.test_discriminant_ratio = 2.0;
  r.objective = 0.75;
  r.components = {{"L_S", 0.5}, {"L_AC", 0.25}};
  const auto cells = split_csv(epoch_csv_row(r));
  REQUIRE(cells.size() == 13);
  CHECK(cells[0] == "3");
  CHECK(std::stod(cells[4]) == 1.0 / 3.0);
  CHECK(cells[8] == "0.5");
  CHECK(cells[9].empty());
  CHECK(cells[12] == "0.25");
}
