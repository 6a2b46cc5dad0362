#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "discrim/dataset.hpp"
#include "discrim/network.hpp"
#include "discrim/run_config.hpp"

namespace discrim::app {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;  // cross-entropy of an eval pass over the training split
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double test_discriminant_ratio = 0.0;
  double objective = 0.0;                     // mean training objective over the epoch's batches
  std::map<std::string, double> components;  // mean of each component over the epoch's batches
};

struct RunResult {
  std::filesystem::path run_dir;
  std::vector<EpochRecord> epochs;
  std::size_t best_test_epoch = 0;
};

struct EvalResult {
  std::size_t samples = 0;
  double loss = 0.0;      // mean softmax cross-entropy
  double accuracy = 0.0;  // argmax of the logits against the label
  double discriminant_ratio = 0.0;  // sum_k sigma_W^2 / sigma_T^2 of the logits over the whole split
};

// Split of the configured dataset, subset applied.
data::Dataset load_split(const RunConfig& config, data::Split split);

// Builds the network the config describes for `ds`, weights drawn from `rng`.
nn::Network build_network(const RunConfig& config, const data::Dataset& ds, Rng& rng);

/// Trains per the config and writes the run directory:
///   config.txt     resolved configuration (loadable with --config)
///   epoch_log.csv  one row per epoch
///   step_log.csv   objective components for every optimizer step
///   checkpoint.bin final-epoch network, optimizer and objective state
///   summary.txt    final and best-test-epoch metrics
/// Progress lines go to `progress` when given.
RunResult train(const RunConfig& config, std::ostream* progress = nullptr);

// Eval-mode forward of the whole dataset; returns every tap stacked over samples.
loss::TapMap forward_all(nn::Network& net, const data::Dataset& ds, std::size_t batch_size);
EvalResult evaluate(nn::Network& net, const data::Dataset& ds, std::size_t batch_size);

// Sum over neurons of within-class over total variance of batch statistics, no epsilon.
double discriminant_ratio(const Tensor& z, const Tensor& labels_onehot);

struct LoadedRun {
  nn::Network network;
  RunConfig config;
};

LoadedRun load_run(const std::filesystem::path& checkpoint);

// Rows "z,is_target" for neuron k's logit over every sample.
void export_histogram(nn::Network& net, const data::Dataset& ds, std::size_t neuron,
                      const std::filesystem::path& out, std::size_t batch_size = 500);

// Rows "x1,x2,class" of the width-2 hidden features, plus "<stem>_means.csv"
// with one "class,x1,x2" row per class. Returns the means path.
std::filesystem::path export_scatter(nn::Network& net, const data::Dataset& ds, const std::filesystem::path& out,
                                     std::size_t batch_size = 500);

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRecord& record);

}  // namespace discrim::app
