#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "discrim/dataset.hpp"
#include "discrim/network.hpp"
#include "discrim/objective.hpp"
#include "discrim/optim.hpp"

namespace discrim::app {

enum class DatasetKind { mnist, fashion_mnist, synth, cifar10, cifar100, stl10 };

DatasetKind parse_dataset(const std::string& id);
std::string to_string(DatasetKind kind);

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t side = 8;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 20;
  double separation = 6.0;
  std::uint64_t seed = 7;  // the test split uses seed + 1
};

/// Everything a training run depends on. `to_text` writes every key, so the
/// resolved file alone reproduces the run.
struct RunConfig {
  DatasetKind dataset = DatasetKind::mnist;
  std::string data_dir;           // empty: $DISCRIM_DATA_DIR
  std::size_t train_subset = 0;   // 0: whole split
  std::size_t test_subset = 0;
  SynthSpec synth;

  nn::Architecture architecture = nn::Architecture::mnist_small;
  nn::ArchitectureOptions network;

  double lambda_discriminant = 0.0;
  double lambda_adaptive_discriminant = 0.0;
  double lambda_center = 0.0;
  double lambda_adaptive_center = 0.0;
  std::string center_tap{loss::kHiddenTap};
  double alpha = 0.99;
  double beta = 1.0;
  double epsilon = 1e-8;
  loss::Reduction ce_reduction = loss::Reduction::mean;
  bool reset_statistics_each_epoch = false;

  optim::StepSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 100;
  std::uint64_t seed = 1;
  bool shuffle = true;

  bool augment = false;
  data::AugmentConfig augmentation;

  std::size_t eval_batch_size = 500;
  bool eval_train = true;
  std::string out_dir = "runs/default";

  // Throws ConfigError on an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  void validate() const;

  loss::ObjectiveConfig objective() const;
  std::filesystem::path resolved_data_dir() const;
};

// Key names accepted by RunConfig::set, in the order `to_text` writes them.
const std::vector<std::string>& config_keys();

// "key = value" lines; '#' starts a comment. Later lines override earlier ones.
std::map<std::string, std::string> parse_key_values(const std::string& text);
void apply_values(RunConfig& config, const std::map<std::string, std::string>& values);
RunConfig load_config(const std::filesystem::path& path);

/// Named settings from the published experiments. Each preset fixes the
/// objective and optimizer keys; `config_from_preset` rejects any override of
/// those keys that disagrees with the preset.
struct Preset {
  std::string name;
  std::map<std::string, std::string> values;
  std::vector<std::string> pinned;
};

const std::vector<Preset>& presets();
const Preset& find_preset(const std::string& name);
RunConfig config_from_preset(const std::string& name, const std::map<std::string, std::string>& overrides = {});

}  // namespace discrim::app
