#include "discrim/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <fstream>
#include <sstream>

namespace discrim::app {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, value));
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError(fmt::format("{}: expected an unsigned integer, got '{}'", key, value));
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty() || !std::isfinite(out)) {
    throw ConfigError(fmt::format("{}: expected a finite number, got '{}'", key, value));
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, value));
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_size(key, item));
  }
  return out;
}

std::string num(double v) { return loss::format_number(v); }
std::string flag(bool b) { return b ? "true" : "false"; }

const std::vector<std::string> kPinned{
    "lambda_discriminant", "lambda_adaptive_discriminant", "lambda_center", "lambda_adaptive_center",
    "alpha", "beta", "lr", "lr_factor", "lr_period", "momentum", "weight_decay", "batch_size"};

std::map<std::string, std::string> objective_values(double d, double ad, double c, double ac) {
  return {{"lambda_discriminant", num(d)},
          {"lambda_adaptive_discriminant", num(ad)},
          {"lambda_center", num(c)},
          {"lambda_adaptive_center", num(ac)},
          {"alpha", "0.99"},
          {"beta", "1"}};
}

std::vector<Preset> build_presets() {
  std::vector<Preset> out;
  auto add = [&](const std::string& name, std::map<std::string, std::string> base,
                 std::map<std::string, std::string> objective) {
    base.insert(objective.begin(), objective.end());
    base.emplace("momentum", "0.9");
    base.emplace("batch_size", "100");
    base.emplace("lr", "0.01");
    base.emplace("lr_factor", "10");
    out.push_back({name, base, kPinned});
  };
  auto add_with_desk = [&](const std::string& name, const std::map<std::string, std::string>& base,
                           const std::map<std::string, std::string>& objective) {
    add(name, base, objective);
    auto desk = base;
    desk["train_subset"] = "10000";
    desk["test_subset"] = "2000";
    desk["epochs"] = "15";
    add(name + "-desk", desk, objective);
  };

  const std::map<std::string, std::string> mnist{{"dataset", "mnist"},     {"architecture", "mnist_small"},
                                                 {"epochs", "100"},        {"lr_period", "50"},
                                                 {"weight_decay", "0.01"}, {"augment", "false"}};
  add_with_desk("mnist-baseline", mnist, objective_values(0, 0, 0, 0));
  add_with_desk("mnist-discriminant", mnist, objective_values(0.01, 0, 0, 0));
  add_with_desk("mnist-adaptive-discriminant", mnist, objective_values(0, 0.01, 0, 0));
  add_with_desk("mnist-center", mnist, objective_values(0, 0, 1.0, 0));
  add_with_desk("mnist-adaptive-center", mnist, objective_values(0, 0, 0, 1.0));
  add_with_desk("mnist-combined", mnist, objective_values(0, 0.001, 0, 1.0));

  struct Comparison {
    std::string prefix, dataset, architecture, weight_decay;
    bool augment;
    double lambda_d, lambda_c, lambda_1, lambda_2;
  };
  const std::vector<Comparison> comparisons{
      {"fashion", "fashion_mnist", "mnist_small", "0.01", false, 0.001, 1.0, 0.0001, 1.0},
      {"cifar10", "cifar10", "comparison", "0.01", true, 0.001, 0.08, 0.0001, 0.08},
      {"cifar100", "cifar100", "comparison", "0.001", true, 0.01, 0.01, 0.01, 0.001},
      {"stl10", "stl10", "comparison", "0.01", true, 0.01, 0.01, 0.01, 0.001},
  };
  for (const auto& c : comparisons) {
    const std::map<std::string, std::string> base{{"dataset", c.dataset},
                                                  {"architecture", c.architecture},
                                                  {"epochs", "500"},
                                                  {"lr_period", "100"},
                                                  {"weight_decay", c.weight_decay},
                                                  {"augment", flag(c.augment)}};
    add_with_desk(c.prefix + "-baseline", base, objective_values(0, 0, 0, 0));
    add_with_desk(c.prefix + "-discriminant", base, objective_values(c.lambda_d, 0, 0, 0));
    add_with_desk(c.prefix + "-center", base, objective_values(0, 0, c.lambda_c, 0));
    add_with_desk(c.prefix + "-combined", base, objective_values(0, c.lambda_1, 0, c.lambda_2));
  }
  return out;
}

}  // namespace

DatasetKind parse_dataset(const std::string& id) {
  if (id == "mnist") return DatasetKind::mnist;
  if (id == "fashion_mnist") return DatasetKind::fashion_mnist;
  if (id == "synth") return DatasetKind::synth;
  if (id == "cifar10") return DatasetKind::cifar10;
  if (id == "cifar100") return DatasetKind::cifar100;
  if (id == "stl10") return DatasetKind::stl10;
  throw ConfigError(fmt::format("unknown dataset '{}'", id));
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::fashion_mnist: return "fashion_mnist";
    case DatasetKind::synth: return "synth";
    case DatasetKind::cifar10: return "cifar10";
    case DatasetKind::cifar100: return "cifar100";
    case DatasetKind::stl10: return "stl10";
  }
  return "?";
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [key, value] : RunConfig{}.to_map()) out.push_back(key);
    return out;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "dataset") dataset = parse_dataset(value);
  else if (key == "data_dir") data_dir = value;
  else if (key == "train_subset") train_subset = parse_size(key, value);
  else if (key == "test_subset") test_subset = parse_size(key, value);
  else if (key == "synth_classes") synth.classes = parse_size(key, value);
  else if (key == "synth_side") synth.side = parse_size(key, value);
  else if (key == "synth_train_per_class") synth.train_per_class = parse_size(key, value);
  else if (key == "synth_test_per_class") synth.test_per_class = parse_size(key, value);
  else if (key == "synth_separation") synth.separation = parse_double(key, value);
  else if (key == "synth_seed") synth.seed = parse_u64(key, value);
  else if (key == "architecture") architecture = nn::parse_architecture(value);
  else if (key == "conv_widths") network.conv_widths = parse_size_list(key, value);
  else if (key == "dense_width") network.dense_width = parse_size(key, value);
  else if (key == "fc_width") network.fc_width = parse_size(key, value);
  else if (key == "hidden_width") network.hidden_width = parse_size(key, value);
  else if (key == "dropout_keep") network.dropout_keep = parse_double(key, value);
  else if (key == "batchnorm_momentum") network.batchnorm_momentum = parse_double(key, value);
  else if (key == "batchnorm_epsilon") network.batchnorm_epsilon = parse_double(key, value);
  else if (key == "lambda_discriminant") lambda_discriminant = parse_double(key, value);
  else if (key == "lambda_adaptive_discriminant") lambda_adaptive_discriminant = parse_double(key, value);
  else if (key == "lambda_center") lambda_center = parse_double(key, value);
  else if (key == "lambda_adaptive_center") lambda_adaptive_center = parse_double(key, value);
  else if (key == "center_tap") center_tap = value;
  else if (key == "alpha") alpha = parse_double(key, value);
  else if (key == "beta") beta = parse_double(key, value);
  else if (key == "epsilon") epsilon = parse_double(key, value);
  else if (key == "ce_reduction") {
    if (value == "mean") ce_reduction = loss::Reduction::mean;
    else if (value == "sum") ce_reduction = loss::Reduction::sum;
    else throw ConfigError(fmt::format("ce_reduction: expected mean or sum, got '{}'", value));
  }
  else if (key == "reset_statistics_each_epoch") reset_statistics_each_epoch = parse_bool(key, value);
  else if (key == "lr") schedule.base_lr = parse_double(key, value);
  else if (key == "lr_factor") schedule.factor = parse_double(key, value);
  else if (key == "lr_period") schedule.period = parse_size(key, value);
  else if (key == "momentum") momentum = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "epochs") epochs = parse_size(key, value);
  else if (key == "batch_size") batch_size = parse_size(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "shuffle") shuffle = parse_bool(key, value);
  else if (key == "augment") augment = parse_bool(key, value);
  else if (key == "augment_rotation_deg") augmentation.max_rotation_deg = parse_double(key, value);
  else if (key == "augment_shift_fraction") augmentation.max_shift_fraction = parse_double(key, value);
  else if (key == "augment_scale_min") augmentation.min_scale = parse_double(key, value);
  else if (key == "augment_scale_max") augmentation.max_scale = parse_double(key, value);
  else if (key == "eval_batch_size") eval_batch_size = parse_size(key, value);
  else if (key == "eval_train") eval_train = parse_bool(key, value);
  else if (key == "out_dir") out_dir = value;
  else throw ConfigError(fmt::format("unknown config key '{}'", key));
}

std::map<std::string, std::string> RunConfig::to_map() const {
  return {
      {"dataset", to_string(dataset)},
      {"data_dir", data_dir},
      {"train_subset", std::to_string(train_subset)},
      {"test_subset", std::to_string(test_subset)},
      {"synth_classes", std::to_string(synth.classes)},
      {"synth_side", std::to_string(synth.side)},
      {"synth_train_per_class", std::to_string(synth.train_per_class)},
      {"synth_test_per_class", std::to_string(synth.test_per_class)},
      {"synth_separation", num(synth.separation)},
      {"synth_seed", std::to_string(synth.seed)},
      {"architecture", nn::to_string(architecture)},
      {"conv_widths", fmt::format("{}", fmt::join(network.conv_widths, ","))},
      {"dense_width", std::to_string(network.dense_width)},
      {"fc_width", std::to_string(network.fc_width)},
      {"hidden_width", std::to_string(network.hidden_width)},
      {"dropout_keep", num(network.dropout_keep)},
      {"batchnorm_momentum", num(network.batchnorm_momentum)},
      {"batchnorm_epsilon", num(network.batchnorm_epsilon)},
      {"lambda_discriminant", num(lambda_discriminant)},
      {"lambda_adaptive_discriminant", num(lambda_adaptive_discriminant)},
      {"lambda_center", num(lambda_center)},
      {"lambda_adaptive_center", num(lambda_adaptive_center)},
      {"center_tap", center_tap},
      {"alpha", num(alpha)},
      {"beta", num(beta)},
      {"epsilon", num(epsilon)},
      {"ce_reduction", ce_reduction == loss::Reduction::mean ? "mean" : "sum"},
      {"reset_statistics_each_epoch", flag(reset_statistics_each_epoch)},
      {"lr", num(schedule.base_lr)},
      {"lr_factor", num(schedule.factor)},
      {"lr_period", std::to_string(schedule.period)},
      {"momentum", num(momentum)},
      {"weight_decay", num(weight_decay)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"seed", std::to_string(seed)},
      {"shuffle", flag(shuffle)},
      {"augment", flag(augment)},
      {"augment_rotation_deg", num(augmentation.max_rotation_deg)},
      {"augment_shift_fraction", num(augmentation.max_shift_fraction)},
      {"augment_scale_min", num(augmentation.min_scale)},
      {"augment_scale_max", num(augmentation.max_scale)},
      {"eval_batch_size", std::to_string(eval_batch_size)},
      {"eval_train", flag(eval_train)},
      {"out_dir", out_dir},
  };
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, value] : to_map()) out += fmt::format("{} = {}\n", key, value);
  return out;
}

void RunConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_batch_size == 0) throw ConfigError("eval_batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
  if (!(network.dropout_keep > 0.0 && network.dropout_keep <= 1.0)) throw ConfigError("dropout_keep must lie in (0, 1]");
  if (network.hidden_width == 0 || network.dense_width == 0 || network.fc_width == 0) {
    throw ConfigError("layer widths must be positive");
  }
  for (double w : {lambda_discriminant, lambda_adaptive_discriminant, lambda_center, lambda_adaptive_center}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be >= 0");
  }
  if (augment && (augmentation.min_scale <= 0.0 || augmentation.min_scale > augmentation.max_scale)) {
    throw ConfigError("augment_scale_min must be positive and not above augment_scale_max");
  }
  if (dataset == DatasetKind::synth && synth.classes < 2) throw ConfigError("synth_classes must be >= 2");
  optim::lr_at_epoch(0, schedule);
  objective().validate();
}

loss::ObjectiveConfig RunConfig::objective() const {
  loss::ObjectiveConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.epsilon = epsilon;
  cfg.ce_reduction = ce_reduction;
  cfg.reset_each_epoch = reset_statistics_each_epoch;
  const std::string logits{loss::kLogitsTap};
  if (lambda_discriminant > 0.0) cfg.terms.push_back({loss::AuxKind::discriminant, lambda_discriminant, logits});
  if (lambda_adaptive_discriminant > 0.0) {
    cfg.terms.push_back({loss::AuxKind::adaptive_discriminant, lambda_adaptive_discriminant, logits});
  }
  if (lambda_center > 0.0) cfg.terms.push_back({loss::AuxKind::center, lambda_center, center_tap});
  if (lambda_adaptive_center > 0.0) {
    cfg.terms.push_back({loss::AuxKind::adaptive_center, lambda_adaptive_center, center_tap});
  }
  return cfg;
}

std::filesystem::path RunConfig::resolved_data_dir() const {
  if (!data_dir.empty()) return data_dir;
  if (const char* env = std::getenv("DISCRIM_DATA_DIR"); env != nullptr && *env != '\0') return env;
  throw ConfigError("no data directory: set data_dir or DISCRIM_DATA_DIR");
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", line_no));
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_values(RunConfig& config, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) config.set(key, value);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig config;
  apply_values(config, parse_key_values(ss.str()));
  return config;
}

const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = build_presets();
  return all;
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets()) {
    if (p.name == name) return p;
  }
  throw ConfigError(fmt::format("unknown preset '{}'", name));
}

RunConfig config_from_preset(const std::string& name, const std::map<std::string, std::string>& overrides) {
  const Preset& preset = find_preset(name);
  RunConfig config;
  apply_values(config, preset.values);
  const auto pinned = config.to_map();
  for (const auto& [key, value] : overrides) {
    config.set(key, value);
    if (std::find(preset.pinned.begin(), preset.pinned.end(), key) != preset.pinned.end() &&
        config.to_map().at(key) != pinned.at(key)) {
      throw ConfigError(fmt::format("preset {} fixes {} = {}, config asks for {}", name, key, pinned.at(key), value));
    }
  }
  return config;
}

}  // namespace discrim::app
