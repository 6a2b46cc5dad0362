#include "discrim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fstream>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "discrim/optim.hpp"

namespace discrim::app {

namespace {

constexpr std::string_view kConfigPrefix = "config.";
const std::vector<std::string> kComponentColumns{"L_S", "L_D", "L_AD", "L_C", "L_AC"};

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  return out;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Sample indices of each optimizer step; a trailing batch of one sample is dropped.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Keep freed activation buffers in the heap between steps instead of handing
// them back to the kernel and faulting them in again.
void retain_heap_pages() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace

data::Dataset load_split(const RunConfig& config, data::Split split) {
  const std::size_t subset = split == data::Split::train ? config.train_subset : config.test_subset;
  switch (config.dataset) {
    case DatasetKind::mnist:
    case DatasetKind::fashion_mnist:
      return data::head(data::load_mnist_dir(config.resolved_data_dir(), split), subset);
    case DatasetKind::synth: {
      const auto& s = config.synth;
      const std::size_t per_class = split == data::Split::train ? s.train_per_class : s.test_per_class;
      data::Dataset ds = data::synth_blobs(s.classes, s.side, per_class, s.separation,
                                           split == data::Split::train ? s.seed : s.seed + 1);
      ds.split = split;
      return data::head(ds, subset);
    }
    case DatasetKind::cifar10:
    case DatasetKind::cifar100:
    case DatasetKind::stl10:
      break;
  }
  throw ConfigError(fmt::format("dataset '{}' has no loader in this build (IDX datasets and synth only)",
                                to_string(config.dataset)));
}

nn::Network build_network(const RunConfig& config, const data::Dataset& ds, Rng& rng) {
  return nn::build_architecture(config.architecture, ds.sample_shape(), ds.classes, config.network, rng);
}

double discriminant_ratio(const Tensor& z, const Tensor& labels_onehot) {
  return loss::discriminant_batch(z, labels_onehot, 0.0).loss;
}

loss::TapMap forward_all(nn::Network& net, const data::Dataset& ds, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  loss::TapMap all;
  const std::size_t n = ds.size();
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = data::make_batch(ds, idx);
    const auto out = net.forward(batch.inputs, nn::Mode::eval);
    for (const auto& [name, t] : out.taps) {
      auto it = all.find(name);
      if (it == all.end()) {
        Shape shape = t.shape();
        shape[0] = n;
        it = all.emplace(name, Tensor(shape)).first;
      }
      const std::size_t per = t.size() / t.dim(0);
      std::memcpy(it->second.data_mut().data() + start * per, t.data().data(), t.size() * sizeof(double));
    }
  }
  return all;
}

EvalResult evaluate(nn::Network& net, const data::Dataset& ds, std::size_t batch_size) {
  if (ds.size() == 0) throw ShapeError("cannot evaluate an empty dataset");
  if (ds.sample_shape() != net.input_shape() || ds.classes != net.classes()) {
    throw ShapeError(fmt::format("dataset samples {} with {} classes do not fit a network for {} with {} classes",
                                 shape_string(ds.sample_shape()), ds.classes, shape_string(net.input_shape()),
                                 net.classes()));
  }
  const auto taps = forward_all(net, ds, batch_size);
  const Tensor& logits = taps.at(std::string(loss::kLogitsTap));
  const Tensor t = loss::onehot(ds.labels, ds.classes);
  EvalResult r;
  r.samples = ds.size();
  r.loss = loss::softmax_cross_entropy(logits, t).loss;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (argmax_row(logits.row(i)) == static_cast<std::size_t>(ds.labels[i])) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  r.discriminant_ratio = ds.size() >= 2 ? discriminant_ratio(logits, t) : 0.0;
  return r;
}

std::string epoch_csv_header() {
  std::string h = "epoch,lr,train_loss,train_acc,test_loss,test_acc,test_discriminant_ratio,objective";
  for (const auto& c : kComponentColumns) h += "," + c;
  return h;
}

std::string epoch_csv_row(const EpochRecord& r) {
  using loss::format_number;
  std::string row = fmt::format("{},{},{},{},{},{},{},{}", r.epoch, format_number(r.lr), format_number(r.train_loss),
                                format_number(r.train_acc), format_number(r.test_loss), format_number(r.test_acc),
                                format_number(r.test_discriminant_ratio), format_number(r.objective));
  for (const auto& c : kComponentColumns) {
    row += ",";
    if (auto it = r.components.find(c); it != r.components.end()) row += format_number(it->second);
  }
  return row;
}

RunResult train(const RunConfig& config, std::ostream* progress) {
  config.validate();
  retain_heap_pages();
  const data::Dataset train_set = load_split(config, data::Split::train);
  const data::Dataset test_set = load_split(config, data::Split::test);
  if (train_set.size() < 2) throw ConfigError("training split needs at least 2 samples");

  Rng master(config.seed);
  Rng init_rng = master.fork(1);
  Rng shuffle_rng = master.fork(2);
  Rng augment_rng = master.fork(3);

  nn::Network net = build_network(config, train_set, init_rng);
  loss::Objective objective(config.objective(), net.classes(), net.tap_widths());
  optim::OptimizerState opt{config.momentum, config.weight_decay, {}};
  const auto params = net.parameters();

  RunResult result;
  result.run_dir = config.out_dir;
  std::filesystem::create_directories(result.run_dir);
  {
    auto out = open_output(result.run_dir / "config.txt");
    out << config.to_text();
  }
  auto epoch_log = open_output(result.run_dir / "epoch_log.csv");
  auto step_log = open_output(result.run_dir / "step_log.csv");
  epoch_log << epoch_csv_header() << '\n';
  step_log << loss::report_csv_header() << '\n';

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  double best_test_acc = -1.0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.reset_statistics_each_epoch && epoch > 0) objective.reset_statistics();
    const double lr = optim::lr_at_epoch(epoch, config.schedule);
    if (config.shuffle) shuffle_rng.shuffle(std::span<std::size_t>(order));

    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = lr;
    std::size_t batches = 0;
    for (const auto& idx : make_batches(order, config.batch_size)) {
      ++step;
      try {
        const auto batch = config.augment ? data::make_batch(train_set, idx, &augment_rng, &config.augmentation)
                                          : data::make_batch(train_set, idx);
        const auto out = net.forward(batch.inputs, nn::Mode::train);
        const auto report = objective.evaluate(out.taps, batch.labels_onehot);
        net.backward(report.gradients);
        optim::sgd_step(params, opt, lr);
        objective.finish_step(out.taps, batch.labels_onehot);
        step_log << loss::report_csv_row(step, report) << '\n';
        record.objective += report.total;
        for (const auto& [name, value] : report.components) record.components[name] += value;
        ++batches;
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("epoch {} step {}: {}", epoch + 1, step, e.what()));
      }
    }
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
    record.objective *= inv;
    for (auto& [name, value] : record.components) value *= inv;

    if (config.eval_train) {
      const EvalResult tr = evaluate(net, train_set, config.eval_batch_size);
      record.train_loss = tr.loss;
      record.train_acc = tr.accuracy;
    } else {
      record.train_loss = std::nan("");
      record.train_acc = std::nan("");
    }
    const EvalResult te = evaluate(net, test_set, config.eval_batch_size);
    record.test_loss = te.loss;
    record.test_acc = te.accuracy;
    record.test_discriminant_ratio = te.discriminant_ratio;
    if (te.accuracy > best_test_acc) {
      best_test_acc = te.accuracy;
      result.best_test_epoch = record.epoch;
    }
    epoch_log << epoch_csv_row(record) << '\n';
    epoch_log.flush();
    step_log.flush();
    if (progress != nullptr) {
      fmt::print(*progress, "epoch {:>3}/{} lr {} objective {:.6f} train_acc {:.4f} test_acc {:.4f} ratio {:.6f}\n",
                 record.epoch, config.epochs, lr, record.objective, record.train_acc, record.test_acc,
                 record.test_discriminant_ratio);
      progress->flush();
    }
    result.epochs.push_back(std::move(record));
  }

  TensorArchive extra;
  extra.manifest["seed"] = std::to_string(config.seed);
  extra.manifest["epoch"] = std::to_string(config.epochs);
  for (const auto& [key, value] : config.to_map()) extra.manifest[std::string(kConfigPrefix) + key] = value;
  for (auto& [name, t] : optim::snapshot(opt)) extra.tensors.emplace(name, std::move(t));
  for (auto& [name, t] : objective.snapshot()) extra.tensors.emplace(name, std::move(t));
  save_archive(result.run_dir / "checkpoint.bin", nn::to_archive(net, extra));

  const EpochRecord& last = result.epochs.back();
  const EpochRecord& best = result.epochs.at(result.best_test_epoch - 1);
  auto summary = open_output(result.run_dir / "summary.txt");
  using loss::format_number;
  summary << fmt::format("final_epoch = {}\n", last.epoch);
  summary << fmt::format("final_train_loss = {}\n", format_number(last.train_loss));
  summary << fmt::format("final_train_acc = {}\n", format_number(last.train_acc));
  summary << fmt::format("final_test_loss = {}\n", format_number(last.test_loss));
  summary << fmt::format("final_test_acc = {}\n", format_number(last.test_acc));
  summary << fmt::format("final_test_discriminant_ratio = {}\n", format_number(last.test_discriminant_ratio));
  summary << fmt::format("best_test_epoch = {}\n", best.epoch);
  summary << fmt::format("best_test_acc = {}\n", format_number(best.test_acc));
  summary << fmt::format("optimizer_steps = {}\n", step);
  return result;
}

LoadedRun load_run(const std::filesystem::path& checkpoint) {
  const TensorArchive archive = load_archive(checkpoint);
  RunConfig config;
  for (const auto& [key, value] : archive.manifest) {
    if (key.starts_with(kConfigPrefix)) config.set(key.substr(kConfigPrefix.size()), value);
  }
  return LoadedRun{nn::network_from_archive(archive), config};
}

void export_histogram(nn::Network& net, const data::Dataset& ds, std::size_t neuron,
                      const std::filesystem::path& out, std::size_t batch_size) {
  if (neuron >= net.classes()) {
    throw ConfigError(fmt::format("neuron {} out of range: the output layer has {} neurons", neuron, net.classes()));
  }
  const auto taps = forward_all(net, ds, batch_size);
  const Tensor& logits = taps.at(std::string(loss::kLogitsTap));
  auto file = open_output(out);
  file << "z,is_target\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    file << loss::format_number(logits.row(i)[neuron]) << ',' << (ds.labels[i] == static_cast<int>(neuron) ? 1 : 0)
         << '\n';
  }
}

std::filesystem::path export_scatter(nn::Network& net, const data::Dataset& ds, const std::filesystem::path& out,
                                     std::size_t batch_size) {
  const auto widths = net.tap_widths();
  const auto it = widths.find(std::string(loss::kHiddenTap));
  if (it == widths.end()) throw ConfigError("network has no hidden feature tap");
  if (it->second != 2) {
    throw ConfigError(fmt::format("scatter export needs hidden width 2, the network has {}", it->second));
  }
  const auto taps = forward_all(net, ds, batch_size);
  const Tensor features = taps.at(std::string(loss::kHiddenTap));
  std::vector<double> sum(ds.classes * 2, 0.0);
  std::vector<std::size_t> count(ds.classes, 0);
  auto file = open_output(out);
  file << "x1,x2,class\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto row = features.row(i);
    const auto k = static_cast<std::size_t>(ds.labels[i]);
    file << loss::format_number(row[0]) << ',' << loss::format_number(row[1]) << ',' << k << '\n';
    sum[2 * k] += row[0];
    sum[2 * k + 1] += row[1];
    ++count[k];
  }
  auto means_path = out;
  means_path.replace_filename(out.stem().string() + "_means.csv");
  auto means = open_output(means_path);
  means << "class,x1,x2\n";
  for (std::size_t k = 0; k < ds.classes; ++k) {
    const double n = static_cast<double>(count[k]);
    const double m1 = count[k] > 0 ? sum[2 * k] / n : std::nan("");
    const double m2 = count[k] > 0 ? sum[2 * k + 1] / n : std::nan("");
    means << k << ',' << loss::format_number(m1) << ',' << loss::format_number(m2) << '\n';
  }
  return means_path;
}

}  // namespace discrim::app
