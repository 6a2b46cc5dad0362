#include "discrim/streaming_stats.hpp"

#include <cmath>
#include <fmt/format.h>

namespace discrim::stats {

namespace {

void require_finite(double z, const char* what) {
  if (!std::isfinite(z)) throw NumericError(fmt::format("{}: non-finite sample {}", what, z));
}

void require_indicator(int t) {
  if (t != 0 && t != 1) throw ConfigError(fmt::format("class indicator must be 0 or 1, got {}", t));
}

}  // namespace

void check_forgetting_factor(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError(fmt::format("forgetting factor must lie in (0, 1), got {}", alpha));
  }
}

ForgettingScalar::ForgettingScalar(double alpha) : alpha_(alpha) { check_forgetting_factor(alpha); }

ForgettingScalar::ForgettingScalar(double alpha, double value, std::uint64_t steps)
    : alpha_(alpha), value_(value), steps_(steps) {
  check_forgetting_factor(alpha);
  require_finite(value, "ForgettingScalar");
}

ForgettingScalar ForgettingScalar::advanced(double increment) const {
  ForgettingScalar next = *this;
  next.value_ = alpha_ * value_ + increment;
  next.steps_ = steps_ + 1;
  if (!std::isfinite(next.value_)) throw NumericError("ForgettingScalar: update overflowed");
  return next;
}

ForgettingScalar mean_update(const ForgettingScalar& state, double z) {
  require_finite(z, "mean_update");
  return state.advanced((1.0 - state.alpha()) * z);
}

ForgettingScalar masked_mean_update(const ForgettingScalar& state, double z, int t) {
  require_finite(z, "masked_mean_update");
  require_indicator(t);
  return state.advanced((1.0 - state.alpha()) * t * z);
}

MeanVariance total_variance_update(const MeanVariance& state, double z) {
  require_finite(z, "total_variance_update");
  const double a = state.var.alpha();
  const double dev = z - state.mean.value();
  return MeanVariance(mean_update(state.mean, z), state.var.advanced(a * (1.0 - a) * dev * dev));
}

NeuronAccumulator within_variance_update(const NeuronAccumulator& state, double z, int t) {
  require_finite(z, "within_variance_update");
  require_indicator(t);
  const double a = state.within_var.alpha();
  const double dev = t == 1 ? z - state.target_mean.value() : z - state.other_mean.value();

  NeuronAccumulator next = state;
  next.within_var = state.within_var.advanced(a * (1.0 - a) * dev * dev);
  const MeanVariance total = total_variance_update(MeanVariance(state.total_mean, state.total_var), z);
  next.total_mean = total.mean;
  next.total_var = total.var;
  next.target_mean = masked_mean_update(state.target_mean, z, t);
  next.other_mean = masked_mean_update(state.other_mean, z, 1 - t);
  return next;
}

NeuronClassStats::NeuronClassStats(std::size_t neurons, double alpha)
    : alpha_(alpha), neurons_(neurons, NeuronAccumulator(alpha)) {}

void NeuronClassStats::update(std::size_t k, double z, int t) {
  auto& acc = neurons_.at(k);
  acc = within_variance_update(acc, z, t);
}

void NeuronClassStats::reset() { neurons_.assign(neurons_.size(), NeuronAccumulator(alpha_)); }

Tensor NeuronClassStats::snapshot() const {
  Tensor t({neurons_.size(), 7});
  for (std::size_t k = 0; k < neurons_.size(); ++k) {
    const auto& n = neurons_[k];
    auto row = t.row_mut(k);
    row[0] = alpha_;
    row[1] = static_cast<double>(n.within_var.steps());
    row[2] = n.target_mean.value();
    row[3] = n.other_mean.value();
    row[4] = n.total_mean.value();
    row[5] = n.within_var.value();
    row[6] = n.total_var.value();
  }
  return t;
}

NeuronClassStats NeuronClassStats::restore(const Tensor& snapshot) {
  if (snapshot.rank() != 2 || snapshot.dim(1) != 7 || snapshot.dim(0) == 0) {
    throw FormatError(fmt::format("neuron stats snapshot has shape {}", shape_string(snapshot.shape())));
  }
  const double alpha = snapshot.row(0)[0];
  NeuronClassStats stats(snapshot.dim(0), alpha);
  for (std::size_t k = 0; k < stats.neurons(); ++k) {
    auto row = snapshot.row(k);
    if (row[0] != alpha) throw FormatError("neuron stats snapshot mixes forgetting factors");
    if (row[5] < 0.0 || row[6] < 0.0) throw FormatError("neuron stats snapshot has negative variance");
    const auto steps = static_cast<std::uint64_t>(row[1]);
    auto& n = stats.neurons_[k];
    n.target_mean = ForgettingScalar(alpha, row[2], steps);
    n.other_mean = ForgettingScalar(alpha, row[3], steps);
    n.total_mean = ForgettingScalar(alpha, row[4], steps);
    n.within_var = ForgettingScalar(alpha, row[5], steps);
    n.total_var = ForgettingScalar(alpha, row[6], steps);
  }
  return stats;
}

CenterBank::CenterBank(std::size_t classes, std::size_t dim, CenterUpdateMode mode, double rate)
    : centers_({classes, dim}), mode_(mode), rate_(rate) {
  if (mode == CenterUpdateMode::adaptive) {
    check_forgetting_factor(rate);
  } else if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError(fmt::format("center step size beta must lie in [0, 1], got {}", rate));
  }
}

std::span<const double> CenterBank::center(std::size_t k) const {
  if (k >= classes()) throw ShapeError(fmt::format("class id {} out of range ({} classes)", k, classes()));
  return centers_.row(k);
}

void CenterBank::set_center(std::size_t k, std::span<const double> values) {
  if (k >= classes()) throw ShapeError(fmt::format("class id {} out of range ({} classes)", k, classes()));
  if (values.size() != dim()) {
    throw ShapeError(fmt::format("center has dimension {}, got {}", dim(), values.size()));
  }
  auto row = centers_.row_mut(k);
  for (std::size_t d = 0; d < values.size(); ++d) {
    require_finite(values[d], "set_center");
    row[d] = values[d];
  }
}

void CenterBank::update_adaptive(std::span<const double> x, std::size_t class_id) {
  if (mode_ != CenterUpdateMode::adaptive) throw ConfigError("center bank is not in adaptive mode");
  if (class_id >= classes()) {
    throw ShapeError(fmt::format("class id {} out of range ({} classes)", class_id, classes()));
  }
  if (x.size() != dim()) throw ShapeError(fmt::format("feature has dimension {}, bank expects {}", x.size(), dim()));
  auto c = centers_.row_mut(class_id);
  for (std::size_t d = 0; d < x.size(); ++d) {
    require_finite(x[d], "center_update_adaptive");
    c[d] = rate_ * c[d] + (1.0 - rate_) * x[d];
  }
}

void CenterBank::update_minibatch(const Tensor& features, std::span<const std::size_t> class_ids) {
  if (mode_ != CenterUpdateMode::minibatch) throw ConfigError("center bank is not in mini-batch mode");
  if (features.rank() != 2 || features.dim(1) != dim() || features.dim(0) != class_ids.size()) {
    throw ShapeError(fmt::format("mini-batch center update: features {} vs {} labels, dimension {}",
                                 shape_string(features.shape()), class_ids.size(), dim()));
  }
  features.check_finite("center_update_minibatch");
  Tensor delta({classes(), dim()});
  std::vector<double> counts(classes(), 0.0);
  for (std::size_t i = 0; i < class_ids.size(); ++i) {
    const std::size_t k = class_ids[i];
    if (k >= classes()) throw ShapeError(fmt::format("class id {} out of range ({} classes)", k, classes()));
    counts[k] += 1.0;
    auto c = centers_.row(k);
    auto x = features.row(i);
    auto dk = delta.row_mut(k);
    for (std::size_t d = 0; d < dim(); ++d) dk[d] += c[d] - x[d];
  }
  for (std::size_t k = 0; k < classes(); ++k) {
    auto c = centers_.row_mut(k);
    auto dk = delta.row(k);
    for (std::size_t d = 0; d < dim(); ++d) c[d] -= rate_ * (dk[d] / (1.0 + counts[k]));
  }
}

void CenterBank::reset() { centers_ = Tensor(centers_.shape()); }

Tensor CenterBank::snapshot() const {
  Tensor t({classes(), dim() + 2});
  for (std::size_t k = 0; k < classes(); ++k) {
    auto row = t.row_mut(k);
    row[0] = mode_ == CenterUpdateMode::adaptive ? 0.0 : 1.0;
    row[1] = rate_;
    auto c = centers_.row(k);
    for (std::size_t d = 0; d < dim(); ++d) row[d + 2] = c[d];
  }
  return t;
}

CenterBank CenterBank::restore(const Tensor& snapshot) {
  if (snapshot.rank() != 2 || snapshot.dim(1) < 2 || snapshot.dim(0) == 0) {
    throw FormatError(fmt::format("center bank snapshot has shape {}", shape_string(snapshot.shape())));
  }
  const auto first = snapshot.row(0);
  const auto mode = first[0] == 0.0 ? CenterUpdateMode::adaptive : CenterUpdateMode::minibatch;
  CenterBank bank(snapshot.dim(0), snapshot.dim(1) - 2, mode, first[1]);
  for (std::size_t k = 0; k < bank.classes(); ++k) {
    auto row = snapshot.row(k);
    if (row[0] != first[0] || row[1] != first[1]) throw FormatError("center bank snapshot mixes modes");
    bank.set_center(k, row.subspan(2));
  }
  return bank;
}

CenterBank center_update_adaptive(CenterBank bank, std::span<const double> x, std::size_t class_id) {
  bank.update_adaptive(x, class_id);
  return bank;
}

CenterBank center_update_minibatch(CenterBank bank, const Tensor& features,
                                   std::span<const std::size_t> class_ids) {
  bank.update_minibatch(features, class_ids);
  return bank;
}

}  // namespace discrim::stats
