#include "discrim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace discrim::loss {

namespace {

void require_pair(const Tensor& z, const Tensor& t, const char* what) {
  if (z.rank() != 2 || z.shape() != t.shape()) {
    throw ShapeError(fmt::format("{}: logits {} and labels {} must be matching matrices", what,
                                 shape_string(z.shape()), shape_string(t.shape())));
  }
}

void require_features(const Tensor& x, const Tensor& t, const stats::CenterBank& bank, const char* what) {
  if (x.rank() != 2 || t.rank() != 2 || x.dim(0) != t.dim(0)) {
    throw ShapeError(fmt::format("{}: features {} and labels {} disagree", what, shape_string(x.shape()),
                                 shape_string(t.shape())));
  }
  if (x.dim(1) != bank.dim() || t.dim(1) != bank.classes()) {
    throw ShapeError(fmt::format("{}: features {} / labels {} vs bank of {} centers in {} dimensions", what,
                                 shape_string(x.shape()), shape_string(t.shape()), bank.classes(),
                                 bank.dim()));
  }
}

}  // namespace

void validate_onehot(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("one-hot labels must be a matrix");
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    double sum = 0.0;
    for (double v : t.row(i)) {
      if (v != 0.0 && v != 1.0) throw ConfigError(fmt::format("label row {} has entry {}", i, v));
      sum += v;
    }
    if (sum != 1.0) throw ConfigError(fmt::format("label row {} sums to {}", i, sum));
  }
}

Tensor onehot(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConfigError(fmt::format("label {} outside [0, {})", labels[i], classes));
    }
    t[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

std::vector<std::size_t> class_ids(const Tensor& onehot) {
  validate_onehot(onehot);
  std::vector<std::size_t> ids(onehot.dim(0));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto row = onehot.row(i);
    ids[i] = static_cast<std::size_t>(std::find(row.begin(), row.end(), 1.0) - row.begin());
  }
  return ids;
}

Tensor softmax(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("softmax expects [N x K] logits");
  z.check_finite("softmax input");
  Tensor y(z.shape());
  for (std::size_t i = 0; i < z.dim(0); ++i) {
    auto in = z.row(i);
    auto out = y.row_mut(i);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      out[k] = std::exp(in[k] - peak);
      total += out[k];
    }
    for (double& v : out) v /= total;
  }
  return y;
}

LossGrad softmax_cross_entropy(const Tensor& z, const Tensor& t, Reduction reduction) {
  require_pair(z, t, "softmax_cross_entropy");
  validate_onehot(t);
  const std::size_t n = z.dim(0);
  const double scale = reduction == Reduction::mean && n > 0 ? 1.0 / static_cast<double>(n) : 1.0;

  LossGrad out;
  out.grad = Tensor(z.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto in = z.row(i);
    auto lab = t.row(i);
    auto g = out.grad.row_mut(i);
    const double peak = *std::max_element(in.begin(), in.end());
    double sum_exp = 0.0;
    for (double v : in) sum_exp += std::exp(v - peak);
    const double log_norm = peak + std::log(sum_exp);
    for (std::size_t k = 0; k < in.size(); ++k) {
      // log y_ik = z_ik - logsumexp(z_i)
      if (lab[k] != 0.0) total -= lab[k] * (in[k] - log_norm);
      g[k] = (std::exp(in[k] - log_norm) - lab[k]) * scale;
    }
  }
  out.loss = total * scale;
  return out;
}

DiscriminantResult discriminant_batch(const Tensor& z, const Tensor& t, double epsilon) {
  require_pair(z, t, "discriminant_batch");
  validate_onehot(t);
  z.check_finite("discriminant_batch input");
  const std::size_t n = z.dim(0);
  const std::size_t classes = z.dim(1);
  if (n < 2) throw ShapeError(fmt::format("discriminant_batch needs at least 2 samples, got {}", n));
  if (epsilon < 0.0) throw ConfigError("epsilon must be non-negative");

  const double inv_n = 1.0 / static_cast<double>(n);
  DiscriminantResult out;
  out.grad = Tensor(z.shape());
  for (std::size_t k = 0; k < classes; ++k) {
    double target_sum = 0.0, other_sum = 0.0, target_count = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = z[i * classes + k];
      if (t[i * classes + k] == 1.0) {
        target_sum += v;
        target_count += 1.0;
      } else {
        other_sum += v;
      }
    }
    const double other_count = static_cast<double>(n) - target_count;
    if (target_count == 0.0 || other_count == 0.0) out.degenerate_neurons.push_back(k);
    const double mu_target = target_count > 0.0 ? target_sum / target_count : 0.0;
    const double mu_other = other_count > 0.0 ? other_sum / other_count : 0.0;
    const double mu_total = (target_sum + other_sum) * inv_n;

    double within = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = z[i * classes + k];
      const double dw = v - (t[i * classes + k] == 1.0 ? mu_target : mu_other);
      const double dt = v - mu_total;
      within += dw * dw;
      total += dt * dt;
    }
    within *= inv_n;
    total *= inv_n;
    const double denom = total + epsilon;
    if (denom == 0.0) continue;  // epsilon == 0 with a constant neuron: ratio undefined, contributes 0
    out.loss += within / denom;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = z[i * classes + k];
      const double dw = v - (t[i * classes + k] == 1.0 ? mu_target : mu_other);
      const double dt = v - mu_total;
      out.grad[i * classes + k] = 2.0 * inv_n * (dw / denom - within * dt / (denom * denom));
    }
  }
  out.grad.check_finite("discriminant_batch gradient");
  return out;
}

LossGrad adaptive_discriminant(const Tensor& z, const Tensor& t, stats::NeuronClassStats& stats,
                               double epsilon) {
  require_pair(z, t, "adaptive_discriminant");
  validate_onehot(t);
  z.check_finite("adaptive_discriminant input");
  const std::size_t n = z.dim(0);
  const std::size_t classes = z.dim(1);
  if (stats.neurons() != classes) {
    throw ShapeError(fmt::format("adaptive_discriminant: {} logits but stats track {} neurons", classes,
                                 stats.neurons()));
  }
  if (epsilon < 0.0) throw ConfigError("epsilon must be non-negative");

  // Deviations from the step n-1 means, recorded while the accumulators advance.
  Tensor dev_group(z.shape());
  Tensor dev_total(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < classes; ++k) {
      const double v = z[i * classes + k];
      const int target = t[i * classes + k] == 1.0 ? 1 : 0;
      const auto& acc = stats.neuron(k);
      dev_group[i * classes + k] = v - (target == 1 ? acc.target_mean.value() : acc.other_mean.value());
      dev_total[i * classes + k] = v - acc.total_mean.value();
      stats.update(k, v, target);
    }
  }

  const double a = stats.alpha();
  const double weight = 2.0 * a * (1.0 - a);
  LossGrad out;
  out.grad = Tensor(z.shape());
  for (std::size_t k = 0; k < classes; ++k) {
    const auto& acc = stats.neuron(k);
    const double within = acc.within_var.value();
    const double denom = acc.total_var.value() + epsilon;
    if (denom == 0.0) continue;
    out.loss += within / denom;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = i * classes + k;
      out.grad[idx] = weight * (dev_group[idx] / denom - within * dev_total[idx] / (denom * denom));
    }
  }
  out.grad.check_finite("adaptive_discriminant gradient");
  return out;
}

LossGrad center_loss(const Tensor& x, const Tensor& t, const stats::CenterBank& bank) {
  require_features(x, t, bank, "center_loss");
  x.check_finite("center_loss input");
  const auto ids = class_ids(t);
  const std::size_t n = x.dim(0);
  LossGrad out;
  out.grad = Tensor(x.shape());
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = x.row(i);
    auto c = bank.center(ids[i]);
    auto g = out.grad.row_mut(i);
    for (std::size_t d = 0; d < xi.size(); ++d) {
      const double diff = xi[d] - c[d];
      total += diff * diff;
      g[d] = 2.0 * inv_n * diff;
    }
  }
  out.loss = total * inv_n;
  return out;
}

LossGrad adaptive_center_loss(const Tensor& x, const Tensor& t, stats::CenterBank& bank) {
  require_features(x, t, bank, "adaptive_center_loss");
  x.check_finite("adaptive_center_loss input");
  const auto ids = class_ids(t);
  for (std::size_t i = 0; i < x.dim(0); ++i) bank.update_adaptive(x.row(i), ids[i]);
  return center_loss(x, t, bank);
}

}  // namespace discrim::loss
