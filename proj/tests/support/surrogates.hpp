#pragma once

#include <cmath>
#include <vector>

#include "discrim/tensor.hpp"
#include "support/oracles.hpp"

namespace oracle {

/// Frozen-statistics surrogate of the forgetting discriminant criterion.
///
/// `history` holds the per-neuron values and labels seen before the batch.
/// Every mean is frozen at the value it had just before the sample that
/// reads it, and each batch sample's variance increment enters with the same
/// a = alpha(1 - alpha) weight:
///   W(z') = W_N + a sum_n [dev_n(z'_n)^2 - dev_n(z_n)^2]   (same for T)
/// so W(z) = W_N and T(z) = T_N, the values after the batch.
class AdaptiveDiscriminantSurrogate {
 public:
  AdaptiveDiscriminantSurrogate(const std::vector<std::vector<double>>& history_z,
                                const std::vector<std::vector<int>>& history_t, const discrim::Tensor& z,
                                const discrim::Tensor& t, double alpha, double epsilon)
      : z0_(z), alpha_(alpha), epsilon_(epsilon) {
    const std::size_t n = z.dim(0), k = z.dim(1);
    neurons_.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> zs = history_z.empty() ? std::vector<double>{} : history_z[j];
      std::vector<int> ts = history_t.empty() ? std::vector<int>{} : history_t[j];
      const std::size_t offset = zs.size();
      for (std::size_t i = 0; i < n; ++i) {
        zs.push_back(z.at({i, j}));
        ts.push_back(static_cast<int>(t.at({i, j})));
      }
      const auto target = masked_prefix_means(zs, ts, alpha, true);
      const auto other = masked_prefix_means(zs, ts, alpha, false);
      const std::vector<int> ones(zs.size(), 1);
      const auto total = masked_prefix_means(zs, ones, alpha, true);
      Neuron& nr = neurons_[j];
      nr.within = unrolled_within_variance(zs, ts, alpha);
      nr.total = weighted_moments(zs, alpha).variance();
      for (std::size_t i = 0; i < n; ++i) {
        const int ti = ts[offset + i];
        nr.group_mean.push_back(ti == 1 ? target[offset + i] : other[offset + i]);
        nr.total_mean.push_back(total[offset + i]);
      }
    }
  }

  double operator()(const discrim::Tensor& z) const {
    const double a = alpha_ * (1.0 - alpha_);
    const std::size_t n = z.dim(0);
    double loss = 0.0;
    for (std::size_t j = 0; j < neurons_.size(); ++j) {
      const Neuron& nr = neurons_[j];
      double w = nr.within, tv = nr.total;
      for (std::size_t i = 0; i < n; ++i) {
        const double now = z.at({i, j}), was = z0_.at({i, j});
        w += a * ((now - nr.group_mean[i]) * (now - nr.group_mean[i]) - (was - nr.group_mean[i]) * (was - nr.group_mean[i]));
        tv += a * ((now - nr.total_mean[i]) * (now - nr.total_mean[i]) - (was - nr.total_mean[i]) * (was - nr.total_mean[i]));
      }
      loss += w / (tv + epsilon_);
    }
    return loss;
  }

 private:
  struct Neuron {
    double within = 0.0;
    double total = 0.0;
    std::vector<double> group_mean;
    std::vector<double> total_mean;
  };
  discrim::Tensor z0_;
  double alpha_;
  double epsilon_;
  std::vector<Neuron> neurons_;
};

// Per-class forgetting centers after `x` has been absorbed in row order,
// written as closed-form weighted sums over each class's own samples.
inline discrim::Tensor adaptive_centers(const discrim::Tensor& x, const std::vector<std::size_t>& ids,
                                        std::size_t classes, double alpha) {
  const std::size_t d = x.dim(1);
  discrim::Tensor c({classes, d});
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == k) rows.push_back(i);
    }
    for (std::size_t m = 0; m < rows.size(); ++m) {
      const double w = (1.0 - alpha) * std::pow(alpha, static_cast<double>(rows.size() - 1 - m));
      for (std::size_t j = 0; j < d; ++j) c.data_mut()[k * d + j] += w * x.at({rows[m], j});
    }
  }
  return c;
}

inline double center_distance_loss(const discrim::Tensor& x, const std::vector<std::size_t>& ids,
                                   const discrim::Tensor& centers) {
  double loss = 0.0;
  const std::size_t d = x.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x.at({i, j}) - centers.at({ids[i], j});
      loss += diff * diff;
    }
  }
  return loss / static_cast<double>(ids.size());
}

}  // namespace oracle
