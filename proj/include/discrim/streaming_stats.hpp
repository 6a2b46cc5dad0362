#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "discrim/tensor.hpp"

namespace discrim::stats {

// Throws ConfigError unless 0 < alpha < 1.
void check_forgetting_factor(double alpha);

/// Running estimate under exponential forgetting with weight alpha^s for a
/// sample s steps old. Starts at zero, which is exact for an unbounded
/// stream of zeros preceding the first sample.
class ForgettingScalar {
 public:
  explicit ForgettingScalar(double alpha);
  ForgettingScalar(double alpha, double value, std::uint64_t steps);

  double value() const { return value_; }
  double alpha() const { return alpha_; }
  std::uint64_t steps() const { return steps_; }

  // One recurrence step: value' = alpha * value + increment.
  ForgettingScalar advanced(double increment) const;

 private:
  double alpha_;
  double value_ = 0.0;
  std::uint64_t steps_ = 0;
};

// mu' = alpha*mu + (1-alpha)*z
ForgettingScalar mean_update(const ForgettingScalar& state, double z);

// mu' = alpha*mu + (1-alpha)*t*z; t must be 0 or 1. A masked-out sample
// still decays the state.
ForgettingScalar masked_mean_update(const ForgettingScalar& state, double z, int t);

struct MeanVariance {
  ForgettingScalar mean;
  ForgettingScalar var;

  explicit MeanVariance(double alpha) : mean(alpha), var(alpha) {}
  MeanVariance(ForgettingScalar m, ForgettingScalar v) : mean(m), var(v) {}
};

// var' = alpha*var + alpha(1-alpha)(z - mean)^2 using the pre-update mean,
// then the mean advances.
MeanVariance total_variance_update(const MeanVariance& state, double z);

/// Per-output-neuron accumulators for the forgetting discriminant criterion.
struct NeuronAccumulator {
  ForgettingScalar target_mean;  // mu_k
  ForgettingScalar other_mean;   // mu-hat_k
  ForgettingScalar total_mean;   // mu_Tk
  ForgettingScalar within_var;   // sigma_Wk^2
  ForgettingScalar total_var;    // sigma_Tk^2

  explicit NeuronAccumulator(double alpha)
      : target_mean(alpha), other_mean(alpha), total_mean(alpha), within_var(alpha), total_var(alpha) {}
};

// Advances every accumulator of one neuron by one sample. Both variance
// increments are formed from step n-1 means; all three means advance after.
NeuronAccumulator within_variance_update(const NeuronAccumulator& state, double z, int t);

class NeuronClassStats {
 public:
  NeuronClassStats(std::size_t neurons, double alpha);

  std::size_t neurons() const { return neurons_.size(); }
  double alpha() const { return alpha_; }
  const NeuronAccumulator& neuron(std::size_t k) const { return neurons_.at(k); }

  void update(std::size_t k, double z, int t);
  void reset();

  // Rows are neurons; columns are
  //   alpha, steps, target_mean, other_mean, total_mean, within_var, total_var.
  Tensor snapshot() const;
  static NeuronClassStats restore(const Tensor& snapshot);

 private:
  double alpha_;
  std::vector<NeuronAccumulator> neurons_;
};

enum class CenterUpdateMode { adaptive, minibatch };

/// Per-class centroids c_k of dimension D.
///
/// Adaptive banks follow c' = alpha*c + (1-alpha)*x per sample. Mini-batch
/// banks follow c <- c - beta * sum_i t_ik (c - x_i) / (1 + sum_i t_ik) once
/// per batch. `rate` is alpha or beta accordingly.
class CenterBank {
 public:
  CenterBank(std::size_t classes, std::size_t dim, CenterUpdateMode mode, double rate);

  std::size_t classes() const { return centers_.dim(0); }
  std::size_t dim() const { return centers_.dim(1); }
  CenterUpdateMode mode() const { return mode_; }
  double rate() const { return rate_; }
  const Tensor& centers() const { return centers_; }
  std::span<const double> center(std::size_t k) const;
  void set_center(std::size_t k, std::span<const double> values);

  void update_adaptive(std::span<const double> x, std::size_t class_id);
  void update_minibatch(const Tensor& features, std::span<const std::size_t> class_ids);
  void reset();

  // Rows are classes; columns are mode (0 adaptive, 1 mini-batch), rate, c_k...
  Tensor snapshot() const;
  static CenterBank restore(const Tensor& snapshot);

 private:
  Tensor centers_;
  CenterUpdateMode mode_;
  double rate_;
};

CenterBank center_update_adaptive(CenterBank bank, std::span<const double> x, std::size_t class_id);
CenterBank center_update_minibatch(CenterBank bank, const Tensor& features,
                                   std::span<const std::size_t> class_ids);

}  // namespace discrim::stats
