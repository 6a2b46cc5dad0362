#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "discrim/streaming_stats.hpp"
#include "discrim/tensor.hpp"

namespace discrim::loss {

/// Inputs with one-hot label rows t_i.
struct LabeledBatch {
  Tensor inputs;
  Tensor labels_onehot;  // [N x K]
};

// Throws unless every row of `t` has entries in {0,1} summing to exactly 1.
void validate_onehot(const Tensor& t);
Tensor onehot(std::span<const int> labels, std::size_t classes);
std::vector<std::size_t> class_ids(const Tensor& onehot);

enum class Reduction { mean, sum };

struct LossGrad {
  double loss = 0.0;
  Tensor grad;
};

// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& z);

// -sum_i sum_k t_ik log y_ik, divided by N under Reduction::mean.
LossGrad softmax_cross_entropy(const Tensor& z, const Tensor& t, Reduction reduction = Reduction::mean);

struct DiscriminantResult {
  double loss = 0.0;
  Tensor grad;
  // Neurons whose target or non-target group was empty in this batch.
  std::vector<std::size_t> degenerate_neurons;
};

/// sum_k sigma_Wk^2 / (sigma_Tk^2 + epsilon) over batch statistics.
///
/// The gradient differentiates through every batch mean. Because each mean
/// minimizes its own squared deviations, the mean terms cancel and
///   d sigma_W^2 / d z_ik = 2/N (z_ik - mean of i's group)
///   d sigma_T^2 / d z_ik = 2/N (z_ik - mu_Tk).
/// An empty group contributes nothing to sigma_W^2.
DiscriminantResult discriminant_batch(const Tensor& z, const Tensor& t, double epsilon);

/// Forgetting-statistics discriminant criterion.
///
/// Advances `stats` once per sample in row order, then returns
/// sum_k W_k / (T_k + epsilon) at the post-batch accumulators. The gradient
/// treats every mean as a constant; for sample n and neuron k
///   g = a(1-a) * [ 2 (z - m_nk) / (T_k + eps) - 2 W_k (z - mu_T,nk) / (T_k + eps)^2 ]
/// with m_nk the target or non-target mean and mu_T,nk the total mean as they
/// stood just before sample n.
LossGrad adaptive_discriminant(const Tensor& z, const Tensor& t, stats::NeuronClassStats& stats,
                               double epsilon);

// (1/N) sum_i ||x_i - c_class(i)||^2; the bank is read only.
LossGrad center_loss(const Tensor& x, const Tensor& t, const stats::CenterBank& bank);

// Advances the adaptive bank per sample, then evaluates center_loss against the
// updated centers. Centers carry no gradient.
LossGrad adaptive_center_loss(const Tensor& x, const Tensor& t, stats::CenterBank& bank);

}  // namespace discrim::loss
