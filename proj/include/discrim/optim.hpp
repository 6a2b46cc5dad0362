#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "discrim/layers.hpp"
#include "discrim/tensor.hpp"

namespace discrim::optim {

// lr(epoch) = base_lr / factor^floor(epoch / period)
struct StepSchedule {
  double base_lr = 0.01;
  double factor = 10.0;
  std::size_t period = 50;
};

double lr_at_epoch(std::size_t epoch, const StepSchedule& schedule);

struct OptimizerState {
  double momentum = 0.9;
  double weight_decay = 0.01;
  std::vector<Tensor> velocity;  // one per parameter, created on the first step
};

/// SGD with momentum and coupled weight decay, for every parameter:
///   g' = g + weight_decay * w;  v <- momentum * v + g';  w <- w - lr * v
/// Throws NumericError before touching anything if a gradient is non-finite.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state,
              double lr);

// Convenience overload over network parameters (value/grad pairs).
void sgd_step(std::span<nn::Parameter* const> params, OptimizerState& state, double lr);

std::map<std::string, Tensor> snapshot(const OptimizerState& state);
void restore(OptimizerState& state, const std::map<std::string, Tensor>& tensors);

}  // namespace discrim::optim
