#include "discrim/optim.hpp"

#include <cmath>
#include <fmt/format.h>

namespace discrim::optim {

double lr_at_epoch(std::size_t epoch, const StepSchedule& schedule) {
  if (!(schedule.base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (schedule.period == 0) throw ConfigError("schedule period must be positive");
  if (!(schedule.factor >= 1.0)) throw ConfigError("schedule drop factor must be >= 1");
  double lr = schedule.base_lr;
  for (std::size_t drops = epoch / schedule.period; drops > 0; --drops) lr /= schedule.factor;
  return lr;
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state,
              double lr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter and gradient counts differ");
  if (!(lr > 0.0)) throw ConfigError(fmt::format("learning rate must be positive, got {}", lr));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      throw ShapeError(fmt::format("sgd_step: parameter {} has shape {} but gradient {}", i,
                                   shape_string(params[i]->shape()), shape_string(grads[i]->shape())));
    }
    grads[i]->check_finite(fmt::format("gradient of parameter {}", i));
  }
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state tracks other parameters");

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data_mut();
    auto g = grads[i]->data();
    auto v = state.velocity[i].data_mut();
    if (v.size() != w.size()) throw ShapeError("sgd_step: velocity shape mismatch");
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double step = g[j] + state.weight_decay * w[j];
      v[j] = state.momentum * v[j] + step;
      w[j] -= lr * v[j];
    }
    params[i]->check_finite("parameter after sgd step");
  }
}

void sgd_step(std::span<nn::Parameter* const> params, OptimizerState& state, double lr) {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (auto* p : params) {
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  sgd_step(values, grads, state, lr);
}

std::map<std::string, Tensor> snapshot(const OptimizerState& state) {
  std::map<std::string, Tensor> out;
  out.emplace("optim.hyper", Tensor::vector({state.momentum, state.weight_decay}));
  for (std::size_t i = 0; i < state.velocity.size(); ++i) {
    out.emplace(fmt::format("optim.velocity.{:03}", i), state.velocity[i]);
  }
  return out;
}

void restore(OptimizerState& state, const std::map<std::string, Tensor>& tensors) {
  if (auto hyper = tensors.find("optim.hyper"); hyper != tensors.end()) {
    if (hyper->second.size() != 2) throw FormatError("optim.hyper must hold momentum and weight decay");
    state.momentum = hyper->second[0];
    state.weight_decay = hyper->second[1];
  }
  state.velocity.clear();
  for (std::size_t i = 0;; ++i) {
    auto it = tensors.find(fmt::format("optim.velocity.{:03}", i));
    if (it == tensors.end()) break;
    state.velocity.push_back(it->second);
  }
}

}  // namespace discrim::optim
