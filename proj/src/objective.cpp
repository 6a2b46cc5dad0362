#include "discrim/objective.hpp"

#include <array>
#include <cmath>
#include <fmt/format.h>
#include <set>

namespace discrim::loss {

namespace {

constexpr std::array<AuxKind, 4> kAllKinds{AuxKind::discriminant, AuxKind::adaptive_discriminant,
                                           AuxKind::center, AuxKind::adaptive_center};

bool is_discriminant(AuxKind kind) {
  return kind == AuxKind::discriminant || kind == AuxKind::adaptive_discriminant;
}

// gradients[tap] += weight * g
void accumulate(TapMap& gradients, const std::string& tap, const Tensor& g, double weight) {
  auto it = gradients.find(tap);
  if (it == gradients.end()) {
    gradients.emplace(tap, g * weight);
    return;
  }
  auto dst = it->second.data_mut();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
}

}  // namespace

std::string_view component_name(AuxKind kind) {
  switch (kind) {
    case AuxKind::discriminant: return "L_D";
    case AuxKind::adaptive_discriminant: return "L_AD";
    case AuxKind::center: return "L_C";
    case AuxKind::adaptive_center: return "L_AC";
  }
  return "?";
}

void ObjectiveConfig::validate() const {
  std::set<AuxKind> seen;
  for (const auto& term : terms) {
    if (!seen.insert(term.kind).second) {
      throw ConfigError(fmt::format("{} attached more than once", component_name(term.kind)));
    }
    if (!(term.weight >= 0.0) || !std::isfinite(term.weight)) {
      throw ConfigError(fmt::format("{} weight must be finite and >= 0, got {}", component_name(term.kind),
                                    term.weight));
    }
    if (term.tap.empty()) throw ConfigError(fmt::format("{} has no tap point", component_name(term.kind)));
    if (is_discriminant(term.kind) && term.tap != kLogitsTap) {
      throw ConfigError(fmt::format("{} must read the '{}' tap", component_name(term.kind), kLogitsTap));
    }
    if (term.kind == AuxKind::adaptive_discriminant || term.kind == AuxKind::adaptive_center) {
      stats::check_forgetting_factor(alpha);
    }
    if (term.kind == AuxKind::center && !(beta >= 0.0 && beta <= 1.0)) {
      throw ConfigError(fmt::format("beta must lie in [0, 1], got {}", beta));
    }
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and >= 0");
}

Objective::Objective(ObjectiveConfig config, std::size_t classes,
                     const std::map<std::string, std::size_t>& tap_widths)
    : config_(std::move(config)), classes_(classes) {
  config_.validate();
  auto logits = tap_widths.find(std::string(kLogitsTap));
  if (logits == tap_widths.end() || logits->second != classes) {
    throw ConfigError(fmt::format("network must expose '{}' with width {}", kLogitsTap, classes));
  }
  for (const auto& term : config_.terms) {
    auto it = tap_widths.find(term.tap);
    if (it == tap_widths.end()) {
      throw ConfigError(fmt::format("{} tap '{}' does not exist in the network", component_name(term.kind),
                                    term.tap));
    }
    switch (term.kind) {
      case AuxKind::discriminant:
        state_.emplace_back(std::monostate{});
        break;
      case AuxKind::adaptive_discriminant:
        state_.emplace_back(stats::NeuronClassStats(classes, config_.alpha));
        break;
      case AuxKind::center:
        state_.emplace_back(stats::CenterBank(classes, it->second, stats::CenterUpdateMode::minibatch, config_.beta));
        break;
      case AuxKind::adaptive_center:
        state_.emplace_back(stats::CenterBank(classes, it->second, stats::CenterUpdateMode::adaptive, config_.alpha));
        break;
    }
  }
  initial_state_ = state_;
}

const Tensor& Objective::tap(const TapMap& taps, const std::string& name) const {
  auto it = taps.find(name);
  if (it == taps.end()) throw ConfigError(fmt::format("tap '{}' missing from forward output", name));
  return it->second;
}

LossReport Objective::evaluate(const TapMap& taps, const Tensor& labels_onehot) {
  const Tensor& logits = tap(taps, std::string(kLogitsTap));
  LossReport report;
  auto ce = softmax_cross_entropy(logits, labels_onehot, config_.ce_reduction);
  if (!std::isfinite(ce.loss)) throw NumericError("L_S produced a non-finite value");
  report.components["L_S"] = ce.loss;
  report.total = ce.loss;
  report.gradients.emplace(std::string(kLogitsTap), std::move(ce.grad));

  for (std::size_t j = 0; j < config_.terms.size(); ++j) {
    const auto& term = config_.terms[j];
    const Tensor& features = tap(taps, term.tap);
    const Tensor flat = features.rank() == 2 ? features : features.reshaped({features.dim(0), features.size() / features.dim(0)});
    LossGrad part;
    switch (term.kind) {
      case AuxKind::discriminant: {
        auto d = discriminant_batch(flat, labels_onehot, config_.epsilon);
        if (!d.degenerate_neurons.empty()) {
          report.notes.push_back(fmt::format("L_D: {} neuron(s) lacked a target or non-target sample in this batch",
                                             d.degenerate_neurons.size()));
        }
        part.loss = d.loss;
        part.grad = std::move(d.grad);
        break;
      }
      case AuxKind::adaptive_discriminant:
        part = adaptive_discriminant(flat, labels_onehot, std::get<stats::NeuronClassStats>(state_[j]),
                                     config_.epsilon);
        break;
      case AuxKind::center:
        part = center_loss(flat, labels_onehot, std::get<stats::CenterBank>(state_[j]));
        break;
      case AuxKind::adaptive_center:
        part = adaptive_center_loss(flat, labels_onehot, std::get<stats::CenterBank>(state_[j]));
        break;
    }
    if (!std::isfinite(part.loss)) {
      throw NumericError(fmt::format("{} produced a non-finite value", component_name(term.kind)));
    }
    report.components[std::string(component_name(term.kind))] = part.loss;
    report.total += term.weight * part.loss;
    accumulate(report.gradients, term.tap, part.grad.reshaped(features.shape()), term.weight);
  }
  if (!std::isfinite(report.total)) throw NumericError("objective total is non-finite");
  return report;
}

void Objective::finish_step(const TapMap& taps, const Tensor& labels_onehot) {
  std::vector<std::size_t> ids;
  for (std::size_t j = 0; j < config_.terms.size(); ++j) {
    if (config_.terms[j].kind != AuxKind::center) continue;
    if (ids.empty()) ids = class_ids(labels_onehot);
    const Tensor& features = tap(taps, config_.terms[j].tap);
    const Tensor flat = features.rank() == 2 ? features : features.reshaped({features.dim(0), features.size() / features.dim(0)});
    std::get<stats::CenterBank>(state_[j]).update_minibatch(flat, ids);
  }
}

void Objective::reset_statistics() { state_ = initial_state_; }

const stats::NeuronClassStats* Objective::neuron_stats() const {
  for (const auto& s : state_) {
    if (auto* p = std::get_if<stats::NeuronClassStats>(&s)) return p;
  }
  return nullptr;
}

const stats::CenterBank* Objective::center_bank() const {
  for (const auto& s : state_) {
    if (auto* p = std::get_if<stats::CenterBank>(&s)) return p;
  }
  return nullptr;
}

std::map<std::string, Tensor> Objective::snapshot() const {
  std::map<std::string, Tensor> out;
  for (std::size_t j = 0; j < state_.size(); ++j) {
    const std::string key = fmt::format("objective.{}", component_name(config_.terms[j].kind));
    if (auto* s = std::get_if<stats::NeuronClassStats>(&state_[j])) out.emplace(key, s->snapshot());
    if (auto* b = std::get_if<stats::CenterBank>(&state_[j])) out.emplace(key, b->snapshot());
  }
  return out;
}

void Objective::restore(const std::map<std::string, Tensor>& state) {
  for (std::size_t j = 0; j < state_.size(); ++j) {
    const std::string key = fmt::format("objective.{}", component_name(config_.terms[j].kind));
    auto it = state.find(key);
    if (it == state.end()) continue;
    if (std::holds_alternative<stats::NeuronClassStats>(state_[j])) {
      auto restored = stats::NeuronClassStats::restore(it->second);
      if (restored.neurons() != classes_) throw FormatError(fmt::format("{} snapshot has wrong size", key));
      state_[j] = std::move(restored);
    } else if (auto* bank = std::get_if<stats::CenterBank>(&state_[j])) {
      auto restored = stats::CenterBank::restore(it->second);
      if (restored.classes() != bank->classes() || restored.dim() != bank->dim() ||
          restored.mode() != bank->mode()) {
        throw FormatError(fmt::format("{} snapshot does not match the configured bank", key));
      }
      state_[j] = std::move(restored);
    }
  }
}

std::string format_number(double value) { return fmt::format("{}", value); }

std::string report_csv_header() { return "step,total,L_S,L_D,L_AD,L_C,L_AC"; }

std::string report_csv_row(std::size_t step, const LossReport& report) {
  std::string row = fmt::format("{},{}", step, format_number(report.total));
  auto field = [&](std::string_view name) {
    row += ',';
    auto it = report.components.find(std::string(name));
    if (it != report.components.end()) row += format_number(it->second);
  };
  field("L_S");
  for (auto kind : kAllKinds) field(component_name(kind));
  return row;
}

}  // namespace discrim::loss
