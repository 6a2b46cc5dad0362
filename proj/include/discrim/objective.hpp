#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "discrim/losses.hpp"
#include "discrim/streaming_stats.hpp"
#include "discrim/tensor.hpp"

namespace discrim::loss {

inline constexpr std::string_view kLogitsTap = "logits";
inline constexpr std::string_view kHiddenTap = "hidden_preact";

enum class AuxKind { discriminant, adaptive_discriminant, center, adaptive_center };

// Column name used in reports: L_D, L_AD, L_C, L_AC.
std::string_view component_name(AuxKind kind);

struct AuxTerm {
  AuxKind kind;
  double weight = 0.0;
  std::string tap;
};

/// Which auxiliary losses are attached, where, and with what weights.
/// Discriminant terms read the logits; center terms read any tap.
struct ObjectiveConfig {
  std::vector<AuxTerm> terms;
  double alpha = 0.99;     // forgetting factor shared by every adaptive term
  double beta = 1.0;       // mini-batch center step size
  double epsilon = 1e-8;   // added to every total-variance denominator
  Reduction ce_reduction = Reduction::mean;
  bool reset_each_epoch = false;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;      // "L_S" plus each attached term
  std::map<std::string, Tensor> gradients;       // tap name -> d total / d tap
  std::vector<std::string> notes;
};

using TapMap = std::map<std::string, Tensor>;

/// L = L_S + sum_j weight_j * L_j with per-term running state.
class Objective {
 public:
  // `tap_widths` gives the per-sample feature width of every tap the network
  // exposes; it must contain the logits tap with width `classes`.
  Objective(ObjectiveConfig config, std::size_t classes, const std::map<std::string, std::size_t>& tap_widths);

  const ObjectiveConfig& config() const { return config_; }
  std::size_t classes() const { return classes_; }

  // Advances adaptive accumulators (sample order), then evaluates every term.
  LossReport evaluate(const TapMap& taps, const Tensor& labels_onehot);

  // Mini-batch center updates, run after the optimizer step with the features
  // that produced this step's loss.
  void finish_step(const TapMap& taps, const Tensor& labels_onehot);

  void reset_statistics();

  const stats::NeuronClassStats* neuron_stats() const;
  const stats::CenterBank* center_bank() const;

  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& state);

 private:
  using TermState = std::variant<std::monostate, stats::NeuronClassStats, stats::CenterBank>;

  const Tensor& tap(const TapMap& taps, const std::string& name) const;

  ObjectiveConfig config_;
  std::size_t classes_;
  std::vector<TermState> state_;
  std::vector<TermState> initial_state_;
};

// CSV row per step: step,total,L_S,L_D,L_AD,L_C,L_AC with absent components left empty.
std::string report_csv_header();
std::string report_csv_row(std::size_t step, const LossReport& report);

// Shortest round-trip decimal form used by every CSV the project writes.
std::string format_number(double value);

}  // namespace discrim::loss
