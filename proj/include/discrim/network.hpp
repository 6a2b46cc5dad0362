#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "discrim/layers.hpp"
#include "discrim/objective.hpp"
#include "discrim/rng.hpp"
#include "discrim/tensor_io.hpp"

namespace discrim::nn {

enum class Architecture { mnist_small, comparison };

Architecture parse_architecture(const std::string& id);
std::string to_string(Architecture arch);

/// Builder knobs. Defaults reproduce the published layer tables; tests
/// shrink the widths.
struct ArchitectureOptions {
  std::vector<std::size_t> conv_widths;  // empty: table defaults
  std::size_t dense_width = 256;         // mnist_small layer 3
  std::size_t fc_width = 1024;           // comparison layer 10 (width not given by the table)
  std::size_t hidden_width = 100;        // FC whose pre-ReLU output is the hidden tap
  double dropout_keep = 0.5;
  double batchnorm_momentum = 0.1;
  double batchnorm_epsilon = 1e-5;
};

/// Ordered layer chain with named tap points on layer outputs.
/// The last layer's output is always the `logits` tap.
class Network {
 public:
  struct Output {
    Tensor logits;
    loss::TapMap taps;
  };

  Network(Shape input_shape, std::size_t classes);

  void add(std::unique_ptr<Layer> layer, std::string tap = {});

  const Shape& input_shape() const { return input_shape_; }
  std::size_t classes() const { return classes_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  // Per-sample output shape of every layer, derived without running data.
  std::vector<Shape> declared_shapes() const;
  // Per-sample feature width of every tap, including logits.
  std::map<std::string, std::size_t> tap_widths() const;
  // Index of the layer whose output a tap names.
  std::size_t tap_layer(const std::string& tap) const;

  void initialize(Rng& rng);

  Output forward(const Tensor& x, Mode mode);
  // Gradients keyed by tap name; taps absent from the map contribute zero.
  void backward(const loss::TapMap& tap_grads);

  std::vector<Parameter*> parameters();
  // Parameters and buffers keyed "<layer index>.<kind>.<name>".
  std::map<std::string, Tensor*> named_state();

  void set_build_info(Architecture arch, ArchitectureOptions options);
  const std::optional<std::pair<Architecture, ArchitectureOptions>>& build_info() const { return build_info_; }

 private:
  Shape input_shape_;
  std::size_t classes_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::map<std::string, std::size_t> taps_;
  std::optional<std::pair<Architecture, ArchitectureOptions>> build_info_;
  std::size_t batch_ = 0;
};

// Builds the layer table for `arch` on an [h, w, c] input. The hidden tap sits
// on the FC of width `hidden_width`, before its ReLU. Weights are initialized
// from `rng`; dropout layers draw their own streams forked from it.
Network build_architecture(Architecture arch, const Shape& input, std::size_t classes,
                           const ArchitectureOptions& options, Rng& rng);

// Parameters, buffers and the architecture description. `extra` is merged in
// (manifest entries and tensors), e.g. optimizer and objective state.
TensorArchive to_archive(Network& net, const TensorArchive& extra = {});
Network network_from_archive(const TensorArchive& archive);

}  // namespace discrim::nn
