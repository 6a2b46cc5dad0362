#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "discrim/rng.hpp"
#include "discrim/tensor.hpp"

namespace discrim::nn {

enum class Mode { train, eval };
enum class LayerKind { dense, conv2d, relu, maxpool2x2, batchnorm, dropout, flatten };

std::string_view kind_name(LayerKind kind);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Non-trainable state saved with a model (batchnorm running statistics).
struct Buffer {
  std::string name;
  Tensor* value;
};

/// One stage of a fixed layer chain. Activations are batch-first; image
/// tensors are [N, H, W, C]. `backward` must follow a `forward` on the same
/// batch; it overwrites the parameter gradients and returns d loss / d input.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  // Per-sample output shape for a per-sample input shape.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual std::span<Parameter> parameters() { return {}; }
  virtual std::vector<Buffer> buffers() { return {}; }
  virtual void initialize(Rng& /*rng*/) {}
};

// y = x W + b, W: [in, out]. `he_init` selects He-uniform bounds (ReLU
// follows), otherwise LeCun-uniform.
class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, bool he_init = true);

  LayerKind kind() const override { return LayerKind::dense; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::span<Parameter> parameters() override { return params_; }
  void initialize(Rng& rng) override;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_, out_;
  bool he_init_;
  std::vector<Parameter> params_;  // weight [in, out], bias [out]
  Tensor input_;
};

// 3x3 convolution, stride 1, zero padding `padding` (0 or 1).
// Weight layout [3*3*in, out] with rows ordered (ky, kx, c_in).
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t padding);

  LayerKind kind() const override { return LayerKind::conv2d; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::span<Parameter> parameters() override { return params_; }
  void initialize(Rng& rng) override;

  static constexpr std::size_t kKernel = 3;

 private:
  Tensor im2col(const Tensor& x, std::size_t first, std::size_t count) const;
  void col2im(const Tensor& cols, Tensor& dx, std::size_t first, std::size_t count) const;
  std::size_t chunk_size() const;

  std::size_t in_, out_, pad_;
  std::vector<Parameter> params_;
  Tensor input_;
  std::size_t out_h_ = 0, out_w_ = 0;
};

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape shape_;
  std::vector<unsigned char> active_;  // 1 where the input was strictly positive
};

// 2x2 window, stride 2. Ties route the gradient to the first maximal element
// in row-major window order.
class MaxPool2x2 final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::maxpool2x2; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class Flatten final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Shape input_shape_;
};

// Normalizes the last axis (channels) over every other axis.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double epsilon = 1e-5);

  LayerKind kind() const override { return LayerKind::batchnorm; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::span<Parameter> parameters() override { return params_; }
  std::vector<Buffer> buffers() override;
  void initialize(Rng& rng) override;

  bool has_running_statistics() const { return tracked_[0] > 0.0; }

 private:
  std::size_t channels_;
  double momentum_, epsilon_;
  std::vector<Parameter> params_;  // gamma, beta
  Tensor running_mean_, running_var_;
  Tensor tracked_{Shape{1}};  // number of training batches seen
  Tensor normalized_;
  std::vector<double> inv_std_;
  Mode last_mode_ = Mode::train;
};

// Inverted dropout with keep probability `keep`; identity in eval mode.
class Dropout final : public Layer {
 public:
  Dropout(double keep, Rng rng);

  LayerKind kind() const override { return LayerKind::dropout; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;

  double keep() const { return keep_; }

 private:
  double keep_;
  Rng rng_;
  Tensor mask_;
  Mode last_mode_ = Mode::train;
};

}  // namespace discrim::nn
