#include "discrim/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>

#include "gemm.hpp"

namespace discrim::nn {

namespace {

void require_rank(const Tensor& x, std::size_t rank, const char* who) {
  if (x.rank() != rank) {
    throw ShapeError(fmt::format("{}: expected rank-{} input, got {}", who, rank, shape_string(x.shape())));
  }
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.data_mut()) v = rng.uniform(-bound, bound);
}

// Working-set cap for one im2col buffer, in doubles.
constexpr std::size_t kIm2colBudget = std::size_t{1} << 21;

}  // namespace

std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::size_t in, std::size_t out, bool he_init) : in_(in), out_(out), he_init_(he_init) {
  params_.push_back({"weight", Tensor({in, out}), Tensor({in, out})});
  params_.push_back({"bias", Tensor({out}), Tensor({out})});
}

Shape Dense::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != in_) {
    throw ShapeError(fmt::format("dense({}->{}) cannot take per-sample shape {}", in_, out_, shape_string(input)));
  }
  return {out_};
}

void Dense::initialize(Rng& rng) {
  const double bound = std::sqrt((he_init_ ? 6.0 : 3.0) / static_cast<double>(in_));
  fill_uniform(params_[0].value, rng, bound);
  params_[1].value = Tensor({out_});
}

Tensor Dense::forward(const Tensor& x, Mode) {
  require_rank(x, 2, "dense");
  if (x.dim(1) != in_) {
    throw ShapeError(fmt::format("dense: input width {} != {}", x.dim(1), in_));
  }
  input_ = x;
  const std::size_t n = x.dim(0);
  Tensor y({n, out_});
  detail::gemm(false, false, n, out_, in_, x.data().data(), params_[0].value.data().data(), y.data_mut().data(),
               false);
  const auto b = params_[1].value.data();
  for (std::size_t i = 0; i < n; ++i) {
    auto row = y.row_mut(i);
    for (std::size_t j = 0; j < out_; ++j) row[j] += b[j];
  }
  y.check_finite("dense forward");
  return y;
}

Tensor Dense::backward(const Tensor& grad_out) {
  const std::size_t n = input_.dim(0);
  if (grad_out.shape() != Shape{n, out_}) {
    throw ShapeError(fmt::format("dense backward: gradient {} does not match output", shape_string(grad_out.shape())));
  }
  detail::gemm(true, false, in_, out_, n, input_.data().data(), grad_out.data().data(),
               params_[0].grad.data_mut().data(), false);
  auto db = params_[1].grad.data_mut();
  std::fill(db.begin(), db.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto g = grad_out.row(i);
    for (std::size_t j = 0; j < out_; ++j) db[j] += g[j];
  }
  Tensor dx({n, in_});
  detail::gemm(false, true, n, in_, out_, grad_out.data().data(), params_[0].value.data().data(),
               dx.data_mut().data(), false);
  return dx;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t padding)
    : in_(in_channels), out_(out_channels), pad_(padding) {
  if (padding > 1) throw ConfigError("conv2d padding must be 0 or 1");
  const std::size_t rows = kKernel * kKernel * in_;
  params_.push_back({"weight", Tensor({rows, out_}), Tensor({rows, out_})});
  params_.push_back({"bias", Tensor({out_}), Tensor({out_})});
}

Shape Conv2d::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[2] != in_) {
    throw ShapeError(fmt::format("conv2d({}->{}) cannot take per-sample shape {}", in_, out_, shape_string(input)));
  }
  if (input[0] + 2 * pad_ < kKernel || input[1] + 2 * pad_ < kKernel) {
    throw ShapeError(fmt::format("conv2d: input {} smaller than the kernel", shape_string(input)));
  }
  return {input[0] + 2 * pad_ - (kKernel - 1), input[1] + 2 * pad_ - (kKernel - 1), out_};
}

void Conv2d::initialize(Rng& rng) {
  fill_uniform(params_[0].value, rng, std::sqrt(6.0 / static_cast<double>(kKernel * kKernel * in_)));
  params_[1].value = Tensor({out_});
}

std::size_t Conv2d::chunk_size() const {
  const std::size_t per_sample = out_h_ * out_w_ * kKernel * kKernel * in_;
  return std::max<std::size_t>(1, kIm2colBudget / std::max<std::size_t>(1, per_sample));
}

Tensor Conv2d::im2col(const Tensor& x, std::size_t first, std::size_t count) const {
  const std::size_t h = x.dim(1), w = x.dim(2), c = in_;
  const std::size_t width = kKernel * kKernel * c;
  Tensor cols({count * out_h_ * out_w_, width});
  const double* src = x.data().data();
  double* dst = cols.data_mut().data();
  for (std::size_t s = 0; s < count; ++s) {
    const double* image = src + (first + s) * h * w * c;
    for (std::size_t oy = 0; oy < out_h_; ++oy) {
      for (std::size_t ox = 0; ox < out_w_; ++ox) {
        double* row = dst + ((s * out_h_ + oy) * out_w_ + ox) * width;
        for (std::size_t ky = 0; ky < kKernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad_);
          for (std::size_t kx = 0; kx < kKernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad_);
            double* seg = row + (ky * kKernel + kx) * c;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) {
              for (std::size_t ch = 0; ch < c; ++ch) seg[ch] = 0.0;
            } else {
              const double* pix = image + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
              for (std::size_t ch = 0; ch < c; ++ch) seg[ch] = pix[ch];
            }
          }
        }
      }
    }
  }
  return cols;
}

void Conv2d::col2im(const Tensor& cols, Tensor& dx, std::size_t first, std::size_t count) const {
  const std::size_t h = dx.dim(1), w = dx.dim(2), c = in_;
  const std::size_t width = kKernel * kKernel * c;
  const double* src = cols.data().data();
  double* dst = dx.data_mut().data();
  for (std::size_t s = 0; s < count; ++s) {
    double* image = dst + (first + s) * h * w * c;
    for (std::size_t oy = 0; oy < out_h_; ++oy) {
      for (std::size_t ox = 0; ox < out_w_; ++ox) {
        const double* row = src + ((s * out_h_ + oy) * out_w_ + ox) * width;
        for (std::size_t ky = 0; ky < kKernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kKernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* seg = row + (ky * kKernel + kx) * c;
            double* pix = image + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
            for (std::size_t ch = 0; ch < c; ++ch) pix[ch] += seg[ch];
          }
        }
      }
    }
  }
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "conv2d");
  const Shape out_shape = output_shape({x.dim(1), x.dim(2), x.dim(3)});
  out_h_ = out_shape[0];
  out_w_ = out_shape[1];
  input_ = x;
  const std::size_t n = x.dim(0);
  const std::size_t width = kKernel * kKernel * in_;
  const std::size_t pixels = out_h_ * out_w_;
  Tensor y({n, out_h_, out_w_, out_});
  const std::size_t chunk = chunk_size();
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    const Tensor cols = im2col(x, first, count);
    double* dst = y.data_mut().data() + first * pixels * out_;
    detail::gemm(false, false, count * pixels, out_, width, cols.data().data(), params_[0].value.data().data(), dst,
                 false);
  }
  const auto b = params_[1].value.data();
  auto yd = y.data_mut();
  for (std::size_t r = 0; r < n * pixels; ++r) {
    for (std::size_t j = 0; j < out_; ++j) yd[r * out_ + j] += b[j];
  }
  y.check_finite("conv2d forward");
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const std::size_t n = input_.dim(0);
  if (grad_out.shape() != Shape{n, out_h_, out_w_, out_}) {
    throw ShapeError(fmt::format("conv2d backward: gradient {} does not match output", shape_string(grad_out.shape())));
  }
  const std::size_t width = kKernel * kKernel * in_;
  const std::size_t pixels = out_h_ * out_w_;
  auto db = params_[1].grad.data_mut();
  std::fill(db.begin(), db.end(), 0.0);
  const auto g = grad_out.data();
  for (std::size_t r = 0; r < n * pixels; ++r) {
    for (std::size_t j = 0; j < out_; ++j) db[j] += g[r * out_ + j];
  }

  Tensor dx(input_.shape());
  const std::size_t chunk = chunk_size();
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    const std::size_t rows = count * pixels;
    const Tensor cols = im2col(input_, first, count);
    const double* g_chunk = g.data() + first * pixels * out_;
    detail::gemm(true, false, width, out_, rows, cols.data().data(), g_chunk, params_[0].grad.data_mut().data(),
                 first != 0);
    Tensor dcols({rows, width});
    detail::gemm(false, true, rows, width, out_, g_chunk, params_[0].value.data().data(), dcols.data_mut().data(),
                 false);
    col2im(dcols, dx, first, count);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Relu

Tensor Relu::forward(const Tensor& x, Mode) {
  shape_ = x.shape();
  Tensor y(x.shape());
  auto src = x.data();
  auto dst = y.data_mut();
  active_.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::max(src[i], 0.0);
  for (std::size_t i = 0; i < src.size(); ++i) active_[i] = src[i] > 0.0 ? 1 : 0;
  return y;
}

Tensor Relu::backward(const Tensor& grad_out) {
  if (grad_out.shape() != shape_) throw ShapeError("relu backward: gradient shape mismatch");
  Tensor dx(shape_);
  auto g = grad_out.data();
  auto dst = dx.data_mut();
  // derivative at exactly 0 is 0
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = active_[i] ? g[i] : 0.0;
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2x2

Shape MaxPool2x2::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[0] % 2 != 0 || input[1] % 2 != 0 || input[0] == 0 || input[1] == 0) {
    throw ShapeError(fmt::format("maxpool2x2 needs even spatial size, got {}", shape_string(input)));
  }
  return {input[0] / 2, input[1] / 2, input[2]};
}

Tensor MaxPool2x2::forward(const Tensor& x, Mode) {
  require_rank(x, 4, "maxpool2x2");
  const Shape out = output_shape({x.dim(1), x.dim(2), x.dim(3)});
  input_shape_ = x.shape();
  const std::size_t n = x.dim(0), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = out[0], ow = out[1];
  Tensor y({n, oh, ow, c});
  argmax_.assign(y.size(), 0);
  const auto src = x.data();
  auto dst = y.data_mut();
  std::size_t o = 0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t ch = 0; ch < c; ++ch, ++o) {
          const std::size_t base = ((s * x.dim(1) + 2 * oy) * w + 2 * ox) * c + ch;
          const std::size_t candidates[4] = {base, base + c, base + w * c, base + w * c + c};
          std::size_t best = candidates[0];
          for (std::size_t q = 1; q < 4; ++q) {
            if (src[candidates[q]] > src[best]) best = candidates[q];
          }
          dst[o] = src[best];
          argmax_[o] = best;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2x2::backward(const Tensor& grad_out) {
  if (grad_out.size() != argmax_.size()) throw ShapeError("maxpool backward: gradient shape mismatch");
  Tensor dx(input_shape_);
  auto dst = dx.data_mut();
  auto g = grad_out.data();
  for (std::size_t o = 0; o < argmax_.size(); ++o) dst[argmax_[o]] += g[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Flatten

Tensor Flatten::forward(const Tensor& x, Mode) {
  if (x.rank() < 1) throw ShapeError("flatten: scalar input");
  input_shape_ = x.shape();
  return x.reshaped({x.dim(0), x.dim(0) == 0 ? 0 : x.size() / x.dim(0)});
}

Tensor Flatten::backward(const Tensor& grad_out) { return grad_out.reshaped(input_shape_); }

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::size_t channels, double momentum, double epsilon)
    : channels_(channels), momentum_(momentum), epsilon_(epsilon) {
  params_.push_back({"gamma", Tensor({channels}, 1.0), Tensor({channels})});
  params_.push_back({"beta", Tensor({channels}), Tensor({channels})});
  running_mean_ = Tensor({channels});
  running_var_ = Tensor({channels}, 1.0);
}

std::vector<Buffer> BatchNorm::buffers() {
  return {{"running_mean", &running_mean_}, {"running_var", &running_var_}, {"batches", &tracked_}};
}

void BatchNorm::initialize(Rng&) {
  params_[0].value = Tensor({channels_}, 1.0);
  params_[1].value = Tensor({channels_});
  running_mean_ = Tensor({channels_});
  running_var_ = Tensor({channels_}, 1.0);
  tracked_ = Tensor({1});
}

Tensor BatchNorm::forward(const Tensor& x, Mode mode) {
  if (x.rank() < 2 || x.dim(x.rank() - 1) != channels_) {
    throw ShapeError(fmt::format("batchnorm({}) cannot take input {}", channels_, shape_string(x.shape())));
  }
  last_mode_ = mode;
  const std::size_t rows = x.size() / channels_;
  const auto src = x.data();
  const auto gamma = params_[0].value.data();
  const auto beta = params_[1].value.data();
  inv_std_.assign(channels_, 0.0);
  normalized_ = Tensor(x.shape());
  auto xhat = normalized_.data_mut();
  Tensor y(x.shape());
  auto dst = y.data_mut();

  if (mode == Mode::eval) {
    if (!has_running_statistics()) {
      throw Error("batchnorm: running statistics are undefined before the first training batch");
    }
    for (std::size_t c = 0; c < channels_; ++c) inv_std_[c] = 1.0 / std::sqrt(running_var_[c] + epsilon_);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels_; ++c) {
        const std::size_t i = r * channels_ + c;
        xhat[i] = (src[i] - running_mean_[c]) * inv_std_[c];
        dst[i] = gamma[c] * xhat[i] + beta[c];
      }
    }
    return y;
  }

  if (rows == 0) throw ShapeError("batchnorm: empty batch");
  std::vector<double> mean(channels_, 0.0), var(channels_, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels_; ++c) mean[c] += src[r * channels_ + c];
  }
  for (auto& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double d = src[r * channels_ + c] - mean[c];
      var[c] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(rows);
  for (std::size_t c = 0; c < channels_; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + epsilon_);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t i = r * channels_ + c;
      xhat[i] = (src[i] - mean[c]) * inv_std_[c];
      dst[i] = gamma[c] * xhat[i] + beta[c];
    }
  }
  const double unbiased = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
  for (std::size_t c = 0; c < channels_; ++c) {
    running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean[c];
    running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var[c] * unbiased;
  }
  tracked_[0] += 1.0;
  return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
  if (grad_out.shape() != normalized_.shape()) throw ShapeError("batchnorm backward: gradient shape mismatch");
  const std::size_t rows = grad_out.size() / channels_;
  const auto g = grad_out.data();
  const auto xhat = normalized_.data();
  const auto gamma = params_[0].value.data();
  auto dgamma = params_[0].grad.data_mut();
  auto dbeta = params_[1].grad.data_mut();
  std::fill(dgamma.begin(), dgamma.end(), 0.0);
  std::fill(dbeta.begin(), dbeta.end(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t i = r * channels_ + c;
      dgamma[c] += g[i] * xhat[i];
      dbeta[c] += g[i];
    }
  }
  Tensor dx(grad_out.shape());
  auto dst = dx.data_mut();
  if (last_mode_ == Mode::eval) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t c = i % channels_;
      dst[i] = g[i] * gamma[c] * inv_std_[c];
    }
    return dx;
  }
  // dx = inv_std / M * (M * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat)), dxhat = g * gamma
  const double m = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t i = r * channels_ + c;
      const double sum_dxhat = gamma[c] * dbeta[c];
      const double sum_dxhat_xhat = gamma[c] * dgamma[c];
      dst[i] = inv_std_[c] / m * (m * g[i] * gamma[c] - sum_dxhat - xhat[i] * sum_dxhat_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double keep, Rng rng) : keep_(keep), rng_(std::move(rng)) {
  if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError(fmt::format("dropout keep probability {} not in (0, 1]", keep));
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
  last_mode_ = mode;
  if (mode == Mode::eval) return x;
  mask_ = Tensor(x.shape());
  auto m = mask_.data_mut();
  for (double& v : m) v = rng_.uniform() < keep_ ? 1.0 / keep_ : 0.0;
  return x * mask_;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  if (last_mode_ == Mode::eval) return grad_out;
  return grad_out * mask_;
}

}  // namespace discrim::nn
