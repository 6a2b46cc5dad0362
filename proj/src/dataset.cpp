#include "discrim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <numbers>

namespace discrim::data {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::uint32_t big_endian_u32(const std::vector<unsigned char>& bytes, std::size_t offset,
                             const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) throw FormatError(fmt::format("{}: truncated header", path.string()));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Shape Dataset::sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, Split split,
                 std::size_t classes) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);

  const std::uint32_t image_magic = big_endian_u32(image_bytes, 0, images_path);
  if (image_magic != kImagesMagic) {
    throw FormatError(fmt::format("{}: bad magic 0x{:08x} (expected 0x{:08x})", images_path.string(), image_magic,
                                  kImagesMagic));
  }
  const std::uint32_t label_magic = big_endian_u32(label_bytes, 0, labels_path);
  if (label_magic != kLabelsMagic) {
    throw FormatError(fmt::format("{}: bad magic 0x{:08x} (expected 0x{:08x})", labels_path.string(), label_magic,
                                  kLabelsMagic));
  }
  const std::size_t n = big_endian_u32(image_bytes, 4, images_path);
  const std::size_t rows = big_endian_u32(image_bytes, 8, images_path);
  const std::size_t cols = big_endian_u32(image_bytes, 12, images_path);
  const std::size_t n_labels = big_endian_u32(label_bytes, 4, labels_path);
  if (n != n_labels) {
    throw FormatError(fmt::format("count mismatch: {} images but {} labels", n, n_labels));
  }
  const std::size_t pixels = n * rows * cols;
  if (image_bytes.size() < 16 + pixels) {
    throw FormatError(fmt::format("{}: truncated payload ({} of {} pixel bytes)", images_path.string(),
                                  image_bytes.size() - 16, pixels));
  }
  if (label_bytes.size() < 8 + n) {
    throw FormatError(fmt::format("{}: truncated payload ({} of {} labels)", labels_path.string(),
                                  label_bytes.size() - 8, n));
  }

  Dataset ds;
  ds.classes = classes;
  ds.split = split;
  ds.images = Tensor({n, rows, cols, 1});
  auto dst = ds.images.data_mut();
  for (std::size_t i = 0; i < pixels; ++i) dst[i] = static_cast<double>(image_bytes[16 + i]) / 255.0;
  ds.normalization = {0.0, 255.0};
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = label_bytes[8 + i];
    if (static_cast<std::size_t>(label) >= classes) {
      throw FormatError(fmt::format("{}: label {} at index {} outside [0, {})", labels_path.string(), label, i,
                                    classes));
    }
    ds.labels[i] = label;
  }
  return ds;
}

Dataset load_mnist_dir(const std::filesystem::path& dir, Split split) {
  const char* prefix = split == Split::train ? "train" : "t10k";
  return load_idx(dir / fmt::format("{}-images-idx3-ubyte", prefix), dir / fmt::format("{}-labels-idx1-ubyte", prefix),
                  split);
}

Dataset head(const Dataset& ds, std::size_t count) {
  if (count == 0 || count >= ds.size()) return ds;
  Dataset out;
  out.classes = ds.classes;
  out.split = ds.split;
  out.normalization = ds.normalization;
  Shape shape = ds.images.shape();
  const std::size_t per = ds.images.size() / shape[0];
  shape[0] = count;
  auto src = ds.images.data();
  out.images = Tensor(shape, std::vector<double>(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(count * per)));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + static_cast<std::ptrdiff_t>(count));
  return out;
}

Dataset synth_blobs(std::size_t classes, std::size_t side, std::size_t per_class, double separation,
                    std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_blobs needs at least 2 classes");
  const std::size_t dim = side * side;
  if (dim < classes) throw ConfigError(fmt::format("{}x{} images cannot hold {} orthogonal class means", side, side, classes));
  if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("separation must be finite and >= 0");

  Rng rng(seed);
  const std::size_t n = classes * per_class;
  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor({n, side, side, 1});
  ds.labels.resize(n);
  auto x = ds.images.data_mut();
  const double offset = separation / std::numbers::sqrt2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    ds.labels[i] = static_cast<int>(k);
    for (std::size_t d = 0; d < dim; ++d) x[i * dim + d] = rng.normal() + (d == k ? offset : 0.0);
  }
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double span = std::max(*hi_it - lo, 1e-12);
  for (double& v : x) v = std::clamp((v - lo) / span, 0.0, 1.0);
  ds.normalization = {lo, span};
  return ds;
}

Tensor apply_affine(const Tensor& image, const AffineParams& p) {
  if (image.rank() != 3) throw ShapeError("apply_affine expects an [h, w, c] image");
  if (!(p.scale > 0.0)) throw ConfigError("affine scale must be positive");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double theta = p.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  Tensor out(image.shape());
  auto src = image.data();
  auto dst = out.data_mut();
  auto sample = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::size_t ch) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) return 0.0;
    return src[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * c + ch];
  };
  // Forward map: q = center + scale * R(theta) (p - center) + shift. Each output
  // pixel pulls from the inverse image of its center.
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      const double dx = static_cast<double>(ox) - cx - p.shift_x;
      const double dy = static_cast<double>(oy) - cy - p.shift_y;
      const double sx = (cos_t * dx + sin_t * dy) / p.scale + cx;
      const double sy = (-sin_t * dx + cos_t * dy) / p.scale + cy;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const double ty = sy - fy, tx = sx - fx;
      const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = (1.0 - ty) * (1.0 - tx) * sample(y0, x0, ch);
        if (tx != 0.0) v += (1.0 - ty) * tx * sample(y0, x0 + 1, ch);
        if (ty != 0.0) v += ty * (1.0 - tx) * sample(y0 + 1, x0, ch);
        if (ty != 0.0 && tx != 0.0) v += ty * tx * sample(y0 + 1, x0 + 1, ch);
        dst[(oy * w + ox) * c + ch] = v;
      }
    }
  }
  return out;
}

AffineParams sample_affine(Rng& rng, const AugmentConfig& config, std::size_t height, std::size_t width) {
  AffineParams p;
  p.rotation_deg = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg);
  p.shift_x = rng.uniform(-config.max_shift_fraction, config.max_shift_fraction) * static_cast<double>(width);
  p.shift_y = rng.uniform(-config.max_shift_fraction, config.max_shift_fraction) * static_cast<double>(height);
  p.scale = rng.uniform(config.min_scale, config.max_scale);
  return p;
}

Tensor affine_augment(const Tensor& image, Rng& rng, const AugmentConfig& config) {
  if (image.rank() != 3) throw ShapeError("affine_augment expects an [h, w, c] image");
  return apply_affine(image, sample_affine(rng, config, image.dim(0), image.dim(1)));
}

loss::LabeledBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices, Rng* augment_rng,
                              const AugmentConfig* augment) {
  const Shape sample = ds.sample_shape();
  const std::size_t per = shape_size(sample);
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  loss::LabeledBatch batch;
  batch.inputs = Tensor(shape);
  std::vector<int> labels(indices.size());
  auto dst = batch.inputs.data_mut();
  auto src = ds.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t j = indices[i];
    if (j >= ds.size()) throw ShapeError(fmt::format("sample index {} outside dataset of {}", j, ds.size()));
    if (augment_rng != nullptr && augment != nullptr) {
      Tensor img(sample, std::vector<double>(src.begin() + static_cast<std::ptrdiff_t>(j * per),
                                             src.begin() + static_cast<std::ptrdiff_t>((j + 1) * per)));
      const Tensor moved = affine_augment(img, *augment_rng, *augment);
      std::copy(moved.data().begin(), moved.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
    } else {
      std::memcpy(dst.data() + i * per, src.data() + j * per, per * sizeof(double));
    }
    labels[i] = ds.labels[j];
  }
  batch.labels_onehot = loss::onehot(labels, ds.classes);
  return batch;
}

}  // namespace discrim::data
