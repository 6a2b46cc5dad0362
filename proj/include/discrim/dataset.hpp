#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "discrim/losses.hpp"
#include "discrim/rng.hpp"
#include "discrim/tensor.hpp"

namespace discrim::data {

enum class Split { train, test };

// Maps stored values back to the source range: raw = offset + scale * value.
struct Normalization {
  double offset = 0.0;
  double scale = 1.0;
};

struct Dataset {
  Tensor images;            // [N, h, w, c], values in [0, 1]
  std::vector<int> labels;  // class ids in [0, classes)
  std::size_t classes = 0;
  Split split = Split::train;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
};

// Big-endian IDX pair: images magic 0x00000803 (u8, [N, rows, cols]) and
// labels magic 0x00000801 (u8, [N]). Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 Split split = Split::train, std::size_t classes = 10);

// Standard MNIST file names inside `dir`.
Dataset load_mnist_dir(const std::filesystem::path& dir, Split split);

// First `count` samples (all when count is 0 or exceeds the size).
Dataset head(const Dataset& ds, std::size_t count);

/// Deterministic Gaussian blobs on [side, side, 1] images.
///
/// Class k has mean (separation / sqrt 2) * e_k in pixel space, so every pair
/// of class means is exactly `separation` apart, plus unit isotropic noise.
/// The whole set is then mapped affinely onto [0, 1]; the map is recorded in
/// `normalization`. Samples are interleaved by class.
Dataset synth_blobs(std::size_t classes, std::size_t side, std::size_t per_class, double separation,
                    std::uint64_t seed);

struct AffineParams {
  double rotation_deg = 0.0;
  double shift_x = 0.0;  // pixels, positive moves content right
  double shift_y = 0.0;  // pixels, positive moves content down
  double scale = 1.0;
};

struct AugmentConfig {
  double max_rotation_deg = 10.0;
  double max_shift_fraction = 0.1;
  double min_scale = 0.9;
  double max_scale = 1.1;
};

// Resamples an [h, w, c] image under rotation and scaling about the image
// center followed by the shift; bilinear, zero outside the source.
Tensor apply_affine(const Tensor& image, const AffineParams& params);
AffineParams sample_affine(Rng& rng, const AugmentConfig& config, std::size_t height, std::size_t width);
Tensor affine_augment(const Tensor& image, Rng& rng, const AugmentConfig& config);

// Gathers samples `indices` into a labeled batch; optionally augments each image.
loss::LabeledBatch make_batch(const Dataset& ds, std::span<const std::size_t> indices,
                              Rng* augment_rng = nullptr, const AugmentConfig* augment = nullptr);

}  // namespace discrim::data
