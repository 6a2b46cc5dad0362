#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "discrim/dataset.hpp"
#include "discrim/error.hpp"
#include "discrim/layers.hpp"
#include "discrim/losses.hpp"
#include "discrim/optim.hpp"
#include "discrim/rng.hpp"

using namespace discrim;
using namespace discrim::data;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct IdxFixture {
  fs::path dir;
  fs::path images;
  fs::path labels;

  explicit IdxFixture(const std::string& name) : dir(fs::temp_directory_path() / ("discrim_idx_" + name)) {
    fs::create_directories(dir);
    images = dir / "images.idx";
    labels = dir / "labels.idx";
  }
  ~IdxFixture() { fs::remove_all(dir); }

  // Two 28x28 images: the first ramps i % 256, the second is blank except
  // for a saturated top-left pixel.
  void write(std::uint32_t image_magic = 0x803, std::uint32_t label_magic = 0x801, std::uint32_t image_count = 2,
             std::uint32_t label_count = 2, std::size_t drop_pixels = 0, unsigned char second_label = 7) {
    std::vector<unsigned char> img;
    put_u32(img, image_magic);
    put_u32(img, image_count);
    put_u32(img, 28);
    put_u32(img, 28);
    for (std::size_t i = 0; i < 784; ++i) img.push_back(static_cast<unsigned char>(i % 256));
    for (std::size_t i = 0; i < 784; ++i) img.push_back(i == 0 ? 255 : 0);
    img.resize(img.size() - drop_pixels);
    write_bytes(images, img);
    std::vector<unsigned char> lab;
    put_u32(lab, label_magic);
    put_u32(lab, label_count);
    lab.push_back(3);
    lab.push_back(second_label);
    write_bytes(labels, lab);
  }
};

std::string error_of(const IdxFixture& f) {
  try {
    load_idx(f.images, f.labels);
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

Tensor smooth_image(std::size_t h, std::size_t w) {
  Tensor img({h, w, 1});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      img.data_mut()[y * w + x] = 0.5 + 0.25 * std::sin(static_cast<double>(x) / 3.0) * std::cos(static_cast<double>(y) / 4.0);
    }
  }
  return img;
}

// Softmax regression on flattened images trained with plain SGD; returns the
// accuracy on `eval`.
double logistic_accuracy(const Dataset& train, const Dataset& eval, std::size_t epochs, double lr) {
  const std::size_t dim = shape_size(train.sample_shape());
  nn::Dense model(dim, train.classes, false);
  Rng rng(5);
  model.initialize(rng);
  optim::OptimizerState state{0.0, 0.0, {}};
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t b = 0; b + 10 <= order.size(); b += 10) {
      const auto batch = make_batch(train, std::span<const std::size_t>(order).subspan(b, 10));
      const Tensor x = batch.inputs.reshaped({10, dim});
      const Tensor z = model.forward(x, nn::Mode::train);
      model.backward(loss::softmax_cross_entropy(z, batch.labels_onehot).grad);
      std::vector<nn::Parameter*> params;
      for (auto& p : model.parameters()) params.push_back(&p);
      optim::sgd_step(params, state, lr);
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const std::size_t idx[] = {i};
    const auto batch = make_batch(eval, idx);
    const Tensor z = model.forward(batch.inputs.reshaped({1, dim}), nn::Mode::eval);
    std::size_t best = 0;
    for (std::size_t k = 1; k < eval.classes; ++k) {
      if (z[k] > z[best]) best = k;
    }
    if (static_cast<int>(best) == eval.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace

TEST_CASE("well-formed IDX fixture") {
  IdxFixture f("ok");
  f.write();
  const Dataset ds = load_idx(f.images, f.labels, Split::test);
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape() == Shape{2, 28, 28, 1});
  CHECK(ds.sample_shape() == Shape{28, 28, 1});
  CHECK(ds.labels == std::vector<int>{3, 7});
  CHECK(ds.split == Split::test);
  CHECK(ds.classes == 10);
  CHECK(ds.images[255] == 1.0);
  CHECK(ds.images[784] == 1.0);
  CHECK(ds.images[1] == 1.0 / 255.0);
  CHECK(ds.images[785] == 0.0);
  CHECK(ds.normalization.scale == 255.0);
}

TEST_CASE("malformed IDX files are rejected") {
  IdxFixture f("bad");
  f.write(0x802);
  CHECK(error_of(f).find("bad magic") != std::string::npos);
  f.write(0x803, 0x803);
  CHECK(error_of(f).find("bad magic") != std::string::npos);
  f.write(0x803, 0x801, 2, 2, 10);
  CHECK(error_of(f).find("truncated payload") != std::string::npos);
  f.write(0x803, 0x801, 2, 3);
  CHECK(error_of(f).find("count mismatch") != std::string::npos);
  f.write(0x803, 0x801, 2, 2, 0, 12);
  CHECK(error_of(f).find("outside [0, 10)") != std::string::npos);
  write_bytes(f.images, {0, 0, 8});
  CHECK(error_of(f).find("truncated header") != std::string::npos);
  CHECK_THROWS_AS(load_idx(f.dir / "missing", f.labels), FormatError);
}

TEST_CASE("standard MNIST test split when available") {
  const char* env = std::getenv("DISCRIM_DATA_DIR");
  if (env == nullptr || !fs::exists(fs::path(env) / "t10k-images-idx3-ubyte")) {
    MESSAGE("DISCRIM_DATA_DIR has no MNIST files; skipping");
    return;
  }
  const Dataset ds = load_mnist_dir(env, Split::test);
  CHECK(ds.size() == 10000);
  CHECK(ds.images.shape() == Shape{10000, 28, 28, 1});
  bool labels_ok = true;
  for (int l : ds.labels) labels_ok = labels_ok && l >= 0 && l < 10;
  CHECK(labels_ok);
  double lo = 1.0, hi = 0.0;
  for (double v : ds.images.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo == 0.0);
  CHECK(hi == 1.0);
}

TEST_CASE("head keeps the leading samples") {
  const Dataset ds = synth_blobs(3, 4, 5, 2.0, 1);
  const Dataset h = head(ds, 4);
  CHECK(h.size() == 4);
  CHECK(h.images.shape() == Shape{4, 4, 4, 1});
  CHECK(h.labels == std::vector<int>{0, 1, 2, 0});
  CHECK(h.images[63] == ds.images[63]);
  CHECK(head(ds, 0).size() == 15);
  CHECK(head(ds, 100).size() == 15);
}

TEST_CASE("synthetic blobs are deterministic and balanced") {
  const Dataset a = synth_blobs(4, 6, 25, 5.0, 11);
  const Dataset b = synth_blobs(4, 6, 25, 5.0, 11);
  const Dataset c = synth_blobs(4, 6, 25, 5.0, 12);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK_FALSE(a.images == c.images);
  std::vector<std::size_t> counts(4, 0);
  for (int l : a.labels) ++counts[static_cast<std::size_t>(l)];
  CHECK(counts == std::vector<std::size_t>(4, 25));
  for (double v : a.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(synth_blobs(1, 4, 5, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(synth_blobs(20, 4, 5, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(synth_blobs(3, 4, 5, -1.0, 1), ConfigError);
}

TEST_CASE("synthetic class means sit the requested distance apart") {
  const double sep = 6.0;
  const Dataset ds = synth_blobs(3, 4, 4000, sep, 2);
  std::vector<std::vector<double>> means(3, std::vector<double>(16, 0.0));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t d = 0; d < 16; ++d) {
      const double raw = ds.normalization.offset + ds.normalization.scale * ds.images[i * 16 + d];
      means[static_cast<std::size_t>(ds.labels[i])][d] += raw / 4000.0;
    }
  }
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = a + 1; b < 3; ++b) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < 16; ++d) d2 += (means[a][d] - means[b][d]) * (means[a][d] - means[b][d]);
      CHECK(std::sqrt(d2) == doctest::Approx(sep).epsilon(0.05));
    }
  }
}

TEST_CASE("well separated blobs are learned in one epoch") {
  const Dataset train = synth_blobs(2, 4, 200, 10.0, 3);
  const Dataset test = synth_blobs(2, 4, 200, 10.0, 4);
  CHECK(logistic_accuracy(train, test, 1, 0.5) > 0.99);
}

TEST_CASE("blobs without separation carry no label information") {
  const Dataset train = synth_blobs(4, 4, 250, 0.0, 5);
  const Dataset test = synth_blobs(4, 4, 500, 0.0, 6);
  const double acc = logistic_accuracy(train, test, 5, 0.1);
  CHECK(std::abs(acc - 0.25) < 0.05);
}

TEST_CASE("identity affine parameters leave the image unchanged") {
  const Tensor img = smooth_image(12, 10);
  const Tensor out = apply_affine(img, {});
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(out[i] - img[i]) < 1e-12);
}

TEST_CASE("translation moves a hot pixel") {
  Tensor img({9, 9, 1});
  img.data_mut()[4 * 9 + 3] = 1.0;
  const Tensor out = apply_affine(img, {0.0, 2.0, 0.0, 1.0});
  CHECK(out[4 * 9 + 5] == 1.0);
  double total = 0.0;
  for (double v : out.data()) total += v;
  CHECK(total == 1.0);
  const Tensor down = apply_affine(img, {0.0, 0.0, 3.0, 1.0});
  CHECK(down[7 * 9 + 3] == 1.0);
}

TEST_CASE("rotating forth and back is close to identity away from the border") {
  const std::size_t h = 28, w = 28;
  const Tensor img = smooth_image(h, w);
  for (double theta : {3.0, 7.5, 10.0}) {
    const Tensor back = apply_affine(apply_affine(img, {theta, 0, 0, 1}), {-theta, 0, 0, 1});
    double worst = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double ry = static_cast<double>(y) - 13.5, rx = static_cast<double>(x) - 13.5;
        if (std::hypot(ry, rx) > 11.0) continue;
        worst = std::max(worst, std::abs(back[y * w + x] - img[y * w + x]));
      }
    }
    CHECK(worst < 0.05);
  }
}

TEST_CASE("sampled augmentation stays inside the configured bounds") {
  Rng rng(7);
  const AugmentConfig cfg;
  for (int i = 0; i < 2000; ++i) {
    const AffineParams p = sample_affine(rng, cfg, 32, 20);
    CHECK(std::abs(p.rotation_deg) <= 10.0);
    CHECK(std::abs(p.shift_x) <= 2.0);
    CHECK(std::abs(p.shift_y) <= 3.2);
    CHECK(p.scale >= 0.9);
    CHECK(p.scale <= 1.1);
  }
  const Tensor img = smooth_image(8, 8);
  CHECK(affine_augment(img, rng, cfg).shape() == img.shape());
}

TEST_CASE("batches gather the requested samples") {
  const Dataset ds = synth_blobs(3, 4, 4, 3.0, 8);
  const std::vector<std::size_t> idx{5, 0, 11};
  const auto batch = make_batch(ds, idx);
  CHECK(batch.inputs.shape() == Shape{3, 4, 4, 1});
  CHECK(loss::class_ids(batch.labels_onehot) == std::vector<std::size_t>{2, 0, 2});
  for (std::size_t d = 0; d < 16; ++d) CHECK(batch.inputs[d] == ds.images[5 * 16 + d]);

  Rng rng(9);
  const AugmentConfig cfg;
  const auto moved = make_batch(ds, idx, &rng, &cfg);
  CHECK_FALSE(moved.inputs == batch.inputs);
  CHECK(moved.labels_onehot == batch.labels_onehot);
  const std::vector<std::size_t> bad{12};
  CHECK_THROWS_AS(make_batch(ds, bad), ShapeError);
}
