#include "discrim/network.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <sstream>

namespace discrim::nn {

namespace {

const std::vector<std::size_t> kMnistConvWidths{32, 64};
const std::vector<std::size_t> kComparisonConvWidths{128, 128, 128, 256, 256, 256, 512, 256, 128};

std::string join_widths(const std::vector<std::size_t>& widths) { return fmt::format("{}", fmt::join(widths, ",")); }

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

void build_mnist_small(Network& net, const Shape& input, std::size_t classes, const ArchitectureOptions& o) {
  const auto& widths = o.conv_widths.empty() ? kMnistConvWidths : o.conv_widths;
  if (widths.size() != 2) throw ConfigError("mnist_small takes exactly 2 conv widths");
  if (input[0] % 4 != 0 || input[1] % 4 != 0 || input[0] == 0 || input[1] == 0) {
    throw ShapeError(fmt::format("mnist_small needs spatial size divisible by 4, got {}", shape_string(input)));
  }
  net.add(std::make_unique<Conv2d>(input[2], widths[0], 1));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<MaxPool2x2>());
  net.add(std::make_unique<Conv2d>(widths[0], widths[1], 1));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<MaxPool2x2>());
  net.add(std::make_unique<Flatten>());
  const std::size_t flat = (input[0] / 4) * (input[1] / 4) * widths[1];
  net.add(std::make_unique<Dense>(flat, o.dense_width));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<Dense>(o.dense_width, o.hidden_width), std::string(loss::kHiddenTap));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<Dense>(o.hidden_width, classes, false));
}

void build_comparison(Network& net, const Shape& input, std::size_t classes, const ArchitectureOptions& o,
                      Rng& rng) {
  const auto& widths = o.conv_widths.empty() ? kComparisonConvWidths : o.conv_widths;
  if (widths.size() != 9) throw ConfigError("comparison takes exactly 9 conv widths");
  const std::size_t h = input[0], w = input[1];
  if (h % 4 != 0 || w % 4 != 0 || h / 4 < 8 || w / 4 < 8 || (h / 4 - 6) % 2 != 0 || (w / 4 - 6) % 2 != 0) {
    throw ShapeError(fmt::format("comparison network cannot take input {}: needs h, w divisible by 4 with "
                                 "(h/4 - 6) a positive even number",
                                 shape_string(input)));
  }
  std::size_t channels = input[2];
  auto conv_block = [&](std::size_t out, std::size_t padding) {
    net.add(std::make_unique<Conv2d>(channels, out, padding));
    net.add(std::make_unique<BatchNorm>(out, o.batchnorm_momentum, o.batchnorm_epsilon));
    net.add(std::make_unique<Relu>());
    channels = out;
  };
  conv_block(widths[0], 1);
  conv_block(widths[1], 1);
  conv_block(widths[2], 1);
  net.add(std::make_unique<MaxPool2x2>());
  conv_block(widths[3], 1);
  conv_block(widths[4], 1);
  conv_block(widths[5], 1);
  net.add(std::make_unique<MaxPool2x2>());
  conv_block(widths[6], 0);
  conv_block(widths[7], 0);
  conv_block(widths[8], 0);
  net.add(std::make_unique<MaxPool2x2>());
  net.add(std::make_unique<Flatten>());
  const std::size_t flat = ((h / 4 - 6) / 2) * ((w / 4 - 6) / 2) * channels;
  net.add(std::make_unique<Dense>(flat, o.fc_width));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<Dropout>(o.dropout_keep, rng.fork(1)));
  net.add(std::make_unique<Dense>(o.fc_width, o.hidden_width), std::string(loss::kHiddenTap));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<Dropout>(o.dropout_keep, rng.fork(2)));
  net.add(std::make_unique<Dense>(o.hidden_width, classes, false));
}

}  // namespace

Architecture parse_architecture(const std::string& id) {
  if (id == "mnist_small") return Architecture::mnist_small;
  if (id == "comparison") return Architecture::comparison;
  throw ConfigError(fmt::format("unknown architecture '{}'", id));
}

std::string to_string(Architecture arch) {
  return arch == Architecture::mnist_small ? "mnist_small" : "comparison";
}

Network::Network(Shape input_shape, std::size_t classes) : input_shape_(std::move(input_shape)), classes_(classes) {
  if (classes < 2) throw ConfigError("a classifier needs at least 2 classes");
}

void Network::add(std::unique_ptr<Layer> layer, std::string tap) {
  layers_.push_back(std::move(layer));
  if (!tap.empty()) {
    if (tap == loss::kLogitsTap) throw ConfigError("'logits' is reserved for the final layer");
    if (!taps_.emplace(std::move(tap), layers_.size() - 1).second) throw ConfigError("duplicate tap name");
  }
}

std::vector<Shape> Network::declared_shapes() const {
  std::vector<Shape> shapes;
  Shape s = input_shape_;
  for (const auto& layer : layers_) {
    s = layer->output_shape(s);
    shapes.push_back(s);
  }
  return shapes;
}

std::map<std::string, std::size_t> Network::tap_widths() const {
  const auto shapes = declared_shapes();
  if (shapes.empty() || shapes.back() != Shape{classes_}) {
    throw ShapeError(fmt::format("network output must be [{}]", classes_));
  }
  std::map<std::string, std::size_t> widths;
  widths[std::string(loss::kLogitsTap)] = classes_;
  for (const auto& [name, index] : taps_) widths[name] = shape_size(shapes[index]);
  return widths;
}

std::size_t Network::tap_layer(const std::string& tap) const {
  if (tap == loss::kLogitsTap) return layers_.size() - 1;
  auto it = taps_.find(tap);
  if (it == taps_.end()) throw ConfigError(fmt::format("network has no tap '{}'", tap));
  return it->second;
}

void Network::initialize(Rng& rng) {
  for (auto& layer : layers_) layer->initialize(rng);
}

Network::Output Network::forward(const Tensor& x, Mode mode) {
  Shape expected{x.rank() > 0 ? x.dim(0) : 0};
  expected.insert(expected.end(), input_shape_.begin(), input_shape_.end());
  if (x.shape() != expected) {
    throw ShapeError(fmt::format("network expects input {}, got {}", shape_string(expected), shape_string(x.shape())));
  }
  batch_ = x.dim(0);
  Output out;
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, mode);
    for (const auto& [name, index] : taps_) {
      if (index == i) out.taps[name] = h;
    }
  }
  out.logits = h;
  out.taps[std::string(loss::kLogitsTap)] = std::move(h);
  return out;
}

void Network::backward(const loss::TapMap& tap_grads) {
  for (const auto& [name, g] : tap_grads) tap_layer(name);  // reject unknown taps up front
  Tensor grad;
  bool have_grad = false;
  const auto shapes = declared_shapes();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    for (const auto& [name, g] : tap_grads) {
      if (tap_layer(name) != i) continue;
      if (!have_grad) {
        grad = g;
        have_grad = true;
      } else {
        grad = grad + g;
      }
    }
    if (!have_grad) {
      Shape s{batch_};
      s.insert(s.end(), shapes[i].begin(), shapes[i].end());
      grad = Tensor(s);
      have_grad = true;
    }
    grad = layers_[i]->backward(grad);
  }
}

std::vector<Parameter*> Network::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (auto& p : layer->parameters()) out.push_back(&p);
  }
  return out;
}

std::map<std::string, Tensor*> Network::named_state() {
  std::map<std::string, Tensor*> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = fmt::format("{:02}.{}", i, kind_name(layers_[i]->kind()));
    for (auto& p : layers_[i]->parameters()) out[fmt::format("{}.{}", prefix, p.name)] = &p.value;
    for (auto& b : layers_[i]->buffers()) out[fmt::format("{}.{}", prefix, b.name)] = b.value;
  }
  return out;
}

void Network::set_build_info(Architecture arch, ArchitectureOptions options) {
  build_info_ = std::make_pair(arch, std::move(options));
}

Network build_architecture(Architecture arch, const Shape& input, std::size_t classes,
                           const ArchitectureOptions& options, Rng& rng) {
  if (input.size() != 3) throw ShapeError("input shape must be [h, w, c]");
  Network net(input, classes);
  switch (arch) {
    case Architecture::mnist_small: build_mnist_small(net, input, classes, options); break;
    case Architecture::comparison: build_comparison(net, input, classes, options, rng); break;
  }
  net.set_build_info(arch, options);
  net.tap_widths();  // shape audit of the whole chain
  net.initialize(rng);
  return net;
}

TensorArchive to_archive(Network& net, const TensorArchive& extra) {
  if (!net.build_info()) throw ConfigError("only networks from build_architecture can be archived");
  const auto& [arch, o] = *net.build_info();
  TensorArchive archive = extra;
  archive.manifest["architecture"] = to_string(arch);
  archive.manifest["input_shape"] = join_widths(net.input_shape());
  archive.manifest["classes"] = std::to_string(net.classes());
  archive.manifest["conv_widths"] = join_widths(o.conv_widths);
  archive.manifest["dense_width"] = std::to_string(o.dense_width);
  archive.manifest["fc_width"] = std::to_string(o.fc_width);
  archive.manifest["hidden_width"] = std::to_string(o.hidden_width);
  archive.manifest["dropout_keep"] = loss::format_number(o.dropout_keep);
  archive.manifest["batchnorm_momentum"] = loss::format_number(o.batchnorm_momentum);
  archive.manifest["batchnorm_epsilon"] = loss::format_number(o.batchnorm_epsilon);
  for (const auto& [name, t] : net.named_state()) archive.tensors["net." + name] = *t;
  return archive;
}

Network network_from_archive(const TensorArchive& archive) {
  try {
    const Architecture arch = parse_architecture(archive.value("architecture"));
    const Shape input = parse_widths(archive.value("input_shape"));
    const std::size_t classes = std::stoul(archive.value("classes"));
    ArchitectureOptions o;
    o.conv_widths = parse_widths(archive.value("conv_widths"));
    o.dense_width = std::stoul(archive.value("dense_width"));
    o.fc_width = std::stoul(archive.value("fc_width"));
    o.hidden_width = std::stoul(archive.value("hidden_width"));
    o.dropout_keep = std::stod(archive.value("dropout_keep"));
    o.batchnorm_momentum = std::stod(archive.value("batchnorm_momentum"));
    o.batchnorm_epsilon = std::stod(archive.value("batchnorm_epsilon"));
    std::uint64_t seed = 0;
    if (auto it = archive.manifest.find("seed"); it != archive.manifest.end()) seed = std::stoull(it->second);
    Rng rng(seed);
    Network net = build_architecture(arch, input, classes, o, rng);
    for (auto& [name, t] : net.named_state()) {
      const Tensor& stored = archive.tensor("net." + name);
      if (stored.shape() != t->shape()) {
        throw FormatError(fmt::format("checkpoint tensor {} has shape {}, network expects {}", name,
                                      shape_string(stored.shape()), shape_string(t->shape())));
      }
      *t = stored;
    }
    return net;
  } catch (const std::logic_error& e) {  // stoul / stod failures
    throw FormatError(fmt::format("malformed checkpoint manifest: {}", e.what()));
  }
}

}  // namespace discrim::nn
