#pragma once

// Architecture description: layer specs, residual blocks, shape inference and
// the two reference builders (the compact custom CNN and a ResNet50-style
// backbone with a configurable classification head).

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/kernels.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

enum class LayerKind {
  input,
  conv2d,
  maxpool2d,
  flatten,
  dense,
  dropout,
  relu,
  softmax,
  batchnorm,
  residual_block,
  global_avg_pool,
};

enum class Activation { none, relu, sigmoid, softmax };

/// When a residual block projects its skip path through a 1x1 convolution.
enum class Projection { automatic, always, never };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::input: return "input";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::residual_block: return "resblock";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "?";
}

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline const char* to_string(Projection p) {
  switch (p) {
    case Projection::automatic: return "auto";
    case Projection::always: return "always";
    case Projection::never: return "never";
  }
  return "?";
}

/// One layer description. Only the fields relevant to `kind` are meaningful;
/// the rest keep their defaults so that equality is well defined.
struct LayerSpec {
  LayerKind kind = LayerKind::input;
  std::string name;
  bool trainable = true;

  Shape input_shape;                     // input
  std::size_t filters = 0;               // conv2d, resblock
  std::size_t kernel = 3;                // conv2d
  std::size_t stride = 1;                // conv2d, maxpool2d, resblock
  Padding padding = Padding::same;       // conv2d, maxpool2d
  std::size_t window = 2;                // maxpool2d
  std::size_t units = 0;                 // dense
  double rate = 0.0;                     // dropout
  Activation activation = Activation::none;  // conv2d, dense, resblock (after the add)
  bool bottleneck = true;                // resblock
  Projection projection = Projection::automatic;  // resblock

  bool operator==(const LayerSpec&) const = default;
};

namespace layers {

inline LayerSpec input(Shape shape, std::string name = "input") {
  LayerSpec l;
  l.kind = LayerKind::input;
  l.name = std::move(name);
  l.input_shape = std::move(shape);
  return l;
}

inline LayerSpec conv2d(std::string name, std::size_t filters, std::size_t kernel,
                        Activation act = Activation::none, std::size_t stride = 1,
                        Padding padding = Padding::same) {
  LayerSpec l;
  l.kind = LayerKind::conv2d;
  l.name = std::move(name);
  l.filters = filters;
  l.kernel = kernel;
  l.activation = act;
  l.stride = stride;
  l.padding = padding;
  return l;
}

inline LayerSpec maxpool2d(std::string name, std::size_t window = 2, std::size_t stride = 2,
                           Padding padding = Padding::valid) {
  LayerSpec l;
  l.kind = LayerKind::maxpool2d;
  l.name = std::move(name);
  l.window = window;
  l.stride = stride;
  l.padding = padding;
  return l;
}

inline LayerSpec dense(std::string name, std::size_t units, Activation act = Activation::none) {
  LayerSpec l;
  l.kind = LayerKind::dense;
  l.name = std::move(name);
  l.units = units;
  l.activation = act;
  return l;
}

inline LayerSpec dropout(std::string name, double rate) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.name = std::move(name);
  l.rate = rate;
  return l;
}

/// flatten, relu, softmax, batchnorm, global_avg_pool.
inline LayerSpec simple(LayerKind kind, std::string name) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  return l;
}

inline LayerSpec resblock(std::string name, std::size_t filters, std::size_t stride = 1,
                          bool bottleneck = true, Projection projection = Projection::automatic) {
  LayerSpec l;
  l.kind = LayerKind::residual_block;
  l.name = std::move(name);
  l.filters = filters;
  l.stride = stride;
  l.bottleneck = bottleneck;
  l.projection = projection;
  l.activation = Activation::relu;
  return l;
}

}  // namespace layers

/// y = act(F(x) + shortcut(x)). An empty shortcut is the identity.
struct ResidualBlockSpec {
  std::vector<LayerSpec> branch;
  std::vector<LayerSpec> shortcut;
  Activation activation = Activation::none;
};

/// Checks that hyperparameters are present and in range. Throws Error whose
/// message names the offending field.
inline void validate_hyperparameters(const LayerSpec& l) {
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) throw Error(std::string(to_string(l.kind)) + " '" + l.name + "': " + what);
  };
  need(!l.name.empty(), "name must not be empty");
  switch (l.kind) {
    case LayerKind::input:
      need(!l.input_shape.empty() && l.input_shape.size() <= 3, "input needs 1 to 3 dimensions");
      for (auto d : l.input_shape) need(d >= 1, "input dimensions must be >= 1");
      break;
    case LayerKind::conv2d:
      need(l.filters >= 1, "filters must be >= 1");
      need(l.kernel >= 1, "kernel must be >= 1");
      need(l.stride >= 1, "stride must be >= 1");
      need(l.activation != Activation::softmax, "activation=softmax is not supported on conv2d");
      break;
    case LayerKind::maxpool2d:
      need(l.window >= 1, "window must be >= 1");
      need(l.stride >= 1, "stride must be >= 1");
      break;
    case LayerKind::dense:
      need(l.units >= 1, "units must be >= 1");
      break;
    case LayerKind::dropout:
      need(l.rate >= 0.0 && l.rate < 1.0, "rate must be in [0, 1)");
      break;
    case LayerKind::residual_block:
      need(l.filters >= 1, "filters must be >= 1");
      need(l.stride >= 1, "stride must be >= 1");
      need(l.activation == Activation::none || l.activation == Activation::relu,
           "activation must be relu or none");
      break;
    default:
      break;
  }
}

inline std::string describe(const LayerSpec& l) {
  return std::string(to_string(l.kind)) + " layer '" + l.name + "'";
}

inline Shape output_shape(const LayerSpec& layer, const Shape& in);

inline ConvGeometry conv_geometry(const LayerSpec& l, const Shape& in) {
  return ConvGeometry{in[0], in[1], in[2], l.filters, l.kernel, l.stride, l.padding};
}

inline PoolGeometry pool_geometry(const LayerSpec& l, const Shape& in) {
  return PoolGeometry{in[0], in[1], in[2], l.window, l.stride, l.padding};
}

/// Standard ResNet expansion of a `resblock` layer for a given input shape.
/// Bottleneck: 1x1(f, stride) -> 3x3(f) -> 1x1(4f), each followed by
/// batchnorm, ReLU between. Basic: 3x3(f, stride) -> 3x3(f).
inline ResidualBlockSpec expand_residual(const LayerSpec& l, const Shape& in) {
  if (in.size() != 3) {
    throw ShapeError(describe(l) + ": expects a rank-3 input but got " + shape_to_string(in));
  }
  const std::string& p = l.name;
  ResidualBlockSpec block;
  block.activation = l.activation;
  auto bn = [&](const std::string& n) { return layers::simple(LayerKind::batchnorm, p + "." + n); };
  auto act = [&](const std::string& n) { return layers::simple(LayerKind::relu, p + "." + n); };
  std::size_t out_c = 0;
  if (l.bottleneck) {
    out_c = 4 * l.filters;
    block.branch = {layers::conv2d(p + ".conv1", l.filters, 1, Activation::none, l.stride), bn("bn1"),
                    act("relu1"), layers::conv2d(p + ".conv2", l.filters, 3), bn("bn2"), act("relu2"),
                    layers::conv2d(p + ".conv3", out_c, 1), bn("bn3")};
  } else {
    out_c = l.filters;
    block.branch = {layers::conv2d(p + ".conv1", l.filters, 3, Activation::none, l.stride), bn("bn1"),
                    act("relu1"), layers::conv2d(p + ".conv2", l.filters, 3), bn("bn2")};
  }
  const bool shape_changes = l.stride != 1 || in[2] != out_c;
  bool project = false;
  switch (l.projection) {
    case Projection::automatic: project = shape_changes; break;
    case Projection::always: project = true; break;
    case Projection::never:
      if (shape_changes) {
        throw ShapeError(describe(l) + ": projection=never but the skip path " + shape_to_string(in) +
                         " does not match the branch output channels " + std::to_string(out_c) +
                         " / stride " + std::to_string(l.stride));
      }
      break;
  }
  if (project) {
    block.shortcut = {layers::conv2d(p + ".proj_conv", out_c, 1, Activation::none, l.stride),
                      bn("proj_bn")};
  }
  for (auto& x : block.branch) x.trainable = l.trainable;
  for (auto& x : block.shortcut) x.trainable = l.trainable;
  return block;
}

inline Shape chain_shape(const std::vector<LayerSpec>& seq, Shape s) {
  for (const auto& l : seq) s = output_shape(l, s);
  return s;
}

/// Output shape of an explicit residual block; throws if the two paths disagree.
inline Shape block_output_shape(const ResidualBlockSpec& block, const Shape& in,
                                const std::string& name = "residual block") {
  Shape main = chain_shape(block.branch, in);
  Shape skip = chain_shape(block.shortcut, in);
  if (main != skip) {
    throw ShapeError(name + ": branch output " + shape_to_string(main) +
                     " does not match skip path " + shape_to_string(skip));
  }
  return main;
}

inline Shape output_shape(const LayerSpec& l, const Shape& in) {
  validate_hyperparameters(l);
  auto need_rank = [&](std::size_t r, const char* hint) {
    if (in.size() != r) {
      throw ShapeError(describe(l) + ": expects a rank-" + std::to_string(r) + " input but got " +
                       shape_to_string(in) + hint);
    }
  };
  switch (l.kind) {
    case LayerKind::input:
      return l.input_shape;
    case LayerKind::conv2d: {
      need_rank(3, "");
      const auto g = conv_geometry(l, in);
      try {
        g.validate();
      } catch (const ShapeError& e) {
        throw ShapeError(describe(l) + ": " + e.what());
      }
      return {g.out_h(), g.out_w(), l.filters};
    }
    case LayerKind::maxpool2d: {
      need_rank(3, "");
      const auto g = pool_geometry(l, in);
      try {
        g.validate();
      } catch (const ShapeError& e) {
        throw ShapeError(describe(l) + ": " + e.what());
      }
      return {g.out_h(), g.out_w(), in[2]};
    }
    case LayerKind::flatten:
      return {shape_size(in)};
    case LayerKind::dense:
      need_rank(1, " (insert a flatten or global_avg_pool layer)");
      return {l.units};
    case LayerKind::softmax:
      need_rank(1, "");
      if (in[0] < 2) throw ShapeError(describe(l) + ": needs at least 2 inputs");
      return in;
    case LayerKind::dropout:
    case LayerKind::relu:
      return in;
    case LayerKind::batchnorm:
      if (in.size() != 1 && in.size() != 3) {
        throw ShapeError(describe(l) + ": expects a rank-1 or rank-3 input but got " +
                         shape_to_string(in));
      }
      return in;
    case LayerKind::global_avg_pool:
      need_rank(3, "");
      return {in[2]};
    case LayerKind::residual_block:
      return block_output_shape(expand_residual(l, in), in, describe(l));
  }
  throw ShapeError("unknown layer kind");
}

struct LayerShape {
  std::string name;
  Shape shape;
  bool operator==(const LayerShape&) const = default;
};

/// Ordered layer list; the first layer is the single input layer.
struct ArchitectureSpec {
  std::vector<LayerSpec> layers;

  const Shape& input_shape() const {
    if (layers.empty() || layers.front().kind != LayerKind::input) {
      throw Error("architecture has no input layer");
    }
    return layers.front().input_shape;
  }

  const LayerSpec* find(const std::string& name) const {
    for (const auto& l : layers) {
      if (l.name == name) return &l;
    }
    return nullptr;
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

/// Structural checks that do not need shapes: exactly one input layer, first,
/// and unique names.
inline void validate_structure(const ArchitectureSpec& spec) {
  if (spec.layers.empty()) throw Error("no input layer");
  if (spec.layers.front().kind != LayerKind::input) throw Error("first layer must be an input layer");
  std::set<std::string> names;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (i > 0 && l.kind == LayerKind::input) throw Error("more than one input layer ('" + l.name + "')");
    if (!names.insert(l.name).second) throw Error("duplicate layer name '" + l.name + "'");
  }
}

/// One (name, output shape) entry per layer, starting with the input.
inline std::vector<LayerShape> infer_shapes(const ArchitectureSpec& spec) {
  validate_structure(spec);
  std::vector<LayerShape> out;
  out.reserve(spec.layers.size());
  Shape s;
  for (const auto& l : spec.layers) {
    s = output_shape(l, s);
    out.push_back({l.name, s});
  }
  return out;
}

inline Shape output_shape(const ArchitectureSpec& spec) { return infer_shapes(spec).back().shape; }

/// The compact custom CNN: three conv(3x3, ReLU)+maxpool stages with 32, 64
/// and 128 filters, flatten, dense(256, ReLU), dropout(0.5), dense softmax
/// head. `input_size` scales the spatial resolution (224 is the reference).
inline ArchitectureSpec build_custom_cnn(std::size_t input_size = 224, std::size_t num_classes = 7,
                                         std::size_t channels = 3) {
  ArchitectureSpec s;
  s.layers = {
      layers::input({input_size, input_size, channels}),
      layers::conv2d("c1", 32, 3, Activation::relu),
      layers::maxpool2d("pool1"),
      layers::conv2d("c2", 64, 3, Activation::relu),
      layers::maxpool2d("pool2"),
      layers::conv2d("c3", 128, 3, Activation::relu),
      layers::maxpool2d("pool3"),
      layers::simple(LayerKind::flatten, "flatten"),
      layers::dense("d1", 256, Activation::relu),
      layers::dropout("dropout", 0.5),
      layers::dense("d2", num_classes, Activation::softmax),
  };
  return s;
}

struct HeadConfig {
  /// false: backbone only, ending at the global average pool.
  bool enabled = true;
  /// 0: single dense softmax layer; otherwise an extra dense(ReLU) of this width.
  std::size_t hidden_units = 0;
  double hidden_dropout = 0.0;
};

/// ResNet50-style network: 7x7/2 conv stem with batchnorm and 3x3/2 max
/// pool, then four stages of 3, 4, 6 and 3 bottleneck blocks (64, 128, 256,
/// 512 filters; stride 2 entering stages 2-4), global average pool and the
/// configured head. Layer names: stem.*, stage<s>.block<b>.*, avg_pool, head.*.
inline ArchitectureSpec build_resnet50(std::size_t num_classes = 7, HeadConfig head = {},
                                       std::size_t input_size = 224) {
  ArchitectureSpec s;
  s.layers.push_back(layers::input({input_size, input_size, 3}));
  s.layers.push_back(layers::conv2d("stem.conv", 64, 7, Activation::none, 2));
  s.layers.push_back(layers::simple(LayerKind::batchnorm, "stem.bn"));
  s.layers.push_back(layers::simple(LayerKind::relu, "stem.relu"));
  s.layers.push_back(layers::maxpool2d("stem.pool", 3, 2, Padding::same));
  constexpr std::size_t blocks[] = {3, 4, 6, 3};
  constexpr std::size_t filters[] = {64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t b = 0; b < blocks[stage]; ++b) {
      const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
      s.layers.push_back(layers::resblock("stage" + std::to_string(stage + 1) + ".block" +
                                              std::to_string(b + 1),
                                          filters[stage], stride));
    }
  }
  s.layers.push_back(layers::simple(LayerKind::global_avg_pool, "avg_pool"));
  if (head.enabled) {
    if (num_classes < 2) throw Error("build_resnet50: num_classes must be >= 2");
    if (head.hidden_units > 0) {
      s.layers.push_back(layers::dense("head.hidden", head.hidden_units, Activation::relu));
      if (head.hidden_dropout > 0.0) s.layers.push_back(layers::dropout("head.dropout", head.hidden_dropout));
    }
    s.layers.push_back(layers::dense("head.out", num_classes, Activation::softmax));
  }
  return s;
}

}  // namespace leancnn
