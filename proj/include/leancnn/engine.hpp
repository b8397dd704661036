#pragma once

// Batched forward and reverse-mode backward passes over an ArchitectureSpec.
//
// Activations are (B, ...) tensors. The forward pass keeps each layer's
// output (plus pooling winners, dropout masks and batchnorm statistics) in a
// cache; the backward pass walks the cache in reverse and accumulates
// parameter gradients sample by sample in batch order, so results are
// bitwise reproducible.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "leancnn/arch.hpp"
#include "leancnn/error.hpp"
#include "leancnn/kernels.hpp"
#include "leancnn/params.hpp"
#include "leancnn/rng.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

enum class Mode { train, infer };

inline constexpr double kBatchNormEpsilon = 1e-3;
inline constexpr double kBatchNormMomentum = 0.99;

template <typename T>
struct LayerCache {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // maxpool2d
  std::vector<T> mask;              // dropout (train mode)
  Tensor<T> xhat;                   // batchnorm
  std::vector<T> mean, var, inv_std;
  bool batch_stats = false;         // batchnorm used batch statistics
  std::vector<LayerCache<T>> branch, shortcut;  // residual block
};

template <typename T>
struct ForwardCache {
  std::uint64_t params_version = 0;
  std::size_t layer_count = 0;
  Mode mode = Mode::infer;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
struct ForwardResult {
  Tensor<T> output;
  ForwardCache<T> cache;
};

template <typename T>
struct GradEntry {
  std::string name;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Same keying and shapes as the ParameterSet it was created from. Frozen
/// entries stay zero.
template <typename T>
class Gradients {
 public:
  static Gradients zeros_like(const ParameterSet<T>& params) {
    Gradients g;
    for (const auto& e : params.entries()) {
      g.index_.emplace(e.name, g.entries_.size());
      g.entries_.push_back({e.name, Tensor<T>(e.weights.shape(), T{0}), Tensor<T>(e.bias.shape(), T{0})});
    }
    return g;
  }

  GradEntry<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  const GradEntry<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  const GradEntry<T>& at(const std::string& name) const {
    const auto* e = find(name);
    if (!e) throw Error("no gradient entry '" + name + "'");
    return *e;
  }

  std::span<const GradEntry<T>> entries() const { return entries_; }
  std::span<GradEntry<T>> entries() { return entries_; }

 private:
  std::vector<GradEntry<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct BackwardResult {
  Gradients<T> gradients;
  /// Gradient w.r.t. the batch input; empty unless requested.
  Tensor<T> input_gradient;
};

namespace detail {

inline Shape batched(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

inline Shape sample_shape(const Shape& s) { return Shape(s.begin() + 1, s.end()); }

template <typename T>
void apply_activation(Activation a, Tensor<T>& y) {
  switch (a) {
    case Activation::none: break;
    case Activation::relu: kernel::relu_inplace<T>(y.values()); break;
    case Activation::sigmoid: kernel::sigmoid_inplace<T>(y.values()); break;
    case Activation::softmax:
      for (std::size_t b = 0; b < y.dim(0); ++b) kernel::softmax_inplace<T>(y.slice(b));
      break;
  }
}

template <typename T>
Tensor<T> activation_backward(Activation a, const Tensor<T>& y, Tensor<T> dy) {
  switch (a) {
    case Activation::none: return dy;
    case Activation::relu: kernel::relu_backward<T>(y.values(), dy.values(), dy.values()); return dy;
    case Activation::sigmoid:
      kernel::sigmoid_backward<T>(y.values(), dy.values(), dy.values());
      return dy;
    case Activation::softmax: {
      Tensor<T> dz(dy.shape());
      for (std::size_t b = 0; b < y.dim(0); ++b) kernel::softmax_backward<T>(y.slice(b), dy.slice(b), dz.slice(b));
      return dz;
    }
  }
  return dy;
}

template <typename T>
const ParamEntry<T>& layer_params(const ParameterSet<T>& params, const LayerSpec& l, const Shape& wshape,
                                  const Shape& bshape) {
  const auto* e = params.find(l.name);
  if (!e) throw Error(describe(l) + ": no parameters in the parameter set");
  if (e->weights.shape() != wshape || e->bias.shape() != bshape) {
    throw ShapeError(describe(l) + ": parameters have shapes " + shape_to_string(e->weights.shape()) + "/" +
                     shape_to_string(e->bias.shape()) + ", expected " + shape_to_string(wshape) + "/" +
                     shape_to_string(bshape));
  }
  return *e;
}

template <typename T>
Tensor<T> sequence_forward(const std::vector<LayerSpec>& seq, Shape in, const Tensor<T>& x,
                           const ParameterSet<T>& params, Mode mode, std::uint64_t seed,
                           std::vector<LayerCache<T>>* caches);

template <typename T>
Tensor<T> sequence_backward(const std::vector<LayerSpec>& seq, Shape in, const Tensor<T>& x,
                            const std::vector<LayerCache<T>>& caches, Tensor<T> dy,
                            const ParameterSet<T>& params, Gradients<T>& grads, bool need_dx);

template <typename T>
Tensor<T> block_forward(const ResidualBlockSpec& blk, const Shape& in, const Tensor<T>& x,
                        const ParameterSet<T>& params, Mode mode, std::uint64_t seed, LayerCache<T>& cache,
                        bool keep, const std::string& name) {
  Tensor<T> main = sequence_forward(blk.branch, in, x, params, mode, seed, keep ? &cache.branch : nullptr);
  Tensor<T> skip = blk.shortcut.empty()
                       ? x
                       : sequence_forward(blk.shortcut, in, x, params, mode, seed, keep ? &cache.shortcut : nullptr);
  if (main.shape() != skip.shape()) {
    throw ShapeError(name + ": branch output " + shape_to_string(sample_shape(main.shape())) +
                     " does not match skip path " + shape_to_string(sample_shape(skip.shape())));
  }
  auto m = main.values();
  auto s = skip.values();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += s[i];
  apply_activation(blk.activation, main);
  return main;
}

template <typename T>
Tensor<T> block_backward(const ResidualBlockSpec& blk, const Shape& in, const Tensor<T>& x,
                         const LayerCache<T>& cache, Tensor<T> dy, const ParameterSet<T>& params,
                         Gradients<T>& grads, bool need_dx) {
  Tensor<T> dz = activation_backward(blk.activation, cache.output, std::move(dy));
  Tensor<T> dx_main = sequence_backward(blk.branch, in, x, cache.branch, dz, params, grads, need_dx);
  if (blk.shortcut.empty()) {
    if (!need_dx) return {};
    auto a = dx_main.values();
    auto b = dz.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return dx_main;
  }
  Tensor<T> dx_skip = sequence_backward(blk.shortcut, in, x, cache.shortcut, dz, params, grads, need_dx);
  if (!need_dx) return {};
  auto a = dx_main.values();
  auto b = dx_skip.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return dx_main;
}

template <typename T>
Tensor<T> layer_forward(const LayerSpec& l, const Shape& in, const Tensor<T>& x, const ParameterSet<T>& params,
                        Mode mode, std::uint64_t seed, LayerCache<T>& cache, bool keep) {
  const std::size_t batch = x.dim(0);
  switch (l.kind) {
    case LayerKind::input:
      return x;
    case LayerKind::conv2d: {
      const auto g = conv_geometry(l, in);
      const auto& p = layer_params(params, l, {l.kernel, l.kernel, in[2], l.filters}, {l.filters});
      Tensor<T> y(batched(batch, {g.out_h(), g.out_w(), l.filters}));
      for (std::size_t b = 0; b < batch; ++b) {
        kernel::conv2d_forward<T>(x.slice(b), p.weights.values(), p.bias.values(), g, y.slice(b));
      }
      apply_activation(l.activation, y);
      return y;
    }
    case LayerKind::maxpool2d: {
      const auto g = pool_geometry(l, in);
      Tensor<T> y(batched(batch, {g.out_h(), g.out_w(), in[2]}));
      const std::size_t per = y.size() / batch;
      cache.argmax.assign(y.size(), 0);
      for (std::size_t b = 0; b < batch; ++b) {
        kernel::maxpool2d_forward<T>(x.slice(b), g, y.slice(b),
                                     std::span<std::size_t>(cache.argmax).subspan(b * per, per));
      }
      return y;
    }
    case LayerKind::flatten:
      return x.reshaped({batch, shape_size(in)});
    case LayerKind::dense: {
      const auto& p = layer_params(params, l, {in[0], l.units}, {l.units});
      Tensor<T> y({batch, l.units});
      for (std::size_t b = 0; b < batch; ++b) {
        kernel::dense_forward<T>(x.slice(b), p.weights.values(), p.bias.values(), y.slice(b));
      }
      apply_activation(l.activation, y);
      return y;
    }
    case LayerKind::dropout: {
      if (mode != Mode::train || l.rate == 0.0) return x;
      Tensor<T> y = x;
      Rng rng(derive_seed(seed, fnv1a(l.name)));
      const T keep_scale = static_cast<T>(1.0 / (1.0 - l.rate));
      cache.mask.resize(y.size());
      for (std::size_t i = 0; i < y.size(); ++i) {
        cache.mask[i] = rng.uniform() < l.rate ? T{0} : keep_scale;
        y[i] *= cache.mask[i];
      }
      return y;
    }
    case LayerKind::relu: {
      Tensor<T> y = x;
      kernel::relu_inplace<T>(y.values());
      return y;
    }
    case LayerKind::softmax: {
      Tensor<T> y = x;
      apply_activation(Activation::softmax, y);
      return y;
    }
    case LayerKind::batchnorm: {
      const std::size_t c = in.back();
      const auto& p = layer_params(params, l, {c}, {c});
      if (p.aux.size() != 2) throw Error(describe(l) + ": missing running statistics");
      const std::size_t n = x.size() / c;
      cache.mean.assign(c, T{0});
      cache.var.assign(c, T{0});
      cache.inv_std.assign(c, T{0});
      cache.batch_stats = mode == Mode::train && p.trainable;
      if (cache.batch_stats) {
        std::vector<double> sum(c, 0.0), sq(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) sum[k] += x[i * c + k];
        }
        for (std::size_t k = 0; k < c; ++k) sum[k] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < c; ++k) {
            const double d = x[i * c + k] - sum[k];
            sq[k] += d * d;
          }
        }
        for (std::size_t k = 0; k < c; ++k) {
          cache.mean[k] = static_cast<T>(sum[k]);
          cache.var[k] = static_cast<T>(sq[k] / static_cast<double>(n));
        }
      } else {
        for (std::size_t k = 0; k < c; ++k) {
          cache.mean[k] = p.aux[0][k];
          cache.var[k] = p.aux[1][k];
        }
      }
      for (std::size_t k = 0; k < c; ++k) {
        cache.inv_std[k] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cache.var[k]) + kBatchNormEpsilon));
      }
      Tensor<T> xhat(x.shape());
      Tensor<T> y(x.shape());
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
          const T h = (x[i * c + k] - cache.mean[k]) * cache.inv_std[k];
          xhat[i * c + k] = h;
          y[i * c + k] = p.weights[k] * h + p.bias[k];
        }
      }
      if (keep) cache.xhat = std::move(xhat);
      return y;
    }
    case LayerKind::global_avg_pool: {
      Tensor<T> y({batch, in[2]});
      for (std::size_t b = 0; b < batch; ++b) kernel::global_avg_pool_forward<T>(x.slice(b), in[2], y.slice(b));
      return y;
    }
    case LayerKind::residual_block:
      return block_forward(expand_residual(l, in), in, x, params, mode, seed, cache, keep, describe(l));
  }
  throw Error("unknown layer kind");
}

template <typename T>
Tensor<T> layer_backward(const LayerSpec& l, const Shape& in, const Tensor<T>& x, const LayerCache<T>& c,
                         Tensor<T> dy, const ParameterSet<T>& params, Gradients<T>& grads, bool need_dx) {
  const std::size_t batch = x.dim(0);
  auto grad_for = [&](const LayerSpec& layer) -> GradEntry<T>& {
    auto* g = grads.find(layer.name);
    if (!g) throw Error(describe(layer) + ": no gradient entry");
    return *g;
  };
  switch (l.kind) {
    case LayerKind::input:
      return dy;
    case LayerKind::conv2d: {
      const auto geo = conv_geometry(l, in);
      const auto& p = params.at(l.name);
      Tensor<T> dz = activation_backward(l.activation, c.output, std::move(dy));
      auto& g = grad_for(l);
      std::span<T> dw = p.trainable ? g.weights.values() : std::span<T>{};
      std::span<T> db = p.trainable ? g.bias.values() : std::span<T>{};
      Tensor<T> dx = need_dx ? Tensor<T>(x.shape()) : Tensor<T>{};
      for (std::size_t b = 0; b < batch; ++b) {
        kernel::conv2d_backward<T>(x.slice(b), p.weights.values(), geo, dz.slice(b),
                                   need_dx ? dx.slice(b) : std::span<T>{}, dw, db);
      }
      return dx;
    }
    case LayerKind::maxpool2d: {
      if (!need_dx) return {};
      Tensor<T> dx(x.shape());
      const std::size_t per = dy.size() / batch;
      for (std::size_t b = 0; b < batch; ++b) {
        kernel::maxpool2d_backward<T>(dy.slice(b), std::span<const std::size_t>(c.argmax).subspan(b * per, per),
                                      dx.slice(b));
      }
      return dx;
    }
    case LayerKind::flatten:
      return std::move(dy).reshaped(x.shape());
    case LayerKind::dense: {
      const auto& p = params.at(l.name);
      Tensor<T> dz = activation_backward(l.activation, c.output, std::move(dy));
      auto& g = grad_for(l);
      std::span<T> dw = p.trainable ? g.weights.values() : std::span<T>{};
      std::span<T> db = p.trainable ? g.bias.values() : std::span<T>{};
      Tensor<T> dx = need_dx ? Tensor<T>(x.shape()) : Tensor<T>{};
      for (std::size_t b = 0; b < batch; ++b) {
        kernel::dense_backward<T>(x.slice(b), p.weights.values(), dz.slice(b),
                                  need_dx ? dx.slice(b) : std::span<T>{}, dw, db);
      }
      return dx;
    }
    case LayerKind::dropout:
      if (!c.mask.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= c.mask[i];
      }
      return dy;
    case LayerKind::relu:
      return activation_backward(Activation::relu, c.output, std::move(dy));
    case LayerKind::softmax:
      return activation_backward(Activation::softmax, c.output, std::move(dy));
    case LayerKind::batchnorm: {
      const std::size_t ch = in.back();
      const std::size_t n = x.size() / ch;
      const auto& p = params.at(l.name);
      auto& g = grad_for(l);
      if (p.trainable) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < ch; ++k) {
            g.weights[k] += dy[i * ch + k] * c.xhat[i * ch + k];
            g.bias[k] += dy[i * ch + k];
          }
        }
      }
      if (!need_dx) return {};
      Tensor<T> dx(x.shape());
      if (!c.batch_stats) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < ch; ++k) dx[i * ch + k] = dy[i * ch + k] * p.weights[k] * c.inv_std[k];
        }
        return dx;
      }
      // Batch statistics depend on x: dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)).
      std::vector<T> sum_d(ch, T{0}), sum_dx(ch, T{0});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < ch; ++k) {
          const T dh = dy[i * ch + k] * p.weights[k];
          sum_d[k] += dh;
          sum_dx[k] += dh * c.xhat[i * ch + k];
        }
      }
      const T nn = static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < ch; ++k) {
          const T dh = dy[i * ch + k] * p.weights[k];
          dx[i * ch + k] = c.inv_std[k] / nn * (nn * dh - sum_d[k] - c.xhat[i * ch + k] * sum_dx[k]);
        }
      }
      return dx;
    }
    case LayerKind::global_avg_pool: {
      if (!need_dx) return {};
      Tensor<T> dx(x.shape());
      for (std::size_t b = 0; b < batch; ++b) kernel::global_avg_pool_backward<T>(dy.slice(b), dx.slice(b));
      return dx;
    }
    case LayerKind::residual_block:
      return block_backward(expand_residual(l, in), in, x, c, std::move(dy), params, grads, need_dx);
  }
  throw Error("unknown layer kind");
}

template <typename T>
Tensor<T> sequence_forward(const std::vector<LayerSpec>& seq, Shape in, const Tensor<T>& x,
                           const ParameterSet<T>& params, Mode mode, std::uint64_t seed,
                           std::vector<LayerCache<T>>* caches) {
  if (caches) {
    caches->clear();
    caches->resize(seq.size());
  }
  Tensor<T> cur = x;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    LayerCache<T> scratch;
    LayerCache<T>& c = caches ? (*caches)[i] : scratch;
    const Tensor<T>& input = (caches && i > 0) ? (*caches)[i - 1].output : cur;
    Tensor<T> y = layer_forward(seq[i], in, input, params, mode, seed, c, caches != nullptr);
    in = output_shape(seq[i], in);
    if (caches) {
      c.output = std::move(y);
    } else {
      cur = std::move(y);
    }
  }
  if (caches && !seq.empty()) return caches->back().output;
  return cur;
}

template <typename T>
Tensor<T> sequence_backward(const std::vector<LayerSpec>& seq, Shape in, const Tensor<T>& x,
                            const std::vector<LayerCache<T>>& caches, Tensor<T> dy,
                            const ParameterSet<T>& params, Gradients<T>& grads, bool need_dx) {
  if (caches.size() != seq.size()) throw Error("activation cache does not match the architecture");
  std::vector<Shape> shapes{in};
  for (const auto& l : seq) shapes.push_back(output_shape(l, shapes.back()));
  for (std::size_t i = seq.size(); i-- > 0;) {
    const Tensor<T>& input = i == 0 ? x : caches[i - 1].output;
    // The gradient flowing into an input layer is only wanted on request.
    const bool want = need_dx || (i > 0 && seq[i - 1].kind != LayerKind::input);
    dy = layer_backward(seq[i], shapes[i], input, caches[i], std::move(dy), params, grads, want);
  }
  return dy;
}

template <typename T>
void check_batch(const ArchitectureSpec& spec, const Tensor<T>& batch) {
  const Shape& in = spec.input_shape();
  if (batch.rank() != in.size() + 1 || detail::sample_shape(batch.shape()) != in) {
    throw ShapeError("batch shape " + shape_to_string(batch.shape()) + " does not match (B, " +
                     shape_to_string(in).substr(1));
  }
}

template <typename T>
void update_running(const std::vector<LayerSpec>& seq, Shape in, ParameterSet<T>& params,
                    const std::vector<LayerCache<T>>& caches, double momentum) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& l = seq[i];
    if (l.kind == LayerKind::batchnorm && caches[i].batch_stats) {
      auto& p = params.at(l.name);
      for (std::size_t k = 0; k < caches[i].mean.size(); ++k) {
        p.aux[0][k] = static_cast<T>(momentum * p.aux[0][k] + (1.0 - momentum) * caches[i].mean[k]);
        p.aux[1][k] = static_cast<T>(momentum * p.aux[1][k] + (1.0 - momentum) * caches[i].var[k]);
      }
    } else if (l.kind == LayerKind::residual_block) {
      const auto blk = expand_residual(l, in);
      update_running(blk.branch, in, params, caches[i].branch, momentum);
      update_running(blk.shortcut, in, params, caches[i].shortcut, momentum);
    }
    in = output_shape(l, in);
  }
}

}  // namespace detail

/// Runs the network on a (B, ...) batch. Train mode applies dropout (masks
/// seeded by `seed` and layer name) and batchnorm batch statistics for
/// trainable batchnorm layers.
template <typename T>
ForwardResult<T> forward(const ArchitectureSpec& spec, const ParameterSet<T>& params, const Tensor<T>& batch,
                         Mode mode, std::uint64_t seed = 0) {
  detail::check_batch(spec, batch);
  ForwardResult<T> r;
  r.cache.params_version = params.version();
  r.cache.layer_count = spec.layers.size();
  r.cache.mode = mode;
  r.output = detail::sequence_forward(spec.layers, Shape{}, batch, params, mode, seed, &r.cache.layers);
  return r;
}

/// Inference without retaining activations.
template <typename T>
Tensor<T> predict(const ArchitectureSpec& spec, const ParameterSet<T>& params, const Tensor<T>& batch) {
  detail::check_batch(spec, batch);
  return detail::sequence_forward(spec.layers, Shape{}, batch, params, Mode::infer, 0,
                                  static_cast<std::vector<LayerCache<T>>*>(nullptr));
}

/// Gradients of a scalar loss given d(loss)/d(output). Throws if the
/// parameters changed since the forward pass that produced `cache`.
template <typename T>
BackwardResult<T> backward(const ArchitectureSpec& spec, const ParameterSet<T>& params,
                           const ForwardCache<T>& cache, const Tensor<T>& output_gradient,
                           bool want_input_gradient = false) {
  if (cache.params_version != params.version() || cache.layer_count != spec.layers.size() ||
      cache.layers.size() != spec.layers.size()) {
    throw Error("stale activation cache: parameters or architecture changed since the forward pass");
  }
  if (output_gradient.shape() != cache.layers.back().output.shape()) {
    throw ShapeError("output gradient shape " + shape_to_string(output_gradient.shape()) +
                     " does not match network output " + shape_to_string(cache.layers.back().output.shape()));
  }
  BackwardResult<T> r{Gradients<T>::zeros_like(params), {}};
  r.input_gradient = detail::sequence_backward(spec.layers, Shape{}, cache.layers.front().output, cache.layers,
                                               output_gradient, params, r.gradients, want_input_gradient);
  return r;
}

/// Moves batchnorm running statistics toward the batch statistics recorded
/// in a train-mode forward pass.
template <typename T>
void update_running_stats(const ArchitectureSpec& spec, ParameterSet<T>& params, const ForwardCache<T>& cache,
                          double momentum = kBatchNormMomentum) {
  detail::update_running(spec.layers, Shape{}, params, cache.layers, momentum);
}

/// y = act(F(x) + skip(x)) for one (H, W, C) sample.
template <typename T>
Tensor<T> residual_block_forward(const Tensor<T>& x, const ResidualBlockSpec& block, const ParameterSet<T>& params,
                                 Mode mode = Mode::infer) {
  block_output_shape(block, x.shape());
  LayerCache<T> cache;
  Tensor<T> y = detail::block_forward(block, x.shape(), x.reshaped(detail::batched(1, x.shape())), params, mode,
                                      0, cache, false, "residual block");
  Shape out_shape = detail::sample_shape(y.shape());
  return std::move(y).reshaped(std::move(out_shape));
}

}  // namespace leancnn
