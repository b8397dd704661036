#pragma once

// Forward and backward numeric kernels on channels-last data.
//
// The span-level functions work on a single sample and are what the engine
// calls in its batch loops; the Tensor-level wrappers at the bottom validate
// shapes and are the public single-sample entry points.
//
// Convolution accumulation order is fixed: for each output element the sum
// starts at zero, runs over (ky, kx, c_in) in row-major order and the bias is
// added last. Reference implementations that follow the same order agree
// bit-for-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

enum class Padding { same, valid };

inline const char* to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

/// Output length and leading pad of a sliding window along one axis.
/// "same" follows the ceil(in / stride) convention with the extra pad
/// element placed after the data.
struct WindowAxis {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

inline WindowAxis window_axis(std::size_t in, std::size_t window, std::size_t stride,
                              Padding padding) {
  if (window == 0 || stride == 0) throw ShapeError("window and stride must be >= 1");
  if (padding == Padding::same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + window;
    const std::size_t pad_total = needed > in ? needed - in : 0;
    return {out, pad_total / 2};
  }
  if (in < window) return {0, 0};
  return {(in - window) / stride + 1, 0};
}

struct ConvGeometry {
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t in_c = 0;
  std::size_t out_c = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Padding padding = Padding::same;

  WindowAxis rows() const { return window_axis(in_h, kernel, stride, padding); }
  WindowAxis cols() const { return window_axis(in_w, kernel, stride, padding); }
  std::size_t out_h() const { return rows().out; }
  std::size_t out_w() const { return cols().out; }

  /// Throws ShapeError for degenerate geometry or an empty output.
  void validate() const {
    if (in_h == 0 || in_w == 0 || in_c == 0) throw ShapeError("conv2d: input has a zero dimension");
    if (out_c == 0) throw ShapeError("conv2d: C_out must be >= 1");
    if (kernel == 0) throw ShapeError("conv2d: kernel must be >= 1");
    if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
    if (out_h() == 0 || out_w() == 0) {
      throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " does not fit input " +
                       std::to_string(in_h) + "x" + std::to_string(in_w) +
                       " with valid padding (zero-size output)");
    }
  }
};

struct PoolGeometry {
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t channels = 0;
  std::size_t window = 2;
  std::size_t stride = 2;
  Padding padding = Padding::valid;

  WindowAxis rows() const { return window_axis(in_h, window, stride, padding); }
  WindowAxis cols() const { return window_axis(in_w, window, stride, padding); }
  std::size_t out_h() const { return rows().out; }
  std::size_t out_w() const { return cols().out; }

  void validate() const {
    if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be >= 1");
    if (out_h() == 0 || out_w() == 0) {
      throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                       std::to_string(in_h) + "x" + std::to_string(in_w));
    }
  }
};

namespace kernel {

template <typename T>
void conv2d_forward(std::span<const T> in, std::span<const T> weights, std::span<const T> bias,
                    const ConvGeometry& g, std::span<T> out) {
  const auto rows = g.rows();
  const auto cols = g.cols();
  const std::size_t ci = g.in_c;
  const std::size_t co = g.out_c;
  const std::size_t k = g.kernel;
  std::fill(out.begin(), out.end(), T{0});
  for (std::size_t oy = 0; oy < rows.out; ++oy) {
    for (std::size_t ox = 0; ox < cols.out; ++ox) {
      T* acc = out.data() + (oy * cols.out + ox) * co;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                  static_cast<std::ptrdiff_t>(rows.pad_before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                    static_cast<std::ptrdiff_t>(cols.pad_before);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
          const T* ip = in.data() + (static_cast<std::size_t>(iy) * g.in_w +
                                     static_cast<std::size_t>(ix)) * ci;
          const T* kp = weights.data() + (ky * k + kx) * ci * co;
          for (std::size_t c = 0; c < ci; ++c) {
            const T v = ip[c];
            const T* kr = kp + c * co;
            for (std::size_t o = 0; o < co; ++o) acc[o] += v * kr[o];
          }
        }
      }
      for (std::size_t o = 0; o < co; ++o) acc[o] += bias[o];
    }
  }
}

/// Accumulates into d_weights / d_bias; d_in (if non-empty) is overwritten.
template <typename T>
void conv2d_backward(std::span<const T> in, std::span<const T> weights, const ConvGeometry& g,
                     std::span<const T> d_out, std::span<T> d_in, std::span<T> d_weights,
                     std::span<T> d_bias) {
  const auto rows = g.rows();
  const auto cols = g.cols();
  const std::size_t ci = g.in_c;
  const std::size_t co = g.out_c;
  const std::size_t k = g.kernel;
  const bool want_in = !d_in.empty();
  const bool want_w = !d_weights.empty();
  if (want_in) std::fill(d_in.begin(), d_in.end(), T{0});
  for (std::size_t oy = 0; oy < rows.out; ++oy) {
    for (std::size_t ox = 0; ox < cols.out; ++ox) {
      const T* gp = d_out.data() + (oy * cols.out + ox) * co;
      if (!d_bias.empty()) {
        for (std::size_t o = 0; o < co; ++o) d_bias[o] += gp[o];
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                  static_cast<std::ptrdiff_t>(rows.pad_before);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                    static_cast<std::ptrdiff_t>(cols.pad_before);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
          const std::size_t in_off =
              (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * ci;
          const std::size_t w_off = (ky * k + kx) * ci * co;
          for (std::size_t c = 0; c < ci; ++c) {
            const T* kr = weights.data() + w_off + c * co;
            if (want_w) {
              const T v = in[in_off + c];
              T* dk = d_weights.data() + w_off + c * co;
              for (std::size_t o = 0; o < co; ++o) dk[o] += v * gp[o];
            }
            if (want_in) {
              T s = 0;
              for (std::size_t o = 0; o < co; ++o) s += kr[o] * gp[o];
              d_in[in_off + c] += s;
            }
          }
        }
      }
    }
  }
}

/// `argmax[i]` receives the flat input index that won output element i.
template <typename T>
void maxpool2d_forward(std::span<const T> in, const PoolGeometry& g, std::span<T> out,
                       std::span<std::size_t> argmax) {
  const auto rows = g.rows();
  const auto cols = g.cols();
  const std::size_t ch = g.channels;
  for (std::size_t oy = 0; oy < rows.out; ++oy) {
    for (std::size_t ox = 0; ox < cols.out; ++ox) {
      for (std::size_t c = 0; c < ch; ++c) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_idx = std::numeric_limits<std::size_t>::max();
        for (std::size_t wy = 0; wy < g.window; ++wy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + wy) -
                                    static_cast<std::ptrdiff_t>(rows.pad_before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t wx = 0; wx < g.window; ++wx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + wx) -
                                      static_cast<std::ptrdiff_t>(cols.pad_before);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            const std::size_t idx =
                (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * ch + c;
            if (best_idx == std::numeric_limits<std::size_t>::max() || in[idx] > best) {
              best = in[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (oy * cols.out + ox) * ch + c;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(std::span<const T> d_out, std::span<const std::size_t> argmax,
                        std::span<T> d_in) {
  std::fill(d_in.begin(), d_in.end(), T{0});
  for (std::size_t o = 0; o < d_out.size(); ++o) d_in[argmax[o]] += d_out[o];
}

template <typename T>
void dense_forward(std::span<const T> in, std::span<const T> weights, std::span<const T> bias,
                   std::span<T> out) {
  const std::size_t n_out = out.size();
  std::fill(out.begin(), out.end(), T{0});
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = in[i];
    const T* w = weights.data() + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o) out[o] += v * w[o];
  }
  for (std::size_t o = 0; o < n_out; ++o) out[o] += bias[o];
}

template <typename T>
void dense_backward(std::span<const T> in, std::span<const T> weights, std::span<const T> d_out,
                    std::span<T> d_in, std::span<T> d_weights, std::span<T> d_bias) {
  const std::size_t n_out = d_out.size();
  if (!d_bias.empty()) {
    for (std::size_t o = 0; o < n_out; ++o) d_bias[o] += d_out[o];
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!d_weights.empty()) {
      const T v = in[i];
      T* dw = d_weights.data() + i * n_out;
      for (std::size_t o = 0; o < n_out; ++o) dw[o] += v * d_out[o];
    }
    if (!d_in.empty()) {
      const T* w = weights.data() + i * n_out;
      T s = 0;
      for (std::size_t o = 0; o < n_out; ++o) s += w[o] * d_out[o];
      d_in[i] = s;
    }
  }
}

template <typename T>
void relu_inplace(std::span<T> x) {
  for (T& v : x) v = v > T{0} ? v : T{0};
}

/// d_in = d_out where the activation output was positive.
template <typename T>
void relu_backward(std::span<const T> out, std::span<const T> d_out, std::span<T> d_in) {
  for (std::size_t i = 0; i < out.size(); ++i) d_in[i] = out[i] > T{0} ? d_out[i] : T{0};
}

template <typename T>
void sigmoid_inplace(std::span<T> x) {
  for (T& v : x) {
    // Split on sign so exp never overflows.
    if (v >= T{0}) {
      v = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T{1} + e);
    }
  }
}

template <typename T>
void sigmoid_backward(std::span<const T> out, std::span<const T> d_out, std::span<T> d_in) {
  for (std::size_t i = 0; i < out.size(); ++i) d_in[i] = d_out[i] * out[i] * (T{1} - out[i]);
}

/// Stable softmax of one row, in place.
template <typename T>
void softmax_inplace(std::span<T> z) {
  T max = z[0];
  for (T v : z) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    max = std::max(max, v);
  }
  T sum = 0;
  for (T& v : z) {
    v = std::exp(v - max);
    sum += v;
  }
  for (T& v : z) v /= sum;
}

/// Jacobian-vector product of softmax: d_z = p * (d_p - <p, d_p>).
template <typename T>
void softmax_backward(std::span<const T> p, std::span<const T> d_p, std::span<T> d_z) {
  T dot = 0;
  for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * d_p[i];
  for (std::size_t i = 0; i < p.size(); ++i) d_z[i] = p[i] * (d_p[i] - dot);
}

/// Mean over the spatial positions of an (H*W, C) block.
template <typename T>
void global_avg_pool_forward(std::span<const T> in, std::size_t channels, std::span<T> out) {
  const std::size_t positions = in.size() / channels;
  std::fill(out.begin(), out.end(), T{0});
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t c = 0; c < channels; ++c) out[c] += in[p * channels + c];
  }
  for (T& v : out) v /= static_cast<T>(positions);
}

template <typename T>
void global_avg_pool_backward(std::span<const T> d_out, std::span<T> d_in) {
  const std::size_t channels = d_out.size();
  const std::size_t positions = d_in.size() / channels;
  const T scale = T{1} / static_cast<T>(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t c = 0; c < channels; ++c) d_in[p * channels + c] = d_out[c] * scale;
  }
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Single-sample Tensor API.

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                         const ConvGeometry& g) {
  g.validate();
  if (input.rank() != 3) throw ShapeError("conv2d: input must be rank 3 (H, W, C)");
  if (input.dim(0) != g.in_h) {
    throw ShapeError("conv2d: input height " + std::to_string(input.dim(0)) +
                     " does not match geometry H " + std::to_string(g.in_h));
  }
  if (input.dim(1) != g.in_w) {
    throw ShapeError("conv2d: input width " + std::to_string(input.dim(1)) +
                     " does not match geometry W " + std::to_string(g.in_w));
  }
  if (input.dim(2) != g.in_c) {
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(2)) +
                     " do not match geometry C_in " + std::to_string(g.in_c));
  }
  const Shape kshape{g.kernel, g.kernel, g.in_c, g.out_c};
  if (weights.shape() != kshape) {
    throw ShapeError("conv2d: kernel shape " + shape_to_string(weights.shape()) +
                     " does not match expected " + shape_to_string(kshape));
  }
  if (bias.shape() != Shape{g.out_c}) {
    throw ShapeError("conv2d: bias length " + shape_to_string(bias.shape()) +
                     " does not match C_out " + std::to_string(g.out_c));
  }
  Tensor<T> out({g.out_h(), g.out_w(), g.out_c});
  kernel::conv2d_forward<T>(input.values(), weights.values(), bias.values(), g, out.values());
  return out;
}

template <typename T>
struct PoolResult {
  Tensor<T> output;
  /// Flat index into the input of each output element's winner.
  std::vector<std::size_t> argmax;
};

template <typename T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window = 2,
                                std::size_t stride = 2, Padding padding = Padding::valid) {
  if (input.rank() != 3) throw ShapeError("maxpool2d: input must be rank 3 (H, W, C)");
  const PoolGeometry g{input.dim(0), input.dim(1), input.dim(2), window, stride, padding};
  g.validate();
  PoolResult<T> r{Tensor<T>({g.out_h(), g.out_w(), g.channels}), {}};
  r.argmax.resize(r.output.size());
  kernel::maxpool2d_forward<T>(input.values(), g, r.output.values(), r.argmax);
  return r;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.rank() != 1) throw ShapeError("dense: input must be rank 1");
  if (weights.rank() != 2 || weights.dim(0) != input.dim(0)) {
    throw ShapeError("dense: weight rows " +
                     (weights.rank() == 2 ? std::to_string(weights.dim(0)) : std::string("?")) +
                     " do not match input size " + std::to_string(input.dim(0)));
  }
  if (bias.shape() != Shape{weights.dim(1)}) {
    throw ShapeError("dense: bias length does not match output size " +
                     std::to_string(weights.dim(1)));
  }
  Tensor<T> out({weights.dim(1)});
  kernel::dense_forward<T>(input.values(), weights.values(), bias.values(), out.values());
  return out;
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  kernel::relu_inplace<T>(x.values());
  return x;
}

template <typename T>
Tensor<T> softmax(Tensor<T> logits) {
  if (logits.rank() != 1 || logits.size() < 2) {
    throw ShapeError("softmax: expects a vector of at least 2 logits");
  }
  kernel::softmax_inplace<T>(logits.values());
  return logits;
}

}  // namespace leancnn
