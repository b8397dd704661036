#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

enum class LossKind { binary_cross_entropy, categorical_cross_entropy };

inline const char* to_string(LossKind k) {
  return k == LossKind::binary_cross_entropy ? "bce" : "categorical";
}

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbabilityClamp = 1e-7;

inline double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

/// Mean binary cross-entropy -[y log p + (1 - y) log(1 - p)].
template <typename T>
double bce_loss(std::span<const T> p, std::span<const T> y) {
  if (p.size() != y.size() || p.empty()) throw ShapeError("bce_loss: predictions and labels differ in length");
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != T{0} && y[i] != T{1}) {
      throw DataError("bce_loss: label " + std::to_string(static_cast<double>(y[i])) + " is not 0 or 1");
    }
    const double q = clamp_probability(p[i]);
    sum -= y[i] == T{1} ? std::log(q) : std::log(1.0 - q);
  }
  return sum / static_cast<double>(p.size());
}

template <typename T>
double bce_loss(const Tensor<T>& p, const Tensor<T>& y) {
  return bce_loss<T>(p.values(), y.values());
}

/// Mean of -sum(y log p) over the rows of a (B, k) probability tensor.
template <typename T>
double categorical_ce(const Tensor<T>& probs, const Tensor<T>& one_hot) {
  if (probs.rank() != 2 || probs.shape() != one_hot.shape()) {
    throw ShapeError("categorical_ce: expects matching (B, k) tensors");
  }
  const std::size_t batch = probs.dim(0);
  const std::size_t k = probs.dim(1);
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t ones = 0;
    double row_sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const T y = one_hot.at(b, j);
      if (y == T{1}) {
        ++ones;
        total -= std::log(clamp_probability(probs.at(b, j)));
      } else if (y != T{0}) {
        throw DataError("categorical_ce: row " + std::to_string(b) + " is not one-hot");
      }
      row_sum += probs.at(b, j);
    }
    if (ones != 1) throw DataError("categorical_ce: row " + std::to_string(b) + " is not one-hot");
    if (std::abs(row_sum - 1.0) > 1e-4) {
      throw NumericError("categorical_ce: probabilities in row " + std::to_string(b) + " sum to " +
                         std::to_string(row_sum));
    }
  }
  return total / static_cast<double>(batch);
}

template <typename T>
Tensor<T> one_hot(std::span<const int> labels, std::size_t k) {
  Tensor<T> out({labels.size(), k}, T{0});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= k) {
      throw DataError("label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(k) + ")");
    }
    out.at(b, static_cast<std::size_t>(labels[b])) = T{1};
  }
  return out;
}

/// Probability of the positive class under BCE: a single sigmoid output, or
/// column 1 of a two-way softmax.
template <typename T>
std::size_t positive_column(const Tensor<T>& output) {
  if (output.rank() != 2 || output.dim(1) > 2) {
    throw ShapeError("binary cross-entropy needs a (B, 1) or (B, 2) output, got " + shape_to_string(output.shape()));
  }
  return output.dim(1) - 1;
}

template <typename T>
struct LossResult {
  double value = 0;
  /// d(loss)/d(network output), same shape as the output.
  Tensor<T> gradient;
};

/// Loss value and its gradient w.r.t. the network's probability output.
template <typename T>
LossResult<T> loss_and_gradient(LossKind kind, const Tensor<T>& output, std::span<const int> labels) {
  if (output.rank() != 2 || output.dim(0) != labels.size()) {
    throw ShapeError("loss: output " + shape_to_string(output.shape()) + " does not match " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = output.dim(0);
  const double inv_b = 1.0 / static_cast<double>(batch);
  LossResult<T> r{0.0, Tensor<T>(output.shape(), T{0})};
  if (kind == LossKind::binary_cross_entropy) {
    const std::size_t col = positive_column(output);
    std::vector<T> p(batch), y(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (labels[b] != 0 && labels[b] != 1) {
        throw DataError("bce: label " + std::to_string(labels[b]) + " is not 0 or 1");
      }
      p[b] = output.at(b, col);
      y[b] = static_cast<T>(labels[b]);
      const double q = clamp_probability(p[b]);
      r.gradient.at(b, col) = static_cast<T>((q - y[b]) / (q * (1.0 - q)) * inv_b);
    }
    r.value = bce_loss<T>(p, y);
    return r;
  }
  const std::size_t k = output.dim(1);
  const Tensor<T> targets = one_hot<T>(labels, k);
  r.value = categorical_ce(output, targets);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t j = static_cast<std::size_t>(labels[b]);
    r.gradient.at(b, j) = static_cast<T>(-inv_b / clamp_probability(output.at(b, j)));
  }
  return r;
}

/// Class decision for one output row: argmax, or p >= 0.5 for a single unit.
template <typename T>
int predicted_class(std::span<const T> row) {
  if (row.size() == 1) return row[0] >= T{0.5} ? 1 : 0;
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace leancnn
