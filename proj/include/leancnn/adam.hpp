#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "leancnn/engine.hpp"
#include "leancnn/error.hpp"
#include "leancnn/params.hpp"

namespace leancnn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamMoments {
  Tensor<T> m_weights, v_weights, m_bias, v_bias;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments<T>> moments;
};

namespace detail {

template <typename T>
void adam_update(Tensor<T>& theta, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, const AdamConfig& c,
                 double correction1, double correction2) {
  if (m.empty()) {
    m = Tensor<T>(theta.shape(), T{0});
    v = Tensor<T>(theta.shape(), T{0});
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double gi = g[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / correction1;
    const double v_hat = vi / correction2;
    theta[i] = static_cast<T>(theta[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
  }
}

}  // namespace detail

/// One bias-corrected Adam step over the trainable entries of `params`:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// Frozen entries and their moments are left untouched. Every gradient is
/// checked for finiteness before anything is modified.
template <typename T>
void adam_step(ParameterSet<T>& params, const Gradients<T>& grads, AdamState<T>& state) {
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    const auto* g = grads.find(e.name);
    if (!g) throw Error("adam: no gradient for '" + e.name + "'");
    if (g->weights.shape() != e.weights.shape() || g->bias.shape() != e.bias.shape()) {
      throw ShapeError("adam: gradient shape mismatch for '" + e.name + "'");
    }
    if (!g->weights.all_finite() || !g->bias.all_finite()) {
      throw NumericError("adam: non-finite gradient for '" + e.name + "'");
    }
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.config.beta1, t);
  const double c2 = 1.0 - std::pow(state.config.beta2, t);
  for (auto& e : params.mutable_entries()) {
    if (!e.trainable) continue;
    const auto& g = grads.at(e.name);
    auto& mom = state.moments[e.name];
    detail::adam_update(e.weights, g.weights, mom.m_weights, mom.v_weights, state.config, c1, c2);
    detail::adam_update(e.bias, g.bias, mom.m_bias, mom.v_bias, state.config, c1, c2);
  }
}

}  // namespace leancnn
