#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "leancnn/arch.hpp"
#include "leancnn/error.hpp"
#include "leancnn/rng.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

/// Trainable state of one conv2d / dense / batchnorm layer.
///
/// conv2d: weights (K, K, C_in, C_out), bias (C_out)
/// dense: weights (n_in, n_out), bias (n_out)
/// batchnorm: weights = gamma (C), bias = beta (C), aux = {running mean, running var}
template <typename T>
struct ParamEntry {
  std::string name;
  LayerKind kind = LayerKind::dense;
  Tensor<T> weights;
  Tensor<T> bias;
  std::vector<Tensor<T>> aux;
  bool trainable = true;

  std::size_t element_count() const {
    std::size_t n = weights.size() + bias.size();
    for (const auto& a : aux) n += a.size();
    return n;
  }
};

/// Named parameter tensors in network order. Every non-const access bumps a
/// version counter so that activation caches taken before a mutation can be
/// detected as stale.
template <typename T>
class ParameterSet {
 public:
  ParamEntry<T>& add(ParamEntry<T> entry) {
    if (index_.count(entry.name)) throw Error("duplicate parameter entry '" + entry.name + "'");
    index_.emplace(entry.name, entries_.size());
    entries_.push_back(std::move(entry));
    ++version_;
    return entries_.back();
  }

  const ParamEntry<T>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second];
  }
  ParamEntry<T>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return nullptr;
    ++version_;
    return &entries_[it->second];
  }

  const ParamEntry<T>& at(std::string_view name) const {
    const auto* e = find(name);
    if (!e) throw Error("no parameters for layer '" + std::string(name) + "'");
    return *e;
  }
  ParamEntry<T>& at(std::string_view name) {
    auto* e = find(name);
    if (!e) throw Error("no parameters for layer '" + std::string(name) + "'");
    return *e;
  }

  std::span<const ParamEntry<T>> entries() const { return entries_; }
  std::span<ParamEntry<T>> mutable_entries() {
    ++version_;
    return entries_;
  }

  std::size_t size() const { return entries_.size(); }
  std::uint64_t version() const { return version_; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.element_count();
    return n;
  }

  /// Names, shapes, trainability and every value bit must agree.
  bool bitwise_equal(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.trainable != b.trainable || !a.weights.bitwise_equal(b.weights) ||
          !a.bias.bitwise_equal(b.bias) || a.aux.size() != b.aux.size()) {
        return false;
      }
      for (std::size_t j = 0; j < a.aux.size(); ++j) {
        if (!a.aux[j].bitwise_equal(b.aux[j])) return false;
      }
    }
    return true;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) {
      ParamEntry<U> c{e.name, e.kind, e.weights.template cast<U>(), e.bias.template cast<U>(), {}, e.trainable};
      for (const auto& a : e.aux) c.aux.push_back(a.template cast<U>());
      out.add(std::move(c));
    }
    return out;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t version_ = 0;
};

/// Calls fn(layer, input_shape) for every layer that owns parameters, in
/// network order, descending into residual blocks (branch, then shortcut).
inline void for_each_param_layer(const std::vector<LayerSpec>& seq, Shape in,
                                 const std::function<void(const LayerSpec&, const Shape&)>& fn) {
  for (const auto& l : seq) {
    if (l.kind == LayerKind::conv2d || l.kind == LayerKind::dense || l.kind == LayerKind::batchnorm) {
      fn(l, in);
    } else if (l.kind == LayerKind::residual_block) {
      const auto block = expand_residual(l, in);
      for_each_param_layer(block.branch, in, fn);
      for_each_param_layer(block.shortcut, in, fn);
    }
    in = output_shape(l, in);
  }
}

inline void for_each_param_layer(const ArchitectureSpec& spec,
                                 const std::function<void(const LayerSpec&, const Shape&)>& fn) {
  infer_shapes(spec);
  for_each_param_layer(spec.layers, Shape{}, fn);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Parameters for one layer: He-uniform weights (limit sqrt(6 / fan_in)),
/// zero biases, identity batchnorm (gamma 1, beta 0, mean 0, var 1). The
/// stream for each layer is keyed by seed and layer name.
template <typename T>
ParamEntry<T> init_layer_parameters(const LayerSpec& l, const Shape& in, std::uint64_t seed) {
  ParamEntry<T> e;
  e.name = l.name;
  e.kind = l.kind;
  e.trainable = l.trainable;
  Rng rng(derive_seed(seed, fnv1a(l.name)));
  auto he_uniform = [&](Shape shape, std::size_t fan_in) {
    Tensor<T> w(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    return w;
  };
  switch (l.kind) {
    case LayerKind::conv2d: {
      const std::size_t fan_in = l.kernel * l.kernel * in[2];
      e.weights = he_uniform({l.kernel, l.kernel, in[2], l.filters}, fan_in);
      e.bias = Tensor<T>({l.filters}, T{0});
      break;
    }
    case LayerKind::dense:
      e.weights = he_uniform({in[0], l.units}, in[0]);
      e.bias = Tensor<T>({l.units}, T{0});
      break;
    case LayerKind::batchnorm: {
      const std::size_t c = in.back();
      e.weights = Tensor<T>({c}, T{1});
      e.bias = Tensor<T>({c}, T{0});
      e.aux = {Tensor<T>({c}, T{0}), Tensor<T>({c}, T{1})};
      break;
    }
    default:
      throw Error(describe(l) + " has no parameters");
  }
  return e;
}

template <typename T>
ParameterSet<T> init_parameters(const ArchitectureSpec& spec, std::uint64_t seed) {
  ParameterSet<T> params;
  for_each_param_layer(spec, [&](const LayerSpec& l, const Shape& in) {
    params.add(init_layer_parameters<T>(l, in, seed));
  });
  return params;
}

/// Parameters for the layers of an explicit residual block.
template <typename T>
ParameterSet<T> init_parameters(const ResidualBlockSpec& block, const Shape& in, std::uint64_t seed) {
  ParameterSet<T> params;
  auto add = [&](const LayerSpec& l, const Shape& s) { params.add(init_layer_parameters<T>(l, s, seed)); };
  for_each_param_layer(block.branch, in, add);
  for_each_param_layer(block.shortcut, in, add);
  return params;
}

/// Sets the trainable flag on every entry whose name fully matches the
/// ECMAScript regular expression `pattern`. Returns the number matched;
/// throws if nothing matched.
template <typename T>
std::size_t set_trainable(ParameterSet<T>& params, const std::string& pattern, bool trainable) {
  std::regex re;
  try {
    re = std::regex(pattern);
  } catch (const std::regex_error& e) {
    throw Error("invalid layer pattern '" + pattern + "': " + e.what());
  }
  std::size_t matched = 0;
  for (auto& e : params.mutable_entries()) {
    if (std::regex_match(e.name, re)) {
      e.trainable = trainable;
      ++matched;
    }
  }
  if (matched == 0) throw Error("layer pattern '" + pattern + "' matched no parameterized layer");
  return matched;
}

}  // namespace leancnn
