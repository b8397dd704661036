#pragma once

// Line-oriented architecture text format.
//
//   # comment
//   input 224 224 3
//   conv2d name=c1 filters=32 kernel=3 stride=1 padding=same activation=relu
//   maxpool2d window=2 stride=2
//   flatten
//   dense units=256 activation=relu
//   dropout rate=0.5
//   dense units=7 activation=softmax
//   resblock filters=64 bottleneck=true projection=auto
//
// Keys are order-insensitive. Layers without `name=` get "<kind>_<n>".
// serialize_architecture writes every key explicitly, sorted alphabetically,
// so parse(serialize(spec)) == spec.

#include <charconv>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "leancnn/arch.hpp"
#include "leancnn/error.hpp"

namespace leancnn {

namespace dsl_detail {

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::size_t parse_count(std::size_t line, const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto* end = v.data() + v.size();
  // Leading '-' is rejected by from_chars for unsigned types.
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ParseError(line, "field '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline double parse_real(std::size_t line, const std::string& key, const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw ParseError(line, "field '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(std::size_t line, const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(line, "field '" + key + "': expected true or false, got '" + v + "'");
}

inline Activation parse_activation(std::size_t line, const std::string& v) {
  if (v == "none" || v == "linear") return Activation::none;
  if (v == "relu") return Activation::relu;
  if (v == "sigmoid") return Activation::sigmoid;
  if (v == "softmax") return Activation::softmax;
  throw ParseError(line, "field 'activation': unknown activation '" + v + "'");
}

inline Padding parse_padding(std::size_t line, const std::string& v) {
  if (v == "same") return Padding::same;
  if (v == "valid") return Padding::valid;
  throw ParseError(line, "field 'padding': expected same or valid, got '" + v + "'");
}

inline Projection parse_projection(std::size_t line, const std::string& v) {
  if (v == "auto") return Projection::automatic;
  if (v == "always") return Projection::always;
  if (v == "never") return Projection::never;
  throw ParseError(line, "field 'projection': expected auto, always or never, got '" + v + "'");
}

inline std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct KindInfo {
  LayerKind kind;
  std::set<std::string> keys;      // allowed keys (name/trainable always allowed)
  std::set<std::string> required;  // keys without a default
};

inline const std::map<std::string, KindInfo>& kinds() {
  static const std::map<std::string, KindInfo> table = {
      {"input", {LayerKind::input, {}, {}}},
      {"conv2d", {LayerKind::conv2d, {"filters", "kernel", "stride", "padding", "activation"}, {"filters"}}},
      {"maxpool2d", {LayerKind::maxpool2d, {"window", "stride", "padding"}, {}}},
      {"flatten", {LayerKind::flatten, {}, {}}},
      {"dense", {LayerKind::dense, {"units", "activation"}, {"units"}}},
      {"dropout", {LayerKind::dropout, {"rate"}, {"rate"}}},
      {"relu", {LayerKind::relu, {}, {}}},
      {"softmax", {LayerKind::softmax, {}, {}}},
      {"batchnorm", {LayerKind::batchnorm, {}, {}}},
      {"global_avg_pool", {LayerKind::global_avg_pool, {}, {}}},
      {"resblock",
       {LayerKind::residual_block, {"filters", "stride", "bottleneck", "projection", "activation"}, {"filters"}}},
  };
  return table;
}

}  // namespace dsl_detail

/// Parses an architecture document. Every failure is a ParseError carrying
/// the line number of the offending layer (or line 1 for an empty document).
inline ArchitectureSpec parse_architecture(std::string_view text) {
  using namespace dsl_detail;
  ArchitectureSpec spec;
  std::vector<std::size_t> line_of;
  std::map<std::string, std::size_t> auto_counter;
  std::map<std::string, std::size_t> seen_names;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;

    const auto tokens = split_ws(raw);
    if (tokens.empty() || tokens[0][0] == '#') continue;

    const auto it = kinds().find(tokens[0]);
    if (it == kinds().end()) throw ParseError(line_no, "unknown layer kind '" + tokens[0] + "'");
    const KindInfo& info = it->second;

    LayerSpec l;
    l.kind = info.kind;
    if (l.kind == LayerKind::maxpool2d) l.padding = Padding::valid;
    if (l.kind == LayerKind::residual_block) l.activation = Activation::relu;

    std::map<std::string, std::string> kv;
    std::size_t t = 1;
    if (l.kind == LayerKind::input) {
      for (; t < tokens.size() && tokens[t].find('=') == std::string::npos; ++t) {
        l.input_shape.push_back(parse_count(line_no, "dims", tokens[t]));
      }
      if (l.input_shape.empty()) throw ParseError(line_no, "input layer needs its dimensions");
    }
    for (; t < tokens.size(); ++t) {
      const auto eq = tokens[t].find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError(line_no, "expected key=value, got '" + tokens[t] + "'");
      }
      std::string key = tokens[t].substr(0, eq);
      if (key != "name" && key != "trainable" && !info.keys.count(key)) {
        throw ParseError(line_no, "unknown field '" + key + "' for " + tokens[0]);
      }
      if (!kv.emplace(key, tokens[t].substr(eq + 1)).second) {
        throw ParseError(line_no, "field '" + key + "' given twice");
      }
    }
    for (const auto& r : info.required) {
      if (!kv.count(r)) throw ParseError(line_no, "missing field '" + r + "' for " + tokens[0]);
    }

    bool stride_given = false;
    for (const auto& [key, v] : kv) {
      if (key == "name") {
        if (v.empty()) throw ParseError(line_no, "field 'name' is empty");
        l.name = v;
      } else if (key == "trainable") {
        l.trainable = parse_bool(line_no, key, v);
      } else if (key == "filters") {
        l.filters = parse_count(line_no, key, v);
      } else if (key == "kernel") {
        l.kernel = parse_count(line_no, key, v);
      } else if (key == "stride") {
        l.stride = parse_count(line_no, key, v);
        stride_given = true;
      } else if (key == "window") {
        l.window = parse_count(line_no, key, v);
      } else if (key == "units") {
        l.units = parse_count(line_no, key, v);
      } else if (key == "rate") {
        l.rate = parse_real(line_no, key, v);
      } else if (key == "padding") {
        l.padding = parse_padding(line_no, v);
      } else if (key == "activation") {
        l.activation = parse_activation(line_no, v);
      } else if (key == "bottleneck") {
        l.bottleneck = parse_bool(line_no, key, v);
      } else if (key == "projection") {
        l.projection = parse_projection(line_no, v);
      }
    }
    if (l.kind == LayerKind::maxpool2d && !stride_given) l.stride = l.window;
    if (l.name.empty()) {
      if (l.kind == LayerKind::input) {
        l.name = "input";
      } else {
        l.name = tokens[0] + "_" + std::to_string(++auto_counter[tokens[0]]);
      }
    }
    try {
      validate_hyperparameters(l);
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
    if (auto [at, fresh] = seen_names.emplace(l.name, line_no); !fresh) {
      throw ParseError(line_no, "duplicate layer name '" + l.name + "' (first used on line " +
                                    std::to_string(at->second) + ")");
    }
    if (l.kind == LayerKind::input && !spec.layers.empty()) {
      throw ParseError(line_no, "more than one input layer");
    }
    if (l.kind != LayerKind::input && spec.layers.empty()) {
      throw ParseError(line_no, "no input layer: the first layer must be 'input'");
    }
    spec.layers.push_back(std::move(l));
    line_of.push_back(line_no);
  }
  if (spec.layers.empty()) throw ParseError(1, "no input layer");

  // Adjacency: run shape inference and report the first layer that fails.
  Shape s;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    try {
      s = output_shape(spec.layers[i], s);
    } catch (const Error& e) {
      throw ParseError(line_of[i], e.what());
    }
  }
  return spec;
}

/// Canonical text form: one layer per line, keys sorted alphabetically.
inline std::string serialize_architecture(const ArchitectureSpec& spec) {
  using dsl_detail::format_real;
  std::ostringstream os;
  for (const auto& l : spec.layers) {
    std::map<std::string, std::string> kv;
    kv["name"] = l.name;
    if (!l.trainable) kv["trainable"] = "false";
    switch (l.kind) {
      case LayerKind::conv2d:
        kv["filters"] = std::to_string(l.filters);
        kv["kernel"] = std::to_string(l.kernel);
        kv["stride"] = std::to_string(l.stride);
        kv["padding"] = to_string(l.padding);
        kv["activation"] = to_string(l.activation);
        break;
      case LayerKind::maxpool2d:
        kv["window"] = std::to_string(l.window);
        kv["stride"] = std::to_string(l.stride);
        kv["padding"] = to_string(l.padding);
        break;
      case LayerKind::dense:
        kv["units"] = std::to_string(l.units);
        kv["activation"] = to_string(l.activation);
        break;
      case LayerKind::dropout:
        kv["rate"] = format_real(l.rate);
        break;
      case LayerKind::residual_block:
        kv["filters"] = std::to_string(l.filters);
        kv["stride"] = std::to_string(l.stride);
        kv["bottleneck"] = l.bottleneck ? "true" : "false";
        kv["projection"] = to_string(l.projection);
        kv["activation"] = to_string(l.activation);
        break;
      default:
        break;
    }
    os << to_string(l.kind);
    if (l.kind == LayerKind::input) {
      for (auto d : l.input_shape) os << ' ' << d;
    }
    for (const auto& [k, v] : kv) os << ' ' << k << '=' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace leancnn
