#pragma once

// Analytic parameter, FLOP and weight-memory accounting.
//
//   conv2d FLOPs = H_out * W_out * C_in * C_out * K * K
//   dense FLOPs  = n_in * n_out
//
// Both count one multiply-accumulate as one operation and exclude bias.
// mul-add-as-two doubles them. Layers without a formula contribute zero
// unless the extended mode is on, which adds customary elementwise counts
// (bias adds, activations, pooling comparisons, batchnorm, residual adds).

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "leancnn/arch.hpp"
#include "leancnn/data.hpp"
#include "leancnn/error.hpp"
#include "leancnn/kernels.hpp"

namespace leancnn {

enum class FlopConvention { mac_as_one, mul_add_as_two };

inline const char* to_string(FlopConvention c) {
  return c == FlopConvention::mac_as_one ? "mac-as-one" : "mul-add-as-two";
}

inline FlopConvention parse_flop_convention(const std::string& s) {
  if (s == "mac-as-one") return FlopConvention::mac_as_one;
  if (s == "mul-add-as-two") return FlopConvention::mul_add_as_two;
  throw Error("unknown FLOP convention '" + s + "' (expected mac-as-one or mul-add-as-two)");
}

inline std::uint64_t convention_factor(FlopConvention c) { return c == FlopConvention::mac_as_one ? 1 : 2; }

inline std::uint64_t conv_flops(const ConvGeometry& g, FlopConvention c = FlopConvention::mac_as_one) {
  g.validate();
  return static_cast<std::uint64_t>(g.out_h()) * g.out_w() * g.in_c * g.out_c * g.kernel * g.kernel *
         convention_factor(c);
}

inline std::uint64_t dense_flops(std::uint64_t n_in, std::uint64_t n_out,
                                 FlopConvention c = FlopConvention::mac_as_one) {
  if (n_in == 0 || n_out == 0) throw ShapeError("dense_flops: sizes must be >= 1");
  return n_in * n_out * convention_factor(c);
}

/// conv: (K*K*C_in + 1) * C_out; dense: (n_in + 1) * n_out; batchnorm: 4 * C
/// (gamma, beta, running mean, running variance); everything else 0.
inline std::uint64_t layer_params(const LayerSpec& l, const Shape& in) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return (static_cast<std::uint64_t>(l.kernel) * l.kernel * in.at(2) + 1) * l.filters;
    case LayerKind::dense:
      return (static_cast<std::uint64_t>(in.at(0)) + 1) * l.units;
    case LayerKind::batchnorm:
      return 4 * static_cast<std::uint64_t>(in.back());
    default:
      return 0;
  }
}

struct CostRow {
  std::string name;
  std::string kind;
  Shape output_shape;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t memory_bytes = 0;

  bool operator==(const CostRow&) const = default;
};

struct CostTotals {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t memory_bytes = 0;

  bool operator==(const CostTotals&) const = default;
};

struct CostReport {
  FlopConvention convention = FlopConvention::mac_as_one;
  bool extended = false;
  std::uint64_t element_bytes = 4;
  std::vector<CostRow> rows;
  CostTotals totals;

  const CostRow* find(const std::string& name) const {
    for (const auto& r : rows) {
      if (r.name == name) return &r;
    }
    return nullptr;
  }
};

struct AnalyzeOptions {
  FlopConvention convention = FlopConvention::mac_as_one;
  bool extended = false;
  /// Bytes per stored parameter (32-bit floats).
  std::uint64_t element_bytes = 4;
};

namespace detail {

inline std::uint64_t elements(const Shape& s) {
  std::uint64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::uint64_t activation_flops(Activation a, const Shape& out) {
  switch (a) {
    case Activation::none: return 0;
    case Activation::softmax: return 3 * elements(out);  // exp, sum, divide
    default: return elements(out);
  }
}

inline void cost_rows(const LayerSpec& l, const Shape& in, const AnalyzeOptions& opt, std::vector<CostRow>& out) {
  if (l.kind == LayerKind::residual_block) {
    const auto block = expand_residual(l, in);
    Shape s = in;
    for (const auto& x : block.branch) {
      cost_rows(x, s, opt, out);
      s = output_shape(x, s);
    }
    Shape k = in;
    for (const auto& x : block.shortcut) {
      cost_rows(x, k, opt, out);
      k = output_shape(x, k);
    }
    CostRow add{l.name + ".add", "add", s, 0, 0, 0};
    if (opt.extended) add.flops = elements(s) + activation_flops(block.activation, s);
    out.push_back(add);
    return;
  }
  const Shape o = output_shape(l, in);
  CostRow row{l.name, to_string(l.kind), o, layer_params(l, in), 0, 0};
  switch (l.kind) {
    case LayerKind::conv2d:
      row.flops = conv_flops(conv_geometry(l, in), opt.convention);
      if (opt.extended) row.flops += elements(o) + activation_flops(l.activation, o);
      break;
    case LayerKind::dense:
      row.flops = dense_flops(in.at(0), l.units, opt.convention);
      if (opt.extended) row.flops += elements(o) + activation_flops(l.activation, o);
      break;
    case LayerKind::maxpool2d:
      if (opt.extended) row.flops = elements(o) * (l.window * l.window - 1);
      break;
    case LayerKind::batchnorm:
      if (opt.extended) row.flops = 2 * elements(o);
      break;
    case LayerKind::relu:
      if (opt.extended) row.flops = elements(o);
      break;
    case LayerKind::softmax:
      if (opt.extended) row.flops = 3 * elements(o);
      break;
    case LayerKind::global_avg_pool:
      if (opt.extended) row.flops = elements(in);
      break;
    default:
      break;
  }
  row.memory_bytes = row.params * opt.element_bytes;
  out.push_back(row);
}

}  // namespace detail

/// One row per layer (residual blocks are expanded into their inner layers
/// plus a "<block>.add" row); totals are exact sums of the rows.
inline CostReport analyze(const ArchitectureSpec& spec, const AnalyzeOptions& opt = {}) {
  validate_structure(spec);
  CostReport r;
  r.convention = opt.convention;
  r.extended = opt.extended;
  r.element_bytes = opt.element_bytes;
  Shape s;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::input) {
      s = output_shape(l, {});
      r.rows.push_back({l.name, "input", s, 0, 0, 0});
      continue;
    }
    detail::cost_rows(l, s, opt, r.rows);
    s = output_shape(l, s);
  }
  for (const auto& row : r.rows) {
    r.totals.params += row.params;
    r.totals.flops += row.flops;
    r.totals.memory_bytes += row.memory_bytes;
  }
  return r;
}

inline CostReport analyze(const ArchitectureSpec& spec, FlopConvention convention) {
  return analyze(spec, AnalyzeOptions{convention, false, 4});
}

// ---- rendering ----

/// 25785415 -> "25,785,415".
inline std::string group_thousands(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  const std::size_t lead = digits.size() % 3;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i != 0 && (i + 3 - lead) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

inline std::string shape_to_dims(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline std::string render_text(const CostReport& r) {
  std::vector<std::array<std::string, 6>> cells;
  cells.push_back({"layer", "kind", "output shape", "params", "flops", "memory (bytes)"});
  for (const auto& row : r.rows) {
    cells.push_back({row.name, row.kind, shape_to_string(row.output_shape), group_thousands(row.params),
                     group_thousands(row.flops), group_thousands(row.memory_bytes)});
  }
  cells.push_back({"total", "", "", group_thousands(r.totals.params), group_thousands(r.totals.flops),
                   group_thousands(r.totals.memory_bytes)});
  std::array<std::size_t, 6> width{};
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < 6; ++i) width[i] = std::max(width[i], c[i].size());
  }
  std::ostringstream os;
  os << "FLOP convention: " << to_string(r.convention);
  if (r.extended) os << " (extended: includes elementwise operations)";
  os << "\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k == cells.size() - 1 || k == 1) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      os << std::string(total + 2 * 5, '-') << "\n";
    }
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& text = cells[k][i];
      const bool numeric = i >= 3;
      const std::string pad(width[i] - text.size(), ' ');
      os << (numeric ? pad + text : text + (i < 5 ? pad : ""));
      if (i < 5) os << "  ";
    }
    os << "\n";
  }
  return os.str();
}

inline constexpr const char* kCostCsvHeader = "name,kind,output_shape,params,flops,memory_bytes,convention,extended";

inline std::string render_csv(const CostReport& r) {
  std::ostringstream os;
  os << kCostCsvHeader << "\n";
  auto line = [&](const std::string& name, const std::string& kind, const std::string& shape, std::uint64_t p,
                  std::uint64_t f, std::uint64_t m) {
    os << name << ',' << kind << ',' << shape << ',' << p << ',' << f << ',' << m << ',' << to_string(r.convention)
       << ',' << (r.extended ? "true" : "false") << "\n";
  };
  for (const auto& row : r.rows) {
    line(row.name, row.kind, shape_to_dims(row.output_shape), row.params, row.flops, row.memory_bytes);
  }
  line("TOTAL", "total", "", r.totals.params, r.totals.flops, r.totals.memory_bytes);
  return os.str();
}

inline nlohmann::ordered_json to_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["convention"] = to_string(r.convention);
  j["extended"] = r.extended;
  j["element_bytes"] = r.element_bytes;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"name", row.name},
                         {"kind", row.kind},
                         {"output_shape", row.output_shape},
                         {"params", row.params},
                         {"flops", row.flops},
                         {"memory_bytes", row.memory_bytes}});
  }
  j["totals"] = {{"params", r.totals.params}, {"flops", r.totals.flops}, {"memory_bytes", r.totals.memory_bytes}};
  return j;
}

inline std::string render_json(const CostReport& r) { return to_json(r).dump(2) + "\n"; }

// ---- parsing machine formats ----

namespace detail {

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end) throw DataError("bad integer for " + what + ": '" + s + "'");
  return v;
}

inline void check_totals(const CostReport& r) {
  if (r.rows.empty()) return;
  CostTotals sum;
  for (const auto& row : r.rows) {
    sum.params += row.params;
    sum.flops += row.flops;
    sum.memory_bytes += row.memory_bytes;
  }
  if (!(sum == r.totals)) throw DataError("cost report totals do not equal the sum of its rows");
}

inline CostReport parse_json_report(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed JSON cost report: ") + e.what());
  }
  try {
    CostReport r;
    r.convention = parse_flop_convention(j.at("convention").get<std::string>());
    r.extended = j.value("extended", false);
    r.element_bytes = j.value("element_bytes", std::uint64_t{4});
    if (j.contains("rows")) {
      for (const auto& x : j.at("rows")) {
        r.rows.push_back({x.at("name").get<std::string>(), x.at("kind").get<std::string>(),
                          x.at("output_shape").get<Shape>(), x.at("params").get<std::uint64_t>(),
                          x.at("flops").get<std::uint64_t>(), x.at("memory_bytes").get<std::uint64_t>()});
      }
    }
    const auto& t = j.at("totals");
    r.totals = {t.at("params").get<std::uint64_t>(), t.at("flops").get<std::uint64_t>(),
                t.value("memory_bytes", std::uint64_t{0})};
    check_totals(r);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("JSON cost report is missing fields: ") + e.what());
  }
}

inline CostReport parse_csv_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kCostCsvHeader)) {
    throw DataError(std::string("CSV cost report must start with '") + kCostCsvHeader + "'");
  }
  CostReport r;
  bool have_total = false;
  std::optional<std::string> convention;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw DataError("CSV cost report row has " + std::to_string(f.size()) + " fields");
    if (convention && *convention != f[6]) throw DataError("CSV cost report mixes FLOP conventions");
    convention = f[6];
    r.extended = f[7] == "true";
    const CostTotals vals{parse_u64(f[3], "params"), parse_u64(f[4], "flops"), parse_u64(f[5], "memory_bytes")};
    if (f[1] == "total") {
      r.totals = vals;
      have_total = true;
      continue;
    }
    CostRow row{f[0], f[1], {}, vals.params, vals.flops, vals.memory_bytes};
    std::size_t pos = 0;
    while (pos < f[2].size()) {
      const auto next = f[2].find('x', pos);
      row.output_shape.push_back(parse_u64(f[2].substr(pos, next - pos), "output_shape"));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    r.rows.push_back(std::move(row));
  }
  if (!have_total || !convention) throw DataError("CSV cost report has no TOTAL row");
  r.convention = parse_flop_convention(*convention);
  check_totals(r);
  return r;
}

}  // namespace detail

/// Reads a JSON or CSV report produced by render_json / render_csv.
inline CostReport parse_cost_report(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return detail::parse_json_report(text);
  return detail::parse_csv_report(text);
}

inline CostReport read_cost_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cost_report(ss.str());
}

// ---- comparison ----

/// (b - a) / a * 100 rounded half away from zero to hundredths of a percent,
/// computed on exact integers. Empty when a == 0.
inline std::optional<std::int64_t> deviation_hundredths(std::uint64_t a, std::uint64_t b) {
  if (a == 0) return std::nullopt;
  const __int128 num = (static_cast<__int128>(b) - static_cast<__int128>(a)) * 10000;
  const __int128 den = a;
  __int128 q = num / den;
  const __int128 rem = num % den;
  if (2 * (rem < 0 ? -rem : rem) >= den) q += num < 0 ? -1 : 1;
  return static_cast<std::int64_t>(q);
}

/// 1321558 -> "+13,215.58%"; 0 -> "0.00%".
inline std::string format_percent_hundredths(std::int64_t h) {
  const std::uint64_t mag = static_cast<std::uint64_t>(h < 0 ? -h : h);
  char frac[8];
  std::snprintf(frac, sizeof frac, "%02llu", static_cast<unsigned long long>(mag % 100));
  const std::string sign = h > 0 ? "+" : (h < 0 ? "-" : "");
  return sign + group_thousands(mag / 100) + "." + frac + "%";
}

struct MetricComparison {
  std::string metric;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  std::optional<std::int64_t> deviation;  // hundredths of a percent

  std::string deviation_text() const { return deviation ? format_percent_hundredths(*deviation) : "n/a"; }
};

struct AccuracyComparison {
  double a = 0;
  double b = 0;
  double absolute_delta = 0;  // percentage points, b - a
  double relative_delta = 0;  // percent, (b - a) / a * 100
};

struct ComparisonReport {
  FlopConvention convention = FlopConvention::mac_as_one;
  std::vector<MetricComparison> metrics;
  std::optional<AccuracyComparison> accuracy;

  const MetricComparison& at(const std::string& metric) const {
    for (const auto& m : metrics) {
      if (m.metric == metric) return m;
    }
    throw Error("no metric '" + metric + "' in comparison");
  }
};

/// Compares totals of two reports (A is the reference). Accuracies are
/// given in percent; both the point difference and the relative change are
/// reported.
inline ComparisonReport compare(const CostReport& a, const CostReport& b, std::optional<double> accuracy_a = {},
                                std::optional<double> accuracy_b = {}) {
  if (a.convention != b.convention || a.extended != b.extended) {
    throw Error(std::string("cannot compare reports with different FLOP conventions (") + to_string(a.convention) +
                (a.extended ? ", extended" : "") + " vs " + to_string(b.convention) + (b.extended ? ", extended" : "") +
                ")");
  }
  ComparisonReport r;
  r.convention = a.convention;
  auto add = [&](const char* name, std::uint64_t x, std::uint64_t y) {
    r.metrics.push_back({name, x, y, deviation_hundredths(x, y)});
  };
  add("params", a.totals.params, b.totals.params);
  add("flops", a.totals.flops, b.totals.flops);
  add("memory_bytes", a.totals.memory_bytes, b.totals.memory_bytes);
  if (accuracy_a.has_value() != accuracy_b.has_value()) {
    throw Error("accuracy comparison needs both accuracies");
  }
  if (accuracy_a) {
    AccuracyComparison acc{*accuracy_a, *accuracy_b, *accuracy_b - *accuracy_a, 0.0};
    if (*accuracy_a == 0.0) throw Error("reference accuracy must be nonzero");
    acc.relative_delta = acc.absolute_delta / *accuracy_a * 100.0;
    r.accuracy = acc;
  }
  return r;
}

inline std::string format_signed(double v, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%+.2f%s", v, suffix);
  std::string s = buf;
  if (s == std::string("-0.00") + suffix || s == std::string("+0.00") + suffix) s = std::string("0.00") + suffix;
  return s;
}

inline std::string render_comparison(const ComparisonReport& r) {
  std::vector<std::array<std::string, 4>> cells;
  cells.push_back({"metric", "A", "B", "deviation (B vs A)"});
  for (const auto& m : r.metrics) {
    cells.push_back({m.metric, group_thousands(m.a), group_thousands(m.b), m.deviation_text()});
  }
  if (r.accuracy) {
    char a[32], b[32];
    std::snprintf(a, sizeof a, "%.2f%%", r.accuracy->a);
    std::snprintf(b, sizeof b, "%.2f%%", r.accuracy->b);
    cells.push_back({"accuracy", a, b,
                     format_signed(r.accuracy->absolute_delta, " points") + " absolute, " +
                         format_signed(r.accuracy->relative_delta, "%") + " relative"});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& c : cells) {
    for (std::size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], c[i].size());
  }
  std::ostringstream os;
  os << "FLOP convention: " << to_string(r.convention) << "\n";
  for (const auto& c : cells) {
    os << c[0] << std::string(width[0] - c[0].size(), ' ');
    for (std::size_t i = 1; i < 3; ++i) os << "  " << std::string(width[i] - c[i].size(), ' ') << c[i];
    os << "  " << c[3] << "\n";
  }
  return os.str();
}

/// A summary-only report (no rows) with the given totals.
inline CostReport totals_report(std::uint64_t params, std::uint64_t flops,
                                FlopConvention c = FlopConvention::mac_as_one) {
  CostReport r;
  r.convention = c;
  r.totals = {params, flops, params * r.element_bytes};
  return r;
}

}  // namespace leancnn
