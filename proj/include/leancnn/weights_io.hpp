#pragma once

// LCW1 weights files and history CSV files.
//
// LCW1 layout (little-endian): "LCW1", u32 record count, then per record
// u32 name length, name bytes, u32 rank, rank x u32 dims, u8 element type
// (0 = f32, 1 = f64), raw values.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "leancnn/data.hpp"
#include "leancnn/error.hpp"
#include "leancnn/params.hpp"
#include "leancnn/train.hpp"

namespace leancnn {

struct WeightRecord {
  std::string name;
  Shape shape;
  std::uint8_t type = 0;
  std::vector<std::uint8_t> bytes;  // raw little-endian element data

  std::size_t element_size() const { return type == 0 ? 4 : 8; }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
void put_values(std::vector<std::uint8_t>& out, std::span<const T> values) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T x : values) {
    const auto bits = std::bit_cast<Bits>(x);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

template <typename T>
constexpr std::uint8_t type_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
WeightRecord make_record(std::string name, const Tensor<T>& t) {
  WeightRecord r{std::move(name), t.shape(), type_tag<T>(), {}};
  put_values<T>(r.bytes, t.values());
  return r;
}

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

  const std::uint8_t* take(std::size_t n) {
    if (n > data_.size() - pos_) throw DataError(source_ + ": truncated weights file");
    const auto* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

template <typename T>
Tensor<T> decode_record(const WeightRecord& r) {
  Tensor<T> t(r.shape);
  const std::size_t esize = r.element_size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < esize; ++b) bits |= static_cast<std::uint64_t>(r.bytes[i * esize + b]) << (8 * b);
    const double v = esize == 4 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                                : std::bit_cast<double>(bits);
    t[i] = static_cast<T>(v);
  }
  return t;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_records(const std::vector<WeightRecord>& records) {
  std::vector<std::uint8_t> out = {'L', 'C', 'W', '1'};
  detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.push_back(r.type);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

inline std::vector<WeightRecord> decode_records(std::vector<std::uint8_t> bytes, const std::string& source = "weights") {
  detail::ByteReader in(std::move(bytes), source);
  const auto* magic = in.take(4);
  if (std::string(reinterpret_cast<const char*>(magic), 4) != "LCW1") {
    throw DataError(source + ": not an LCW1 weights file");
  }
  const std::uint32_t count = in.u32();
  std::vector<WeightRecord> records;
  for (std::uint32_t k = 0; k < count; ++k) {
    WeightRecord r;
    const std::uint32_t len = in.u32();
    const auto* name = in.take(len);
    r.name.assign(reinterpret_cast<const char*>(name), len);
    const std::uint32_t rank = in.u32();
    std::size_t elements = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(in.u32());
      if (r.shape.back() == 0) throw DataError(source + ": record '" + r.name + "' has a zero dimension");
      elements *= r.shape.back();
    }
    r.type = *in.take(1);
    if (r.type > 1) throw DataError(source + ": record '" + r.name + "' has unknown element type");
    const auto* data = in.take(elements * r.element_size());
    r.bytes.assign(data, data + elements * r.element_size());
    records.push_back(std::move(r));
  }
  if (!in.done()) throw DataError(source + ": trailing bytes after last record");
  return records;
}

inline std::vector<WeightRecord> read_weight_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_records(std::move(bytes), path.string());
}

/// Records for every parameter tensor plus optional normalization stats
/// ("normalization.mean" / "normalization.std", f64).
template <typename T>
std::vector<WeightRecord> weight_records(const ParameterSet<T>& params,
                                         const std::optional<NormalizationStats>& stats = std::nullopt) {
  std::vector<WeightRecord> out;
  for (const auto& e : params.entries()) {
    out.push_back(detail::make_record(e.name + ".weight", e.weights));
    out.push_back(detail::make_record(e.name + ".bias", e.bias));
    if (e.aux.size() == 2) {
      out.push_back(detail::make_record(e.name + ".running_mean", e.aux[0]));
      out.push_back(detail::make_record(e.name + ".running_var", e.aux[1]));
    }
  }
  if (stats) {
    const std::size_t ch = stats->mean.size();
    out.push_back(detail::make_record("normalization.mean", Tensor<double>({ch}, stats->mean)));
    out.push_back(detail::make_record("normalization.std", Tensor<double>({ch}, stats->stddev)));
  }
  return out;
}

template <typename T>
void save_weights(const std::filesystem::path& path, const ParameterSet<T>& params,
                  const std::optional<NormalizationStats>& stats = std::nullopt) {
  const auto bytes = encode_records(weight_records(params, stats));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
struct LoadedWeights {
  ParameterSet<T> params;
  std::optional<NormalizationStats> stats;
};

/// Fills `params` (typically fresh from init_parameters for the intended
/// architecture) from a weights file. Every tensor must be present with the
/// expected shape; unknown records are rejected. Trainability is untouched.
template <typename T>
LoadedWeights<T> load_weights(const std::filesystem::path& path, ParameterSet<T> params) {
  const auto records = read_weight_records(path);
  std::map<std::string, const WeightRecord*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r).second) throw DataError(path.string() + ": duplicate record '" + r.name + "'");
  }
  std::size_t used = 0;
  auto fill = [&](const std::string& name, Tensor<T>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError(path.string() + ": missing record '" + name + "'");
    if (it->second->shape != dst.shape()) {
      throw ShapeError(path.string() + ": record '" + name + "' has shape " + shape_to_string(it->second->shape) +
                       ", architecture expects " + shape_to_string(dst.shape()));
    }
    dst = detail::decode_record<T>(*it->second);
    ++used;
  };
  for (auto& e : params.mutable_entries()) {
    fill(e.name + ".weight", e.weights);
    fill(e.name + ".bias", e.bias);
    if (e.aux.size() == 2) {
      fill(e.name + ".running_mean", e.aux[0]);
      fill(e.name + ".running_var", e.aux[1]);
    }
  }
  LoadedWeights<T> out{std::move(params), std::nullopt};
  auto mean = by_name.find("normalization.mean");
  auto stdv = by_name.find("normalization.std");
  if (mean != by_name.end() && stdv != by_name.end()) {
    const auto m = detail::decode_record<double>(*mean->second);
    const auto s = detail::decode_record<double>(*stdv->second);
    out.stats = NormalizationStats{{m.values().begin(), m.values().end()}, {s.values().begin(), s.values().end()}};
    used += 2;
  }
  if (used != records.size()) {
    throw ShapeError(path.string() + ": file has " + std::to_string(records.size() - used) +
                     " record(s) the architecture does not use");
  }
  return out;
}

// ---- history CSV ----

inline constexpr const char* kHistoryHeader = "epoch,train_loss,train_acc,val_loss,val_acc";

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

inline void write_history(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << kHistoryHeader << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.train_acc) << ','
        << (r.val_loss ? format_number(*r.val_loss) : "") << ',' << (r.val_acc ? format_number(*r.val_acc) : "")
        << '\n';
  }
}

inline TrainHistory read_history(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != split_csv_line(kHistoryHeader)) {
    throw ParseError(1, path.string() + ": expected header '" + kHistoryHeader + "'");
  }
  auto number = [&](const std::string& s, std::size_t lineno, const char* field) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || !std::isfinite(v)) {
      throw ParseError(lineno, path.string() + ": bad " + field + " value '" + s + "'");
    }
    return v;
  };
  TrainHistory h;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw ParseError(lineno, path.string() + ": expected 5 fields");
    EpochRecord r;
    const double epoch = number(f[0], lineno, "epoch");
    if (epoch != static_cast<double>(h.size() + 1)) {
      throw ParseError(lineno, path.string() + ": epochs must run 1, 2, ... without gaps");
    }
    r.epoch = h.size() + 1;
    r.train_loss = number(f[1], lineno, "train_loss");
    r.train_acc = number(f[2], lineno, "train_acc");
    if (!f[3].empty()) r.val_loss = number(f[3], lineno, "val_loss");
    if (!f[4].empty()) r.val_acc = number(f[4], lineno, "val_acc");
    h.push_back(r);
  }
  return h;
}

}  // namespace leancnn
