#pragma once

// Labeled image datasets: metadata-table ingestion, per-channel z-score
// normalization with training-set statistics, stratified splits and a
// synthetic stand-in generator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/image.hpp"
#include "leancnn/rng.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

struct LabeledImage {
  std::string id;
  Image pixels;  // (H, W, 3)
  int label = 0;
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  /// True when some channel has zero spread; normalize() refuses such stats.
  bool degenerate() const {
    return std::any_of(stddev.begin(), stddev.end(), [](double s) { return !(s > 0.0); });
  }
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::vector<std::string> classes;
  std::optional<NormalizationStats> stats;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  std::vector<std::size_t> histogram() const {
    std::vector<std::size_t> h(classes.size(), 0);
    for (const auto& im : images) ++h.at(static_cast<std::size_t>(im.label));
    return h;
  }
};

/// The seven HAM10000 diagnosis codes, in index order.
inline const std::vector<std::string>& ham10000_classes() {
  static const std::vector<std::string> codes = {"akiec", "bcc", "bkl", "df", "mel", "nv", "vasc"};
  return codes;
}

/// Splits one comma-separated line; double quotes group fields and "" escapes.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

struct MetadataColumns {
  std::string id = "image_id";
  std::string label = "dx";
};

/// Reads a metadata table and decodes `<image_dir>/<image_id>.<ext>` for
/// every row, in row order. Unknown labels and missing images are reported
/// together (all offending ids / labels in one error).
inline Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& metadata,
                            std::vector<std::string> classes, const MetadataColumns& columns = {}) {
  std::ifstream in(metadata);
  if (!in) throw DataError("cannot open metadata table " + metadata.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(metadata.string() + ": empty metadata table");
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(metadata.string() + ": no column named '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column(columns.id);
  const std::size_t label_col = column(columns.label);

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index.emplace(classes[i], static_cast<int>(i));

  Dataset ds;
  ds.classes = std::move(classes);
  std::vector<std::string> missing;
  std::set<std::string> ids;
  const auto exts = supported_image_extensions();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() <= std::max(id_col, label_col)) {
      throw DataError(metadata.string() + ": row " + std::to_string(row) + " has too few columns");
    }
    const std::string& id = fields[id_col];
    const std::string& label = fields[label_col];
    auto it = index.find(label);
    if (it == index.end()) {
      throw DataError(metadata.string() + ": row " + std::to_string(row) + " has unknown label '" + label + "'");
    }
    if (!ids.insert(id).second) throw DataError(metadata.string() + ": duplicate image id '" + id + "'");
    std::optional<std::filesystem::path> found;
    for (const auto& ext : exts) {
      auto p = image_dir / (id + ext);
      if (std::filesystem::exists(p)) {
        found = p;
        break;
      }
    }
    if (!found) {
      missing.push_back(id);
      continue;
    }
    ds.images.push_back({id, read_image(*found), it->second});
  }
  if (!missing.empty()) {
    std::string msg = "missing image files for " + std::to_string(missing.size()) + " id(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw DataError(msg);
  }
  return ds;
}

inline void resize_dataset(Dataset& ds, std::size_t h, std::size_t w) {
  for (auto& im : ds.images) im.pixels = resize_bilinear(im.pixels, h, w);
}

/// Per-channel mean and population standard deviation over every pixel of
/// every image.
inline NormalizationStats compute_stats(const Dataset& ds) {
  if (ds.empty()) throw DataError("compute_stats: empty dataset");
  const std::size_t ch = ds.images.front().pixels.shape().back();
  std::vector<double> sum(ch, 0.0);
  std::size_t count = 0;
  for (const auto& im : ds.images) {
    if (im.pixels.shape().back() != ch) throw ShapeError("compute_stats: images differ in channel count");
    const auto v = im.pixels.values();
    for (std::size_t i = 0; i < v.size(); ++i) sum[i % ch] += v[i];
    count += v.size() / ch;
  }
  NormalizationStats s;
  s.mean.resize(ch);
  for (std::size_t c = 0; c < ch; ++c) s.mean[c] = sum[c] / static_cast<double>(count);
  std::vector<double> sq(ch, 0.0);
  for (const auto& im : ds.images) {
    const auto v = im.pixels.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double d = v[i] - s.mean[i % ch];
      sq[i % ch] += d * d;
    }
  }
  s.stddev.resize(ch);
  for (std::size_t c = 0; c < ch; ++c) s.stddev[c] = std::sqrt(sq[c] / static_cast<double>(count));
  return s;
}

/// (I - mean) / stddev per channel.
inline Image normalize(const Image& img, const NormalizationStats& stats) {
  const std::size_t ch = img.shape().back();
  if (stats.mean.size() != ch || stats.stddev.size() != ch) {
    throw ShapeError("normalize: statistics have " + std::to_string(stats.mean.size()) + " channels, image has " +
                     std::to_string(ch));
  }
  for (std::size_t c = 0; c < ch; ++c) {
    if (!(stats.stddev[c] > 0.0)) {
      throw DataError("normalize: channel " + std::to_string(c) + " has zero standard deviation (degenerate dataset)");
    }
  }
  Image out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::size_t c = i % ch;
    out[i] = static_cast<float>((img[i] - stats.mean[c]) / stats.stddev[c]);
  }
  return out;
}

inline void normalize_dataset(Dataset& ds, const NormalizationStats& stats) {
  for (auto& im : ds.images) im.pixels = normalize(im.pixels, stats);
  ds.stats = stats;
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  Dataset train, val, test;
};

/// Stratified, seeded split. Each class is shuffled independently and cut
/// by largest-remainder rounding of n * ratio, with every partition whose
/// ratio is positive receiving at least one sample of every class. Samples
/// keep their original relative order within a partition.
inline DatasetSplit split(const Dataset& ds, const SplitRatios& r, std::uint64_t seed) {
  const double ratios[3] = {r.train, r.val, r.test};
  for (double x : ratios) {
    if (!(x >= 0.0)) throw Error("split: ratios must be non-negative");
  }
  if (!(r.train > 0.0)) throw Error("split: the training ratio must be positive");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw Error("split: ratios must sum to 1");
  const std::size_t parts = 1 + (r.val > 0.0) + (r.test > 0.0);

  std::vector<std::vector<std::size_t>> by_class(ds.classes.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i) by_class.at(static_cast<std::size_t>(ds.images[i].label)).push_back(i);

  std::vector<int> assign(ds.images.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < parts) {
      throw DataError("split: class '" + ds.classes[c] + "' has " + std::to_string(idx.size()) +
                      " sample(s), fewer than the " + std::to_string(parts) + " partitions");
    }
    Rng(derive_seed(seed, c)).shuffle(idx);
    const auto n = static_cast<double>(idx.size());
    std::size_t counts[3];
    double frac[3];
    std::size_t assigned = 0;
    for (int p = 0; p < 3; ++p) {
      const double exact = n * ratios[p];
      counts[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      frac[p] = exact - static_cast<double>(counts[p]);
      assigned += counts[p];
    }
    while (assigned < idx.size()) {
      int best = 0;
      for (int p = 1; p < 3; ++p) {
        if (frac[p] > frac[best] + 1e-12) best = p;
      }
      ++counts[best];
      frac[best] = -1.0;
      ++assigned;
    }
    for (int p = 0; p < 3; ++p) {
      if (ratios[p] > 0.0 && counts[p] == 0) {
        const int donor = static_cast<int>(std::max_element(counts, counts + 3) - counts);
        --counts[donor];
        ++counts[p];
      }
    }
    std::size_t pos = 0;
    for (int p = 0; p < 3; ++p) {
      for (std::size_t k = 0; k < counts[p]; ++k) assign[idx[pos++]] = p;
    }
  }

  DatasetSplit out;
  Dataset* dst[3] = {&out.train, &out.val, &out.test};
  for (auto* d : dst) {
    d->classes = ds.classes;
    d->stats = ds.stats;
  }
  for (std::size_t i = 0; i < ds.images.size(); ++i) dst[assign[i]]->images.push_back(ds.images[i]);
  return out;
}

namespace detail {

inline void hue_to_rgb(double hue, double out[3]) {
  const double h = hue * 6.0;
  const double s = 0.85, v = 0.95;
  const int sector = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int c = 0; c < 3; ++c) out[c] = table[sector][c];
}

}  // namespace detail

/// `k` classes of `n` images each, size x size x 3. Class c draws a soft
/// disc whose position (on a ring around the center) and hue depend on c,
/// with per-image position/radius jitter and uniform pixel noise. Class
/// names are "class0".."class<k-1>".
inline Dataset synth_dataset(std::size_t k, std::size_t n, std::size_t size, std::uint64_t seed) {
  if (k < 2) throw Error("synth_dataset: need at least 2 classes");
  if (n < 1) throw Error("synth_dataset: need at least 1 image per class");
  if (size < 4) throw Error("synth_dataset: image size must be >= 4");
  Dataset ds;
  for (std::size_t c = 0; c < k; ++c) ds.classes.push_back("class" + std::to_string(c));
  const double s = static_cast<double>(size);
  constexpr double background = 0.15;
  for (std::size_t c = 0; c < k; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
    double color[3];
    detail::hue_to_rgb(static_cast<double>(c) / static_cast<double>(k), color);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, c, i));
      const double cy = s * (0.5 + 0.28 * std::sin(angle)) + 0.03 * s * rng.normal();
      const double cx = s * (0.5 + 0.28 * std::cos(angle)) + 0.03 * s * rng.normal();
      const double radius = 0.16 * s * (1.0 + 0.1 * rng.normal());
      Image img({size, size, 3});
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double w = std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = background + (color[ch] - background) * w + rng.uniform(-0.05, 0.05);
            img.at(y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      char id[64];
      std::snprintf(id, sizeof id, "synth_c%zu_%04zu", c, i);
      ds.images.push_back({id, std::move(img), static_cast<int>(c)});
    }
  }
  return ds;
}

/// Writes `<dir>/metadata.csv` (image_id,dx) and one `<id>.ppm` per image.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / "metadata.csv");
  if (!meta) throw DataError("cannot write " + (dir / "metadata.csv").string());
  meta << "image_id,dx\n";
  for (const auto& im : ds.images) {
    meta << im.id << ',' << ds.classes.at(static_cast<std::size_t>(im.label)) << '\n';
    write_ppm(dir / (im.id + ".ppm"), im.pixels);
  }
}

}  // namespace leancnn
