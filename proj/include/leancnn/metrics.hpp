#pragma once

// Classification metrics: confusion matrix, accuracy, precision / recall /
// F1 with per-class, macro and micro averaging, one-vs-rest ROC and AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/tensor.hpp"

namespace leancnn {

/// Entry (i, j) counts samples of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k = 0) : k_(k), counts_(k * k, 0) {}

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * k_ + predicted); }
  void add(std::size_t truth, std::size_t predicted) { ++counts_.at(truth * k_ + predicted); }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
    return t;
  }
  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < k_; ++j) s += at(i, j);
    return s;
  }
  std::uint64_t col_sum(std::size_t j) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += at(i, j);
    return s;
  }

  std::uint64_t true_positives(std::size_t c) const { return at(c, c); }
  std::uint64_t false_positives(std::size_t c) const { return col_sum(c) - at(c, c); }
  std::uint64_t false_negatives(std::size_t c) const { return row_sum(c) - at(c, c); }
  std::uint64_t true_negatives(std::size_t c) const {
    return total() - true_positives(c) - false_positives(c) - false_negatives(c);
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth, std::size_t k) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion_matrix: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int v : {truth[i], predicted[i]}) {
      if (v < 0 || static_cast<std::size_t>(v) >= k) {
        throw DataError("confusion_matrix: label " + std::to_string(v) + " outside [0, " + std::to_string(k) + ")");
      }
    }
    m.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return m;
}

inline double accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw DataError("accuracy: confusion matrix is empty");
  return static_cast<double>(m.trace()) / static_cast<double>(total);
}

/// A zero denominator makes the metric 0 and sets the matching flag.
struct PrecisionRecallF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;

  bool any_undefined() const { return precision_undefined || recall_undefined || f1_undefined; }
};

inline PrecisionRecallF1 prf_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  PrecisionRecallF1 r;
  if (tp + fp == 0) {
    r.precision_undefined = true;
  } else {
    r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn == 0) {
    r.recall_undefined = true;
  } else {
    r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  if (r.precision + r.recall == 0.0) {
    r.f1_undefined = true;
  } else {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

enum class Averaging { macro, micro };

inline PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& m, std::size_t c) {
  if (c >= m.classes()) throw Error("precision_recall_f1: class " + std::to_string(c) + " out of range");
  return prf_from_counts(m.true_positives(c), m.false_positives(c), m.false_negatives(c));
}

/// Macro: unweighted mean of the per-class metrics (flags OR-ed). Micro:
/// metrics of the pooled TP / FP / FN counts.
inline PrecisionRecallF1 precision_recall_f1(const ConfusionMatrix& m, Averaging mode) {
  if (m.classes() == 0) throw Error("precision_recall_f1: empty matrix");
  if (mode == Averaging::micro) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t c = 0; c < m.classes(); ++c) {
      tp += m.true_positives(c);
      fp += m.false_positives(c);
      fn += m.false_negatives(c);
    }
    return prf_from_counts(tp, fp, fn);
  }
  PrecisionRecallF1 r;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    const auto x = precision_recall_f1(m, c);
    r.precision += x.precision;
    r.recall += x.recall;
    r.f1 += x.f1;
    r.precision_undefined |= x.precision_undefined;
    r.recall_undefined |= x.recall_undefined;
    r.f1_undefined |= x.f1_undefined;
  }
  const auto k = static_cast<double>(m.classes());
  r.precision /= k;
  r.recall /= k;
  r.f1 /= k;
  return r;
}

struct RocCurve {
  /// Starts at (0, 0) with threshold +inf and ends at (1, 1).
  std::vector<double> fpr, tpr, thresholds;
};

struct RocResult {
  RocCurve curve;
  double auc = 0;
};

/// One-vs-rest ROC for `positive`, from (N, k) score rows. Samples with equal
/// scores are taken together as one step; AUC is the trapezoidal area.
template <typename T>
RocResult roc_auc(const Tensor<T>& scores, std::span<const int> truth, std::size_t positive) {
  if (scores.rank() != 2 || scores.dim(0) != truth.size()) {
    throw ShapeError("roc_auc: scores " + shape_to_string(scores.shape()) + " do not match " +
                     std::to_string(truth.size()) + " labels");
  }
  if (positive >= scores.dim(1)) throw Error("roc_auc: class " + std::to_string(positive) + " out of range");
  const std::size_t n = truth.size();
  std::vector<std::pair<double, bool>> s(n);
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool is_pos = truth[i] == static_cast<int>(positive);
    s[i] = {static_cast<double>(scores.at(i, positive)), is_pos};
    pos += is_pos;
  }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    throw DataError("roc_auc: class " + std::to_string(positive) +
                    " needs both positive and negative samples (single-class ground truth)");
  }
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  RocResult r;
  r.curve.fpr.push_back(0);
  r.curve.tpr.push_back(0);
  r.curve.thresholds.push_back(std::numeric_limits<double>::infinity());
  std::uint64_t tp = 0, fp = 0;
  double area2 = 0;  // twice the area in units of 1/(pos*neg)
  for (std::size_t i = 0; i < n;) {
    const double threshold = s[i].first;
    const std::uint64_t tp0 = tp, fp0 = fp;
    while (i < n && s[i].first == threshold) {
      (s[i].second ? tp : fp) += 1;
      ++i;
    }
    area2 += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0);
    r.curve.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
    r.curve.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
    r.curve.thresholds.push_back(threshold);
  }
  r.auc = area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

struct EvaluationReport {
  std::vector<std::string> classes;
  ConfusionMatrix matrix;
  double accuracy = 0;
  std::vector<PrecisionRecallF1> per_class;
  PrecisionRecallF1 macro, micro;
  /// Empty for classes lacking positive or negative samples.
  std::vector<std::optional<RocResult>> roc;
  /// Mean AUC over classes that have a curve.
  std::optional<double> macro_auc;
};

template <typename T>
EvaluationReport evaluate(const Tensor<T>& probabilities, std::span<const int> truth,
                          const std::vector<std::string>& classes) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != truth.size()) {
    throw ShapeError("evaluate: probabilities and labels disagree in count");
  }
  if (truth.empty()) throw DataError("evaluate: no samples");
  const std::size_t k = classes.size();
  const bool single_unit = probabilities.dim(1) == 1;
  if (!(probabilities.dim(1) == k || (single_unit && k == 2))) {
    throw ShapeError("evaluate: model has " + std::to_string(probabilities.dim(1)) + " outputs for " +
                     std::to_string(k) + " classes");
  }
  // A single sigmoid unit scores the positive class; expand to two columns.
  Tensor<T> scores = probabilities;
  if (single_unit) {
    scores = Tensor<T>({truth.size(), 2});
    for (std::size_t i = 0; i < truth.size(); ++i) {
      scores.at(i, 1) = probabilities.at(i, 0);
      scores.at(i, 0) = T{1} - probabilities.at(i, 0);
    }
  }
  std::vector<int> predicted(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto row = scores.slice(i);
    predicted[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  EvaluationReport r;
  r.classes = classes;
  r.matrix = confusion_matrix(predicted, truth, k);
  r.accuracy = accuracy(r.matrix);
  for (std::size_t c = 0; c < k; ++c) r.per_class.push_back(precision_recall_f1(r.matrix, c));
  r.macro = precision_recall_f1(r.matrix, Averaging::macro);
  r.micro = precision_recall_f1(r.matrix, Averaging::micro);
  double auc_sum = 0;
  std::size_t curves = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto in_class = r.matrix.row_sum(c);
    if (in_class == 0 || in_class == truth.size()) {
      r.roc.emplace_back();
      continue;
    }
    r.roc.push_back(roc_auc(scores, truth, c));
    auc_sum += r.roc.back()->auc;
    ++curves;
  }
  if (curves) r.macro_auc = auc_sum / static_cast<double>(curves);
  return r;
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string render_evaluation(const EvaluationReport& r) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& c : r.classes) width = std::max(width, c.size());
  auto flags = [](const PrecisionRecallF1& m) {
    std::string f;
    if (m.precision_undefined) f += " precision:0/0";
    if (m.recall_undefined) f += " recall:0/0";
    if (m.f1_undefined) f += " f1:0/0";
    return f.empty() ? std::string() : "  [undefined ->0:" + f + "]";
  };
  auto line = [&](const std::string& name, const PrecisionRecallF1& m) {
    os << name << std::string(width - name.size(), ' ') << "  " << format_metric(m.precision) << "  "
       << format_metric(m.recall) << "  " << format_metric(m.f1) << flags(m) << "\n";
  };
  os << "samples: " << r.matrix.total() << "\n";
  os << "accuracy: " << format_metric(r.accuracy) << "\n";
  os << "macro F1: " << format_metric(r.macro.f1) << "\n";
  if (r.macro_auc) os << "macro AUC: " << format_metric(*r.macro_auc) << "\n";
  os << "\n" << "class" << std::string(width - 5, ' ') << "  precision recall    f1\n";
  for (std::size_t c = 0; c < r.classes.size(); ++c) line(r.classes[c], r.per_class[c]);
  line("macro", r.macro);
  line("micro", r.micro);
  os << "\nconfusion matrix (rows: true class, columns: predicted)\n";
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    os << r.classes[i] << std::string(width - r.classes[i].size(), ' ');
    for (std::size_t j = 0; j < r.classes.size(); ++j) os << "  " << r.matrix.at(i, j);
    os << "\n";
  }
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    os << (c == 0 ? "\n" : "") << "AUC " << r.classes[c] << ": "
       << (r.roc[c] ? format_metric(r.roc[c]->auc) : std::string("n/a (single-class ground truth)")) << "\n";
  }
  return os.str();
}

/// confusion.csv, metrics.csv and roc_<class>.csv in `dir`.
inline void write_evaluation(const EvaluationReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("confusion.csv");
    out << "true\\predicted";
    for (const auto& c : r.classes) out << ',' << c;
    out << '\n';
    for (std::size_t i = 0; i < r.classes.size(); ++i) {
      out << r.classes[i];
      for (std::size_t j = 0; j < r.classes.size(); ++j) out << ',' << r.matrix.at(i, j);
      out << '\n';
    }
  }
  {
    auto out = open("metrics.csv");
    out << "class,precision,recall,f1\n";
    auto row = [&](const std::string& name, const PrecisionRecallF1& m) {
      out << name << ',' << format_metric(m.precision) << ',' << format_metric(m.recall) << ','
          << format_metric(m.f1) << '\n';
    };
    for (std::size_t c = 0; c < r.classes.size(); ++c) row(r.classes[c], r.per_class[c]);
    row("macro", r.macro);
    row("micro", r.micro);
  }
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    if (!r.roc[c]) continue;
    auto out = open("roc_" + r.classes[c] + ".csv");
    out << "fpr,tpr,threshold\n";
    const auto& curve = r.roc[c]->curve;
    for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
      out << format_metric(curve.fpr[i]) << ',' << format_metric(curve.tpr[i]) << ','
          << format_metric(curve.thresholds[i]) << '\n';
    }
  }
}

}  // namespace leancnn
