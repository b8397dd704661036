#pragma once

// Self-contained SVG line charts for training curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/train.hpp"

namespace leancnn {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x, y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

inline std::string render_svg(const LineChart& chart) {
  constexpr double width = 640, height = 420;
  constexpr double left = 70, right = 150, top = 40, bottom = 60;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  double x_min = 1, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const auto& s : chart.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        first = false;
      }
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, s.y[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  }
  y_min = std::min(y_min, 0.0);
  if (y_max <= y_min) y_max = y_min + 1;
  if (x_max <= x_min) x_max = x_min + 1;
  auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return top + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

  using detail::num;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
     << "  <text x=\"" << num(left + plot_w / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << detail::xml_escape(chart.title) << "</text>\n";

  os << "  <g stroke=\"#e0e0e0\" stroke-width=\"1\">\n";
  for (int t = 0; t <= 5; ++t) {
    const double y = py(y_min + (y_max - y_min) * t / 5.0);
    os << "    <line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + plot_w) << "\" y2=\""
       << num(y) << "\"/>\n";
  }
  os << "  </g>\n";
  os << "  <g stroke=\"black\" stroke-width=\"1\">\n"
     << "    <line x1=\"" << num(left) << "\" y1=\"" << num(top + plot_h) << "\" x2=\"" << num(left + plot_w)
     << "\" y2=\"" << num(top + plot_h) << "\"/>\n"
     << "    <line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\""
     << num(top + plot_h) << "\"/>\n"
     << "  </g>\n";

  os << "  <g text-anchor=\"end\">\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = y_min + (y_max - y_min) * t / 5.0;
    os << "    <text x=\"" << num(left - 6) << "\" y=\"" << num(py(v) + 4) << "\">" << detail::tick_label(v)
       << "</text>\n";
  }
  os << "  </g>\n";
  const int x_steps = static_cast<int>(std::min(10.0, x_max - x_min));
  os << "  <g text-anchor=\"middle\">\n";
  for (int t = 0; t <= x_steps; ++t) {
    const double v = x_min + (x_max - x_min) * t / std::max(1, x_steps);
    os << "    <text x=\"" << num(px(v)) << "\" y=\"" << num(top + plot_h + 18) << "\">" << detail::tick_label(v)
       << "</text>\n";
  }
  os << "  </g>\n";
  os << "  <text x=\"" << num(left + plot_w / 2) << "\" y=\"" << num(height - 16)
     << "\" text-anchor=\"middle\">" << detail::xml_escape(chart.x_label) << "</text>\n"
     << "  <text x=\"18\" y=\"" << num(top + plot_h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << num(top + plot_h / 2) << ")\">" << detail::xml_escape(chart.y_label) << "</text>\n";

  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    os << "  <polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << num(px(s.x[i])) << ',' << num(py(s.y[i]));
    os << "\"/>\n";
    const double ly = top + 10 + 20.0 * static_cast<double>(k);
    os << "  <line x1=\"" << num(left + plot_w + 14) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + plot_w + 34)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n"
       << "  <text x=\"" << num(left + plot_w + 40) << "\" y=\"" << num(ly + 4) << "\">"
       << detail::xml_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Accuracy and loss charts (training, plus validation when recorded).
inline std::pair<LineChart, LineChart> history_charts(const TrainHistory& h) {
  if (h.empty()) throw DataError("history is empty");
  LineChart acc{"Model accuracy", "epoch", "accuracy", {}};
  LineChart loss{"Model loss", "epoch", "loss", {}};
  Series ta{"train", "#1f77b4", {}, {}}, va{"validation", "#ff7f0e", {}, {}};
  Series tl{"train", "#1f77b4", {}, {}}, vl{"validation", "#ff7f0e", {}, {}};
  for (const auto& r : h) {
    const auto e = static_cast<double>(r.epoch);
    ta.x.push_back(e);
    ta.y.push_back(r.train_acc);
    tl.x.push_back(e);
    tl.y.push_back(r.train_loss);
    if (r.val_acc) {
      va.x.push_back(e);
      va.y.push_back(*r.val_acc);
    }
    if (r.val_loss) {
      vl.x.push_back(e);
      vl.y.push_back(*r.val_loss);
    }
  }
  acc.series.push_back(ta);
  loss.series.push_back(tl);
  if (!va.x.empty()) acc.series.push_back(va);
  if (!vl.x.empty()) loss.series.push_back(vl);
  return {acc, loss};
}

/// Writes accuracy.svg and loss.svg into `dir`.
inline void write_curves(const TrainHistory& h, const std::filesystem::path& dir) {
  const auto [acc, loss] = history_charts(h);
  std::filesystem::create_directories(dir);
  for (const auto& [name, chart] : {std::pair{"accuracy.svg", &acc}, std::pair{"loss.svg", &loss}}) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / name).string());
    out << render_svg(*chart);
  }
}

}  // namespace leancnn
