#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace hfrl::svg {

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline std::string line_chart(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                              const std::string& ylabel) {
  const double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + escape(title) + "</text>\n";
  o += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) + "\" stroke=\"black\"/>\n";
  o += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) + "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    o += "<text x=\"" + num(L - 6) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" + num(yv) + "</text>\n";
    o += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(H - B + 16) + "\" text-anchor=\"middle\" font-size=\"11\">" + num(xv) + "</text>\n";
  }
  o += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 10) + "\" text-anchor=\"middle\" font-size=\"12\">" + escape(xlabel) + "</text>\n";
  o += "<text x=\"16\" y=\"" + num((T + H - B) / 2) + "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " +
       num((T + H - B) / 2) + ")\">" + escape(ylabel) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* c = colors[i % 10];
    std::string pts;
    for (auto [x, y] : s.points) pts += num(px(x)) + "," + num(py(y)) + " ";
    o += "<polyline fill=\"none\" stroke=\"" + std::string(c) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(i);
    o += "<rect x=\"" + num(W - R + 10) + "\" y=\"" + num(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" + c + "\"/>\n";
    o += "<text x=\"" + num(W - R + 26) + "\" y=\"" + num(ly + 1) + "\" font-size=\"11\">" + escape(s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

// Square matrix heatmap on a white-to-blue scale between the matrix min and max.
inline std::string heatmap(const std::vector<std::vector<double>>& m, const std::vector<std::string>& labels,
                           const std::string& title) {
  const std::size_t n = m.size();
  const double cell = 36, L = 60, T = 50;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : m)
    for (double v : r) lo = std::min(lo, v), hi = std::max(hi, v);
  if (!(hi > lo)) hi = lo + 1;
  const double W = L + cell * static_cast<double>(n) + 20, H = T + cell * static_cast<double>(n) + 20;
  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + num(W / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) + "</text>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string lab = i < labels.size() ? escape(labels[i]) : std::to_string(i);
    o += "<text x=\"" + num(L - 6) + "\" y=\"" + num(T + cell * (static_cast<double>(i) + 0.6)) + "\" text-anchor=\"end\" font-size=\"11\">" + lab + "</text>\n";
    o += "<text x=\"" + num(L + cell * (static_cast<double>(i) + 0.5)) + "\" y=\"" + num(T - 6) + "\" text-anchor=\"middle\" font-size=\"11\">" + lab + "</text>\n";
    for (std::size_t j = 0; j < n; ++j) {
      const double f = (m[i][j] - lo) / (hi - lo);
      const int r = static_cast<int>(255 - 225 * f), g = static_cast<int>(255 - 160 * f);
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", r, g, 255);
      o += "<rect x=\"" + num(L + cell * static_cast<double>(j)) + "\" y=\"" + num(T + cell * static_cast<double>(i)) + "\" width=\"" + num(cell) +
           "\" height=\"" + num(cell) + "\" fill=\"" + fill + "\"><title>" + num(m[i][j]) + "</title></rect>\n";
    }
  }
  o += "</svg>\n";
  return o;
}

}  // namespace hfrl::svg
