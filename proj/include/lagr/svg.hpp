#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lagr/error.hpp"
#include "lagr/io.hpp"

namespace lagr::svg {

// Plots are drawn with <polyline> and <rect> only; coordinates are printed
// with two decimals so the files are byte-stable.

inline constexpr std::array<const char*, 6> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct Frame {
  double width = 640, height = 400;
  double left = 60, right = 20, top = 20, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool log_y = false;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const {
    const double v = log_y ? std::log10(y) : y;
    const double lo = log_y ? std::log10(y0) : y0, hi = log_y ? std::log10(y1) : y1;
    return height - bottom - (v - lo) / (hi - lo) * (height - top - bottom);
  }
};

namespace detail {

inline std::string num(double v) { return io::fmt_fixed(v, 2); }

inline void widen(double& lo, double& hi, bool log) {
  if (log) {
    if (!(lo > 0.0)) throw DataError("svg: log axis needs positive values");
    if (hi <= lo) {
      lo /= 2.0;
      hi *= 2.0;
    }
    return;
  }
  if (hi <= lo) {
    const double pad = lo == 0.0 ? 1.0 : 0.5 * std::abs(lo);
    lo -= pad;
    hi += pad;
    return;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
}

} // namespace detail

class Canvas {
 public:
  explicit Canvas(Frame f) : f_(f) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::num(f.width) << "\" height=\""
         << detail::num(f.height) << "\" viewBox=\"0 0 " << detail::num(f.width) << ' ' << detail::num(f.height)
         << "\">\n";
    rect(0, 0, f.width, f.height, "#ffffff", "none");
  }

  const Frame& frame() const { return f_; }

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke) {
    out_ << "<rect x=\"" << detail::num(x) << "\" y=\"" << detail::num(y) << "\" width=\"" << detail::num(w)
         << "\" height=\"" << detail::num(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }

  /// Polyline through pixel-space points.
  void polyline(const std::vector<std::array<double, 2>>& pts, const std::string& stroke, double width = 1.5,
                const std::string& dash = "") {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << detail::num(width) << '"';
    if (!dash.empty()) out_ << " stroke-dasharray=\"" << dash << '"';
    out_ << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i)
      out_ << (i ? " " : "") << detail::num(pts[i][0]) << ',' << detail::num(pts[i][1]);
    out_ << "\"/>\n";
  }

  /// Plot area border plus five ticks per axis.
  void axes() {
    const Frame& f = f_;
    rect(f.left, f.top, f.width - f.left - f.right, f.height - f.top - f.bottom, "none", "#000000");
    for (int i = 0; i <= 4; ++i) {
      const double tx = f.left + i * (f.width - f.left - f.right) / 4.0;
      const double ty = f.top + i * (f.height - f.top - f.bottom) / 4.0;
      polyline({{tx, f.height - f.bottom}, {tx, f.height - f.bottom + 5}}, "#000000", 1.0);
      polyline({{f.left - 5, ty}, {f.left, ty}}, "#000000", 1.0);
      polyline({{tx, f.top}, {tx, f.height - f.bottom}}, "#dddddd", 0.5);
      polyline({{f.left, ty}, {f.width - f.right, ty}}, "#dddddd", 0.5);
    }
  }

  /// Colour swatches in the top-right corner, one per series in order.
  void legend(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      rect(f_.width - f_.right - 20, f_.top + 8 + 14 * static_cast<double>(i), 12, 8,
           kPalette[i % kPalette.size()], "none");
  }

  std::string str() const { return out_.str() + "</svg>\n"; }

 private:
  Frame f_;
  std::ostringstream out_;
};

/// Frame whose ranges cover all series.
inline Frame fit(const std::vector<Series>& series, bool log_y = false) {
  Frame f;
  f.log_y = log_y;
  double xl = std::numeric_limits<double>::infinity(), xh = -xl, yl = xl, yh = -xl;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DimensionError("svg: series " + s.name + " has mismatched x/y");
    for (double v : s.x) {
      xl = std::min(xl, v);
      xh = std::max(xh, v);
    }
    for (double v : s.y) {
      yl = std::min(yl, v);
      yh = std::max(yh, v);
    }
  }
  if (!std::isfinite(xl) || !std::isfinite(yl)) throw DataError("svg: nothing to plot");
  detail::widen(xl, xh, false);
  if (log_y && yl > 0.0) {
    yl /= 1.2;
    yh *= 1.2;
  }
  detail::widen(yl, yh, log_y);
  f.x0 = xl;
  f.x1 = xh;
  f.y0 = yl;
  f.y1 = yh;
  return f;
}

/// Line chart: one polyline per series with a marker square at every point.
inline std::string line_chart(const std::vector<Series>& series, bool log_y = false) {
  Canvas c(fit(series, log_y));
  c.axes();
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::string col = kPalette[i % kPalette.size()];
    std::vector<std::array<double, 2>> pts;
    for (std::size_t k = 0; k < series[i].x.size(); ++k)
      pts.push_back({c.frame().px(series[i].x[k]), c.frame().py(series[i].y[k])});
    c.polyline(pts, col);
    if (pts.size() <= 40)
      for (const auto& p : pts) c.rect(p[0] - 2, p[1] - 2, 4, 4, col, "none");
  }
  c.legend(series.size());
  return c.str();
}

/// Scatter plot of (x, y) with 3 px squares.
inline std::string scatter(const std::vector<double>& x, const std::vector<double>& y) {
  const std::vector<Series> s{{"points", x, y}};
  Canvas c(fit(s));
  c.axes();
  for (std::size_t i = 0; i < x.size(); ++i)
    c.rect(c.frame().px(x[i]) - 1.5, c.frame().py(y[i]) - 1.5, 3, 3, kPalette[0], "none");
  return c.str();
}

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// One box (q1..q3 with median bar and min/max whiskers) per group.
inline std::string box_plot(const std::vector<BoxStats>& boxes) {
  if (boxes.empty()) throw DataError("svg: no boxes");
  Series range{"range", {}, {}};
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    range.x.push_back(static_cast<double>(i));
    range.y.push_back(boxes[i].min);
    range.x.push_back(static_cast<double>(i));
    range.y.push_back(boxes[i].max);
  }
  Frame f = fit({range});
  f.x0 = -0.5;
  f.x1 = static_cast<double>(boxes.size()) - 0.5;
  Canvas c(f);
  c.axes();
  const double half = 0.3 * (f.px(1.0) - f.px(0.0));
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BoxStats& b = boxes[i];
    const double x = f.px(static_cast<double>(i));
    const std::string col = kPalette[i % kPalette.size()];
    c.polyline({{x, f.py(b.min)}, {x, f.py(b.q1)}}, "#000000", 1.0);
    c.polyline({{x, f.py(b.q3)}, {x, f.py(b.max)}}, "#000000", 1.0);
    c.rect(x - half, f.py(b.q3), 2 * half, f.py(b.q1) - f.py(b.q3), col, "#000000");
    c.polyline({{x - half, f.py(b.median)}, {x + half, f.py(b.median)}}, "#000000", 2.0);
  }
  return c.str();
}

} // namespace lagr::svg
