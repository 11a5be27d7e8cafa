// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0

#include "locglob/plot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace locglob::plot {

namespace {

constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759",
                                    "#76b7b2", "#59a14f", "#edc948",
                                    "#b07aa1", "#ff9da7", "#9c755f",
                                    "#bab0ac"};
constexpr std::size_t kPaletteSize = std::size(kPalette);

constexpr double kWidth = 760, kHeight = 420;
constexpr double kLeft = 70, kRight = 180, kTop = 40, kBottom = 70;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

class Svg {
 public:
  Svg() {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
        << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' '
        << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2,
            const std::string& stroke, double width = 1.0) {
    os_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\""
        << num(x2) << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke
        << "\" stroke-width=\"" << width << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill) {
    os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\""
        << num(w) << "\" height=\"" << num(h) << "\" fill=\"" << fill
        << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill) {
    os_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\""
        << r << "\" fill=\"" << fill << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& stroke) {
    os_ << "<polyline fill=\"none\" stroke=\"" << stroke
        << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) os_ << num(x) << ',' << num(y) << ' ';
    os_ << "\"/>\n";
  }
  void text(double x, double y, const std::string& s,
            const char* anchor = "middle", double rotate = 0.0,
            int size = 12) {
    os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y)
        << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size << '"';
    if (rotate != 0.0) {
      os_ << " transform=\"rotate(" << rotate << ' ' << num(x) << ' '
          << num(y) << ")\"";
    }
    os_ << '>' << escape(s) << "</text>\n";
  }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  std::ostringstream os_;
};

struct Axis {
  double lo, hi;
  double map(double v, double a, double b) const {
    return a + (v - lo) / (hi - lo) * (b - a);
  }
};

std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= 6.0) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-12; t += step) {
    out.push_back(std::abs(t) < 1e-12 ? 0.0 : t);
  }
  return out;
}

void frame(Svg& svg, const ChartLabels& labels, const Axis& y,
           double plot_bottom, double plot_right) {
  svg.text(kWidth / 2, 22, labels.title, "middle", 0, 15);
  for (double t : ticks(y.lo, y.hi)) {
    const double py = y.map(t, plot_bottom, kTop);
    svg.line(kLeft, py, plot_right, py, "#e0e0e0");
    svg.text(kLeft - 6, py + 4, num(t), "end");
  }
  svg.line(kLeft, kTop, kLeft, plot_bottom, "black");
  svg.line(kLeft, plot_bottom, plot_right, plot_bottom, "black");
  svg.text(18, (kTop + plot_bottom) / 2, labels.y, "middle", -90);
  svg.text((kLeft + plot_right) / 2, kHeight - 12, labels.x);
}

void legend(Svg& svg, const std::vector<std::string>& names, double x) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(i);
    svg.rect(x, y - 9, 12, 12, kPalette[i % kPaletteSize]);
    svg.text(x + 18, y + 1, names[i], "start");
  }
}

}  // namespace

std::string bar_chart(const std::vector<BarGroup>& groups,
                      const ChartLabels& labels, double y_min, double y_max) {
  Svg svg;
  const double bottom = kHeight - kBottom;
  const double right = kWidth - kRight;
  const Axis y{y_min, y_max};
  frame(svg, labels, y, bottom, right);

  std::vector<std::string> names;
  std::map<std::string, std::size_t> colour;
  for (const auto& g : groups) {
    for (const auto& b : g.bars) {
      if (colour.emplace(b.label, names.size()).second) names.push_back(b.label);
    }
  }
  if (!groups.empty()) {
    const double group_w = (right - kLeft) / static_cast<double>(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      const double x0 = kLeft + group_w * static_cast<double>(gi);
      const double bar_w =
          group_w * 0.8 / std::max<double>(1.0, static_cast<double>(g.bars.size()));
      for (std::size_t bi = 0; bi < g.bars.size(); ++bi) {
        const auto& b = g.bars[bi];
        const double v = std::clamp(b.value, y_min, y_max);
        const double x = x0 + group_w * 0.1 + bar_w * static_cast<double>(bi);
        const double top = y.map(v, bottom, kTop);
        svg.rect(x, top, bar_w * 0.9, bottom - top,
                 kPalette[colour[b.label] % kPaletteSize]);
        if (b.error > 0.0) {
          const double cx = x + bar_w * 0.45;
          const double e1 = y.map(std::clamp(b.value - b.error, y_min, y_max),
                                  bottom, kTop);
          const double e2 = y.map(std::clamp(b.value + b.error, y_min, y_max),
                                  bottom, kTop);
          svg.line(cx, e1, cx, e2, "black", 1.5);
        }
      }
      svg.text(x0 + group_w / 2, bottom + 18, g.label);
    }
  }
  legend(svg, names, right + 15);
  return svg.finish();
}

std::string line_chart(const std::vector<Series>& series,
                       const ChartLabels& labels) {
  Svg svg;
  const double bottom = kHeight - kBottom;
  const double right = kWidth - kRight;
  double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [x, v] : s.points) {
      if (first) {
        xlo = xhi = x;
        ylo = yhi = v;
        first = false;
      }
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  if (xhi - xlo < 1e-12) xhi = xlo + 1.0;
  const double pad = std::max(1e-3, (yhi - ylo) * 0.08);
  const Axis xa{xlo, xhi};
  const Axis ya{ylo - pad, yhi + pad};
  frame(svg, labels, ya, bottom, right);
  for (double t : ticks(xa.lo, xa.hi)) {
    const double px = xa.map(t, kLeft, right);
    svg.line(px, bottom, px, bottom + 4, "black");
    svg.text(px, bottom + 18, num(t));
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    names.push_back(s.label);
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, v] : s.points) {
      pts.emplace_back(xa.map(x, kLeft, right), ya.map(v, bottom, kTop));
    }
    svg.polyline(pts, kPalette[i % kPaletteSize]);
    for (const auto& [px, py] : pts) {
      if (s.points.size() <= 30) svg.circle(px, py, 3, kPalette[i % kPaletteSize]);
    }
  }
  legend(svg, names, right + 15);
  return svg.finish();
}

}  // namespace locglob::plot
