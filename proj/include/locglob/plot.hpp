// Copyright (c) 2026, locglob authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-contained SVG charts.

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace locglob::plot {

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;  // half-length of the error whisker; 0 draws none
};

struct BarGroup {
  std::string label;
  std::vector<Bar> bars;
};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct ChartLabels {
  std::string title;
  std::string x;
  std::string y;
};

/// Grouped bars; bars with the same label share a colour across groups.
/// The y axis spans [y_min, y_max].
std::string bar_chart(const std::vector<BarGroup>& groups,
                      const ChartLabels& labels, double y_min = 0.0,
                      double y_max = 1.0);

/// Polylines with markers; axes fit the data.
std::string line_chart(const std::vector<Series>& series,
                       const ChartLabels& labels);

}  // namespace locglob::plot
