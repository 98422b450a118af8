#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sthfl/metrics.hpp"

namespace sthfl {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (round, value)
};

// Plot area inside a 640 x 400 canvas; values are mapped affinely, x over
// the rounds present and y over [0, 1].
struct SvgFrame {
  static constexpr double kWidth = 640, kHeight = 400;
  static constexpr double kLeft = 60, kRight = 20, kTop = 20, kBottom = 50;
  double x0 = 0.0, x1 = 1.0;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kTop + (1.0 - y) * (kHeight - kTop - kBottom); }
};

// One series per algorithm from the ALL-scope rows of `metric`. Per-stage
// metrics contribute only their final stage.
std::vector<Series> curves_from_log(const MetricsLog& log, const std::string& metric);

SvgFrame frame_for(std::span<const Series> series);

std::string emit_svg(std::span<const Series> series, const std::string& metric);

}  // namespace sthfl
