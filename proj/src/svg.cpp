#include "sthfl/svg.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

namespace sthfl {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<Series> curves_from_log(const MetricsLog& log, const std::string& metric) {
  std::map<std::string, int> last_stage;
  std::vector<std::string> order;
  for (const auto& r : log.rows()) {
    if (r.metric != metric || r.scope != kScopeAll) continue;
    auto [it, fresh] = last_stage.try_emplace(r.algorithm, r.stage);
    if (fresh) order.push_back(r.algorithm);
    it->second = std::max(it->second, r.stage);
  }
  std::vector<Series> out;
  for (const auto& name : order) {
    Series s{name, {}};
    for (const auto& r : log.rows()) {
      if (r.metric == metric && r.scope == kScopeAll && r.algorithm == name &&
          r.stage == last_stage[name]) {
        s.points.emplace_back(r.round, r.value);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

SvgFrame frame_for(std::span<const Series> series) {
  SvgFrame f;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      f.x0 = any ? std::min(f.x0, x) : x;
      f.x1 = any ? std::max(f.x1, x) : x;
      any = true;
    }
  }
  if (!any) {
    f.x0 = 0.0;
    f.x1 = 1.0;
  } else if (f.x1 == f.x0) {
    f.x1 = f.x0 + 1.0;
  }
  return f;
}

std::string emit_svg(std::span<const Series> series, const std::string& metric) {
  const SvgFrame f = frame_for(series);
  const double right = SvgFrame::kWidth - SvgFrame::kRight;
  const double bottom = SvgFrame::kHeight - SvgFrame::kBottom;
  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      SvgFrame::kWidth, SvgFrame::kHeight);

  // axes
  out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n",
                     SvgFrame::kLeft, bottom, right);
  out += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n",
                     SvgFrame::kLeft, SvgFrame::kTop, bottom);
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    out += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"#ddd\"/>\n"
        "<text x=\"{3:.2f}\" y=\"{4:.2f}\" font-size=\"11\" text-anchor=\"end\">{5:.2f}</text>\n",
        SvgFrame::kLeft, f.py(y), right, SvgFrame::kLeft - 6, f.py(y) + 4, y);
    const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
    out += fmt::format(
        "<text x=\"{0:.2f}\" y=\"{1:.2f}\" font-size=\"11\" text-anchor=\"middle\">{2:g}</text>\n",
        f.px(x), bottom + 16, x);
  }
  out += fmt::format(
      "<text x=\"{0:.2f}\" y=\"{1:.2f}\" font-size=\"12\" text-anchor=\"middle\">round</text>\n",
      (SvgFrame::kLeft + right) / 2, SvgFrame::kHeight - 12);
  out += fmt::format(
      "<text x=\"14\" y=\"{0:.2f}\" font-size=\"12\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 14 {0:.2f})\">{1}</text>\n",
      (SvgFrame::kTop + bottom) / 2, escape(metric));

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& [x, y] : s.points) {
      if (!pts.empty()) pts += ' ';
      pts += fmt::format("{:.2f},{:.2f}", f.px(x), f.py(y));
    }
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                       color, pts);
    const double ly = SvgFrame::kTop + 14 + 16 * static_cast<double>(i);
    out += fmt::format(
        "<text x=\"{0:.2f}\" y=\"{1:.2f}\" font-size=\"11\" fill=\"{2}\" text-anchor=\"end\">{3}</text>\n",
        right - 6, ly, color, escape(s.name));
  }
  out += "</svg>\n";
  return out;
}

}  // namespace sthfl
