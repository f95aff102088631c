#pragma once

// Minimal static line-chart renderer; reports are consumed offline.

#include "vvc/common.hpp"

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

namespace vvc::cli {

struct Series {
  std::string name;
  std::vector<double> y;
};

inline void write_svg_lines(const std::string& path, const std::string& title,
                            const std::vector<Series>& series, double y_ref = 1.0) {
  const int width = 900, height = 420;
  const int ml = 60, mr = 150, mt = 40, mb = 40;
  double y_min = y_ref, y_max = y_ref;
  std::size_t n = 1;
  for (const auto& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  }
  const double pad = 0.05 * std::max(1e-9, y_max - y_min);
  y_min -= pad;
  y_max += pad;
  auto xs = [&](std::size_t i) {
    return ml + (width - ml - mr) * (n > 1 ? double(i) / double(n - 1) : 0.5);
  };
  auto ys = [&](double v) {
    return mt + (height - mt - mb) * (1.0 - (v - y_min) / (y_max - y_min));
  };
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                  "#bcbd22", "#17becf"};
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
      << height << "'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<text x='" << ml << "' y='24' font-family='sans-serif' font-size='15'>"
      << title << "</text>\n";
  svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << height - mb << "' stroke='black'/>\n";
  svg << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr
      << "' y2='" << height - mb << "' stroke='black'/>\n";
  // reference level and axis labels
  svg << "<line x1='" << ml << "' y1='" << ys(y_ref) << "' x2='" << width - mr << "' y2='"
      << ys(y_ref) << "' stroke='#aaaaaa' stroke-dasharray='4,4'/>\n";
  for (double v : {y_min + pad, y_ref, y_max - pad}) {
    svg << "<text x='4' y='" << ys(v) + 4 << "' font-family='sans-serif' font-size='11'>"
        << fmt_double(std::round(v * 1e4) / 1e4) << "</text>\n";
  }
  int color = 0;
  for (const auto& s : series) {
    svg << "<polyline fill='none' stroke='" << palette[color % 10] << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      svg << xs(i) << "," << ys(s.y[i]) << " ";
    }
    svg << "'/>\n";
    svg << "<text x='" << width - mr + 8 << "' y='" << mt + 16 * (color + 1)
        << "' font-family='sans-serif' font-size='12' fill='" << palette[color % 10] << "'>"
        << s.name << "</text>\n";
    ++color;
  }
  svg << "</svg>\n";
  write_file(path, svg.str());
}

}  // namespace vvc::cli
