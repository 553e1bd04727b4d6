#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace devexplain {

struct BarSeries {
  std::string name;
  std::string color;
  std::vector<double> values;  // one per group; NaN draws no bar
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// Grouped vertical bar chart with a zero line and a numeric label on every bar.
inline std::string grouped_bar_chart_svg(const std::string& title,
                                         const std::vector<std::string>& groups,
                                         const std::vector<BarSeries>& series) {
  const double width = 120.0 + 150.0 * static_cast<double>(groups.size());
  const double height = 360.0;
  const double top = 50.0, bottom = 300.0, left = 60.0;
  double lo = 0.0, hi = 0.0;
  for (const auto& s : series)
    for (double v : s.values)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  const double pad = 0.1 * (hi - lo);
  lo = lo < 0.0 ? lo - pad : lo;
  hi += pad;
  auto ypix = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fixed(width, 0)
    << "\" height=\"" << detail::fixed(height, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << detail::fixed(width / 2, 1) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
    << detail::svg_escape(title) << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << detail::fixed(ypix(0.0), 2) << "\" x2=\""
    << detail::fixed(width - 20.0, 1) << "\" y2=\"" << detail::fixed(ypix(0.0), 2)
    << "\" stroke=\"black\"/>\n";

  const double group_w = 150.0;
  const double bar_w = (group_w - 30.0) / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double gx = left + 20.0 + group_w * static_cast<double>(g);
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = g < series[s].values.size() ? series[s].values[g] : NAN;
      if (!std::isfinite(v)) continue;
      const double x = gx + bar_w * static_cast<double>(s);
      const double y0 = ypix(std::max(v, 0.0));
      const double h = std::abs(ypix(v) - ypix(0.0));
      o << "<rect x=\"" << detail::fixed(x, 2) << "\" y=\"" << detail::fixed(y0, 2) << "\" width=\""
        << detail::fixed(bar_w - 2.0, 2) << "\" height=\"" << detail::fixed(h, 2) << "\" fill=\""
        << series[s].color << "\"/>\n";
      const double ly = v >= 0.0 ? y0 - 3.0 : y0 + h + 11.0;
      o << "<text x=\"" << detail::fixed(x + (bar_w - 2.0) / 2, 2) << "\" y=\"" << detail::fixed(ly, 2)
        << "\" text-anchor=\"middle\">" << detail::fixed(v, 3) << "</text>\n";
    }
    o << "<text x=\"" << detail::fixed(gx + (group_w - 30.0) / 2, 2) << "\" y=\""
      << detail::fixed(bottom + 20.0, 1) << "\" text-anchor=\"middle\">"
      << detail::svg_escape(groups[g]) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double lx = left + 130.0 * static_cast<double>(s);
    o << "<rect x=\"" << detail::fixed(lx, 1) << "\" y=\"330\" width=\"12\" height=\"12\" fill=\""
      << series[s].color << "\"/>\n";
    o << "<text x=\"" << detail::fixed(lx + 16.0, 1) << "\" y=\"340\">"
      << detail::svg_escape(series[s].name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace devexplain
