#include "leapattn/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace leapattn {

namespace {

std::string xml_escape(const std::string& s) {
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

}  // namespace

std::string scatter_svg(const TradeoffReport& report, const std::string& x_label,
                        const std::string& y_label) {
  constexpr double kW = 640, kH = 480;
  constexpr double kL = 70, kR = 30, kT = 30, kB = 60;

  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0, s_max = 1.0;
  if (!report.points.empty()) {
    x_min = x_max = report.points[0].throughput;
    y_min = y_max = report.points[0].quality;
    for (const TradeoffPoint& p : report.points) {
      x_min = std::min(x_min, p.throughput);
      x_max = std::max(x_max, p.throughput);
      y_min = std::min(y_min, p.quality);
      y_max = std::max(y_max, p.quality);
      s_max = std::max(s_max, p.memory);
    }
  }
  // pad degenerate ranges so a single point lands mid-plot
  if (x_max - x_min < 1e-12) {
    x_min -= 1.0;
    x_max += 1.0;
  }
  if (y_max - y_min < 1e-12) {
    y_min -= 1.0;
    y_max += 1.0;
  }
  const auto sx = [&](double v) { return kL + (v - x_min) / (x_max - x_min) * (kW - kL - kR); };
  const auto sy = [&](double v) { return kH - kB - (v - y_min) / (y_max - y_min) * (kH - kT - kB); };

  std::ostringstream svg;
  svg.precision(6);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n"
      << "  <rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n"
      << "  <line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
      << kH - kB << "\" stroke=\"black\"/>\n"
      << "  <line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
      << "\" stroke=\"black\"/>\n"
      << "  <text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 15
      << "\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(x_label) << "</text>\n"
      << "  <text x=\"18\" y=\"" << (kT + kH - kB) / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
      << (kT + kH - kB) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (const TradeoffPoint& p : report.points) {
    const double r = 4.0 + 16.0 * std::sqrt(std::max(0.0, p.memory) / s_max);
    svg << "  <circle cx=\"" << sx(p.throughput) << "\" cy=\"" << sy(p.quality) << "\" r=\"" << r
        << "\" fill=\"steelblue\" fill-opacity=\"0.6\" stroke=\"black\"/>\n"
        << "  <text x=\"" << sx(p.throughput) << "\" y=\"" << sy(p.quality) - r - 4
        << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(p.scheme) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace leapattn
