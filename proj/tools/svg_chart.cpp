#include "svg_chart.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace attn_tutor::cli {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
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
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::string render_svg(const Chart& chart) {
  double min_positive = std::numeric_limits<double>::infinity();
  for (const auto& s : chart.series)
    for (double x : s.x)
      if (x > 0) min_positive = std::min(min_positive, x);
  if (!std::isfinite(min_positive)) min_positive = 1.0;
  auto map_x = [&](double x) { return chart.log_x ? std::log10(x > 0 ? x : min_positive / 10) : x; };

  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : chart.series) {
    for (double x : s.x) x0 = std::min(x0, map_x(x)), x1 = std::max(x1, map_x(x));
    for (double y : s.y)
      if (std::isfinite(y)) y0 = std::min(y0, y), y1 = std::max(y1, y);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (map_x(x) - x0) / (x1 - x0) * plot_w; };
  auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(chart.title)
      << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y0 + (y1 - y0) * i / 4.0;
    out << "<line x1=\"" << kLeft - 4 << "\" x2=\"" << kLeft << "\" y1=\"" << num(py(y)) << "\" y2=\"" << num(py(y))
        << "\" stroke=\"#444\"/><text x=\"" << kLeft - 7 << "\" y=\"" << num(py(y) + 4) << "\" text-anchor=\"end\">"
        << tick(y) << "</text>\n";
  }
  std::vector<double> xs;
  for (const auto& s : chart.series) xs.insert(xs.end(), s.x.begin(), s.x.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  const std::size_t stride = std::max<std::size_t>(1, xs.size() / 8);
  for (std::size_t i = 0; i < xs.size(); i += stride) {
    out << "<text x=\"" << num(px(xs[i])) << "\" y=\"" << kTop + plot_h + 16 << "\" text-anchor=\"middle\">"
        << tick(xs[i]) << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
      << escape(chart.x_label) << "</text>\n";
  out << "<text transform=\"translate(16," << kTop + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(chart.y_label) << "</text>\n";

  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const auto& series = chart.series[s];
    const char* color = kColors[s % std::size(kColors)];
    std::string values;
    for (std::size_t i = 0; i < series.y_text.size(); ++i) values += (i ? " " : "") + series.y_text[i];
    out << "<polyline class=\"series\" data-name=\"" << escape(series.name) << "\" data-values=\"" << escape(values)
        << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series.x.size(); ++i) out << (i ? " " : "") << num(px(series.x[i])) << ',' << num(py(series.y[i]));
    out << "\"/>\n";
    const double ly = kTop + 10 + 18 * static_cast<double>(s);
    out << "<line x1=\"" << kWidth - kRight + 12 << "\" x2=\"" << kWidth - kRight + 32 << "\" y1=\"" << ly << "\" y2=\""
        << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << kWidth - kRight + 38 << "\" y=\""
        << ly + 4 << "\">" << escape(series.name) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace attn_tutor::cli
