#pragma once

#include <string>
#include <vector>

namespace attn_tutor::cli {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  // Source text of each y value; written into the SVG unchanged.
  std::vector<std::string> y_text;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;  // x = 0 is drawn one decade below the smallest positive x
  std::vector<Series> series;
};

std::string render_svg(const Chart& chart);

}  // namespace attn_tutor::cli
