#include "attn_tutor/grid_map.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "attn_tutor/checkpoint.hpp"

namespace attn_tutor {

std::string to_string(MapSource source) {
  switch (source) {
    case MapSource::attention: return "attention";
    case MapSource::gradcam: return "gradcam";
    case MapSource::rise: return "rise";
    case MapSource::random: return "random";
    case MapSource::reference: return "reference";
  }
  return "unknown";
}

GridMap GridMap::uniform(std::size_t side, MapSource source) {
  const double w = 1.0 / static_cast<double>(side * side);
  return {side, std::vector<double>(side * side, w), source};
}

GridMap GridMap::point(std::size_t side, std::size_t row, std::size_t col, MapSource source) {
  GridMap m{side, std::vector<double>(side * side, 0.0), source};
  m.values.at(row * side + col) = 1.0;
  return m;
}

bool on_simplex(std::span<const double> values, double tol) {
  double total = 0.0;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0.0) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

bool normalize_or_uniform(std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) {
    std::fill(values.begin(), values.end(), 1.0 / static_cast<double>(values.size()));
    return false;
  }
  for (auto& v : values) v /= total;
  return true;
}

namespace {

std::size_t side_of(std::size_t cells) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(cells))));
  if (side * side != cells) throw ShapeError("grid map: " + std::to_string(cells) + " cells is not a square grid");
  return side;
}

}  // namespace

std::vector<GridMap> maps_from_rows(const Tensor& rows, MapSource source) {
  if (rows.rank() != 2) throw ShapeError("maps_from_rows: expected [N,K], got " + shape_string(rows.shape()));
  const std::size_t n = rows.size(0), k = rows.size(1);
  const auto side = side_of(k);
  const auto v = rows.values();
  std::vector<GridMap> maps;
  maps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) maps.push_back({side, std::vector<double>(v.begin() + i * k, v.begin() + (i + 1) * k), source});
  return maps;
}

Tensor rows_from_maps(std::span<const GridMap> maps) {
  if (maps.empty()) throw ShapeError("rows_from_maps: no maps");
  const std::size_t k = maps.front().cells();
  std::vector<double> data;
  data.reserve(maps.size() * k);
  for (const auto& m : maps) {
    if (m.cells() != k || m.values.size() != k) throw ShapeError("rows_from_maps: maps differ in size");
    data.insert(data.end(), m.values.begin(), m.values.end());
  }
  return Tensor(Shape{maps.size(), k}, std::move(data));
}

std::string map_to_csv(const GridMap& map) {
  std::string out;
  char buf[32];
  for (std::size_t r = 0; r < map.side; ++r) {
    for (std::size_t c = 0; c < map.side; ++c) {
      if (c) out.push_back(',');
      const int len = std::snprintf(buf, sizeof buf, "%.17g", map.at(r, c));
      out.append(buf, static_cast<std::size_t>(len));
    }
    out.push_back('\n');
  }
  return out;
}

GridMap map_from_csv(const std::string& text, MapSource source) {
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t count = 0, start = 0;
    while (start <= line.size()) {
      const auto end = std::min(line.find(',', start), line.size());
      double v = 0.0;
      const auto* first = line.data() + start;
      const auto* last = line.data() + end;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) {
        throw std::invalid_argument("map csv: bad number on line " + std::to_string(rows + 1));
      }
      values.push_back(v);
      ++count;
      start = end + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) throw std::invalid_argument("map csv: ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows == 0 || rows != cols) {
    throw std::invalid_argument("map csv: expected a square grid, got " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  return {rows, std::move(values), source};
}

void write_map_csv(const std::filesystem::path& path, const GridMap& map) { write_file(path, map_to_csv(map)); }

GridMap read_map_csv(const std::filesystem::path& path, MapSource source) {
  return map_from_csv(read_file(path), source);
}

}  // namespace attn_tutor
