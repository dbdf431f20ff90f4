#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attn_tutor/tensor.hpp"

namespace attn_tutor {

enum class MapSource { attention, gradcam, rise, random, reference };

std::string to_string(MapSource source);

/// Nonnegative G x G grid over image regions, row-major. Attention and
/// explanation maps are both kept on the probability simplex.
struct GridMap {
  std::size_t side = 0;
  std::vector<double> values;
  MapSource source = MapSource::attention;

  std::size_t cells() const { return side * side; }
  double at(std::size_t row, std::size_t col) const { return values[row * side + col]; }

  static GridMap uniform(std::size_t side, MapSource source = MapSource::reference);
  static GridMap point(std::size_t side, std::size_t row, std::size_t col, MapSource source = MapSource::reference);
};

/// Sum of entries within tol of 1, every entry finite and >= 0.
bool on_simplex(std::span<const double> values, double tol = 1e-9);

/// Rescales to sum 1; returns false (leaving a uniform map) when the total is
/// zero or not finite.
bool normalize_or_uniform(std::vector<double>& values);

/// Rows of a [N, K] tensor as maps of side sqrt(K).
std::vector<GridMap> maps_from_rows(const Tensor& rows, MapSource source);
Tensor rows_from_maps(std::span<const GridMap> maps);

// CSV grids: `side` lines of `side` comma separated decimals, '\n' endings.
std::string map_to_csv(const GridMap& map);
GridMap map_from_csv(const std::string& text, MapSource source = MapSource::reference);
void write_map_csv(const std::filesystem::path& path, const GridMap& map);
GridMap read_map_csv(const std::filesystem::path& path, MapSource source = MapSource::reference);

}  // namespace attn_tutor
