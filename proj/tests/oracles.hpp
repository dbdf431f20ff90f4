#pragma once

// Reference implementations written without the library's algorithms, used
// as oracles by the unit tests and the acceptance gate.

#include <cmath>
#include <random>
#include <span>
#include <vector>

namespace oracle {

// Rank of each value as 1 + (#smaller) + (#equal - 1) / 2, by counting.
inline std::vector<double> counting_ranks(std::span<const double> v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double w : v) {
      less += w < v[i];
      equal += w == v[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

// Pearson correlation of the counting ranks; 0 for a constant map.
inline double spearman(std::span<const double> a, std::span<const double> b) {
  const auto ra = counting_ranks(a), rb = counting_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// 4x4 map of small integers (so ties are common), normalised.
inline std::vector<double> tied_map(std::mt19937_64& rng, std::size_t cells = 16) {
  std::uniform_int_distribution<int> d(0, 4);
  std::vector<double> v(cells);
  double s = 0.0;
  for (auto& x : v) s += x = d(rng);
  if (s == 0.0) v[0] = s = 1.0;
  for (auto& x : v) x /= s;
  return v;
}

inline std::vector<double> random_map(std::mt19937_64& rng, std::size_t cells) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> v(cells);
  double s = 0.0;
  for (auto& x : v) s += x = g(rng);
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace oracle
