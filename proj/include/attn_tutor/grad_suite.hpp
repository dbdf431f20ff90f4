#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attn_tutor {

/// Relative-error threshold every entry of the suite must stay below.
inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckResult {
  std::string name;   // e.g. "conv2d/weight", "loss/mmd"
  std::size_t probes = 0;
  double max_error = 0.0;  // worst grad_check value over the probes

  bool passed() const { return max_error < kGradCheckTolerance; }
};

/// Central-difference checks of every differentiable primitive (per operand)
/// and every composite loss, each on `probes` random f64 inputs drawn from
/// `seed`. Inputs keep a margin from relu/clamp kinks.
std::vector<GradCheckResult> run_gradient_suite(std::size_t probes = 20, std::uint64_t seed = 1);

}  // namespace attn_tutor
