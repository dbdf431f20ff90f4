#pragma once

#include <cstdint>
#include <span>

#include "attn_tutor/params.hpp"
#include "attn_tutor/tensor.hpp"

namespace attn_tutor::adversary {

enum class DiscriminatorKind { global, pixel };
enum class GeneratorForm { non_saturating, saturating };

/// Probabilities are clamped to [kProbFloor, 1 - kProbFloor] inside losses.
inline constexpr double kProbFloor = 1e-7;

struct LossReport {
  double d_loss = 0.0;
  double g_loss = 0.0;
  double js_term = 0.0;
  double chi2_term = 0.0;
};

/// Per-cell channel mean of the region activation A: [N,d,G,G] -> [N,1,G,G],
/// detached. This is the conditioning channel fed next to the map.
Tensor condition_from_activation(const Tensor& activation);

/// Conditional discriminator over G x G maps.
///
/// global: conv3x3(2->8), relu, conv3x3(8->8), relu, linear(8K->1), sigmoid;
///         output [N].
/// pixel:  1x1 convs 2->16->16->1 shared by every cell, sigmoid per cell;
///         output [N,K]. Uses fewer parameters than the global network.
///
/// Input channels are [map * K, condition] so a uniform map reads as ones.
class Discriminator {
 public:
  Discriminator(DiscriminatorKind kind, std::size_t grid, std::uint64_t seed);

  DiscriminatorKind kind() const { return kind_; }
  std::size_t grid() const { return grid_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// maps: [N,K] rows on the simplex; condition: [N,1,G,G].
  Tensor forward(const Tensor& maps, const Tensor& condition) const;
  /// Smallest |pre-activation| over the hidden ReLUs for these inputs.
  double relu_margin(const Tensor& maps, const Tensor& condition) const;
  /// Zeroes the last layer so every output is exactly 0.5.
  void zero_output_layer();
  /// Frozen copy (parameters do not require grad).
  Discriminator snapshot() const;

 private:
  Discriminator(DiscriminatorKind kind, std::size_t grid, ParamStore params)
      : kind_(kind), grid_(grid), params_(std::move(params)) {}
  Tensor run(const Tensor& maps, const Tensor& condition, std::vector<Tensor>* hidden) const;
  DiscriminatorKind kind_;
  std::size_t grid_;
  ParamStore params_;
};

/// -(E log d_real + E log(1 - d_fake)); expectations over every entry, so a
/// pixel discriminator is averaged over its K cells.
Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake);
/// non_saturating: -E log d_fake. saturating: -discriminator_loss, which
/// needs d_real as well.
Tensor generator_loss(const Tensor& d_real, const Tensor& d_fake, GeneratorForm form);

/// Values only. Throws std::domain_error on non-finite probabilities.
LossReport minimax_losses(const Tensor& d_real, const Tensor& d_fake, GeneratorForm form = GeneratorForm::non_saturating);

/// Row-wise JS divergence (natural log) averaged over rows of [N,K] inputs.
Tensor js_divergence(const Tensor& p, const Tensor& q);
/// Row-wise sum (p - q)^2 / max(q, 1e-7), averaged over rows.
Tensor pearson_chi2(const Tensor& p, const Tensor& q);

double js_divergence(std::span<const double> p, std::span<const double> q);
double pearson_chi2(std::span<const double> p, std::span<const double> q);

}  // namespace attn_tutor::adversary
