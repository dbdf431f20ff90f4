#pragma once

#include <string>
#include <vector>

#include "attn_tutor/tensor.hpp"

namespace attn_tutor::match {

enum class MatchKind { none, mse, mmd, coral };

struct MatchVariant {
  MatchKind kind = MatchKind::none;
  std::vector<double> kernel_bandwidths{0.1, 1.0, 10.0};  // mmd only

  /// Throws std::invalid_argument on a non-positive bandwidth.
  void validate() const;
};

/// Mean over all entries of (alpha - mu)^2.
Tensor mse_loss(const Tensor& alpha, const Tensor& mu);

/// Biased squared MMD between the rows of alpha [N,K] and mu [M,K] with a
/// Gaussian kernel exp(-|x-y|^2 / (2 s^2)), summed over bandwidths s.
Tensor mmd_loss(const Tensor& alpha, const Tensor& mu, const std::vector<double>& bandwidths);

/// |C(alpha) - C(mu)|_F^2 / (4 K^2); C is the unbiased sample covariance of
/// the rows (N - 1 denominator).
Tensor coral_loss(const Tensor& alpha, const Tensor& mu);

/// Dispatch on the variant; MatchKind::none returns a zero scalar.
Tensor match_loss(const MatchVariant& variant, const Tensor& alpha, const Tensor& mu);

}  // namespace attn_tutor::match
