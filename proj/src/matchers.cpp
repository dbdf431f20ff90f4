#include "attn_tutor/matchers.hpp"

#include <stdexcept>

#include "attn_tutor/ops.hpp"

namespace attn_tutor::match {

namespace {

void check_batches(const Tensor& alpha, const Tensor& mu, const char* op, bool same_rows) {
  if (alpha.rank() != 2 || mu.rank() != 2 || alpha.size(1) != mu.size(1) || (same_rows && alpha.size(0) != mu.size(0))) {
    throw ShapeError(std::string(op) + ": alpha=" + shape_string(alpha.shape()) + ", mu=" + shape_string(mu.shape()));
  }
  if (alpha.size(0) < 2 || mu.size(0) < 2) {
    throw std::invalid_argument(std::string(op) + ": needs batches of at least 2 maps");
  }
}

// [N,K], [M,K] -> [N,M] squared Euclidean distances.
Tensor pairwise_sq(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.size(0), m = y.size(0), k = x.size(1);
  return sum(square(sub(reshape(x, {n, 1, k}), reshape(y, {1, m, k}))), 2);
}

Tensor covariance(const Tensor& x) {
  const auto centered = sub(x, mean(x, 0, true));
  return scale(matmul(permute(centered, {1, 0}), centered), 1.0 / static_cast<double>(x.size(0) - 1));
}

}  // namespace

void MatchVariant::validate() const {
  if (kind == MatchKind::mmd && kernel_bandwidths.empty()) throw std::invalid_argument("mmd: no kernel bandwidths");
  for (double s : kernel_bandwidths) {
    if (!(s > 0.0)) throw std::invalid_argument("mmd: kernel bandwidths must be > 0");
  }
}

Tensor mse_loss(const Tensor& alpha, const Tensor& mu) {
  if (alpha.shape() != mu.shape()) {
    throw ShapeError("mse_loss: alpha=" + shape_string(alpha.shape()) + ", mu=" + shape_string(mu.shape()));
  }
  return mean(square(sub(alpha, mu)));
}

Tensor mmd_loss(const Tensor& alpha, const Tensor& mu, const std::vector<double>& bandwidths) {
  check_batches(alpha, mu, "mmd_loss", false);
  MatchVariant{MatchKind::mmd, bandwidths}.validate();
  const auto dxx = pairwise_sq(alpha, alpha), dyy = pairwise_sq(mu, mu), dxy = pairwise_sq(alpha, mu);
  Tensor total;
  for (double s : bandwidths) {
    const double c = -1.0 / (2.0 * s * s);
    auto term = sub(add(mean(exp(scale(dxx, c))), mean(exp(scale(dyy, c)))), scale(mean(exp(scale(dxy, c))), 2.0));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor coral_loss(const Tensor& alpha, const Tensor& mu) {
  check_batches(alpha, mu, "coral_loss", false);
  const double k = static_cast<double>(alpha.size(1));
  return scale(sum(square(sub(covariance(alpha), covariance(mu)))), 1.0 / (4.0 * k * k));
}

Tensor match_loss(const MatchVariant& variant, const Tensor& alpha, const Tensor& mu) {
  switch (variant.kind) {
    case MatchKind::mse: return mse_loss(alpha, mu);
    case MatchKind::mmd: return mmd_loss(alpha, mu, variant.kernel_bandwidths);
    case MatchKind::coral: return coral_loss(alpha, mu);
    case MatchKind::none: break;
  }
  return Tensor::scalar(0.0);
}

}  // namespace attn_tutor::match
