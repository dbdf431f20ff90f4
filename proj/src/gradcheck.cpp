#include "attn_tutor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace attn_tutor {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  const auto y = f(x);
  if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar valued, got " + shape_string(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw std::domain_error("grad_check: function value is not finite");
  return v;
}

}  // namespace

double grad_check(const ScalarFunction& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  const std::vector<double> base(x.values().begin(), x.values().end());

  Tensor probe(x.shape(), base, true);
  const auto y = f(probe);
  if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar valued, got " + shape_string(y.shape()));
  if (!std::isfinite(y.item())) throw std::domain_error("grad_check: function value is not finite");
  std::vector<double> analytic(base.size(), 0.0);
  if (y.requires_grad()) {
    y.backward();
    if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto shifted = base;
    shifted[i] = base[i] + step;
    const double up = evaluate(f, Tensor(x.shape(), shifted));
    shifted[i] = base[i] - step;
    const double down = evaluate(f, Tensor(x.shape(), shifted));
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace attn_tutor
