#pragma once

#include <functional>

#include "attn_tutor/tensor.hpp"

namespace attn_tutor {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Largest coordinate-wise disagreement between the tape gradient of f at x
/// and a central difference with the given step, measured as
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
/// f must be scalar valued and deterministic; a non-finite value of f raises
/// std::domain_error.
double grad_check(const ScalarFunction& f, const Tensor& x, double step = 1e-5);

}  // namespace attn_tutor
