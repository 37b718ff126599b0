// Central finite-difference verification of analytic gradients.
#pragma once

#include "paqdet/tensor.hpp"

#include <functional>

namespace paqdet::ad {

// f maps an input tensor to a scalar tensor. When `g` is null the input is a
// plain constant and f must evaluate without recording.
using ScalarFn = std::function<Tensor(Graph*, const Tensor&)>;

// Compares the analytic gradient of f at x against central differences.
// Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
// eps must lie in (0, 1e-2]; the caller keeps x away from kinks.
double finite_difference_check(const ScalarFn& f, const Shape& shape,
                               const std::vector<double>& x, double eps);

}  // namespace paqdet::ad
