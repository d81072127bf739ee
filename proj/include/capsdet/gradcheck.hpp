#pragma once

#include <functional>

#include "capsdet/tensor.hpp"

namespace capsdet {

// Max over coordinates of |analytic - central difference| /
// max(1e-8, |analytic| + |numeric|). f must be a pure scalar function of x.
double finite_difference_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic_grad, double eps = 1e-5);

}  // namespace capsdet
