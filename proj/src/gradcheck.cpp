#include "capsdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "capsdet/errors.hpp"

namespace capsdet {

double finite_difference_check(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               const Tensor& analytic_grad, double eps) {
    if (analytic_grad.shape() != x.shape())
        throw ShapeError("finite_difference_check: grad shape mismatch");
    if (eps <= 0.0) throw ContractError("finite_difference_check: eps must be positive");
    Tensor probe = x;
    double worst = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) {
        double orig = probe[i];
        probe[i] = orig + eps;
        double hi = f(probe);
        probe[i] = orig - eps;
        double lo = f(probe);
        probe[i] = orig;
        double numeric = (hi - lo) / (2.0 * eps);
        double analytic = analytic_grad[i];
        double rel = std::abs(analytic - numeric) /
                     std::max(1e-8, std::abs(analytic) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace capsdet
