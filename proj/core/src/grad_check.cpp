#include "dnd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dnd {

namespace {

// Below this magnitude a coordinate is checked in absolute terms; finite
// differences cannot resolve it relative to the loss.
constexpr double kRelFloor = 1e-6;

void check_eps(double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
}

double scalar_value(const Tensor& y) {
    if (y.numel() != 1) throw ContractError("grad_check: function is not scalar-valued, shape " + shape_to_string(y.shape()));
    return y.item();
}

double rel_error(double analytic, double numeric) {
    if (!std::isfinite(analytic) || !std::isfinite(numeric)) return std::numeric_limits<double>::infinity();
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    check_eps(eps);
    Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
    return grad_check_params([&] { return f(leaf); }, {leaf}, eps).max_rel_error;
}

GradCheckResult grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params, double eps,
                                  std::size_t max_coords_per_param) {
    check_eps(eps);
    for (auto& p : params) p.zero_grad();
    Tensor y = loss();
    scalar_value(y);
    if (y.requires_grad()) y.backward();

    GradCheckResult result;
    for (auto& p : params) {
        const std::size_t n = p.numel();
        std::vector<double> analytic(n, 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        const std::size_t probes = (max_coords_per_param == 0 || max_coords_per_param >= n) ? n : max_coords_per_param;
        auto values = p.mutable_data();
        for (std::size_t j = 0; j < probes; ++j) {
            const std::size_t i = probes == n ? j : (j * n) / probes;
            const double saved = values[i];
            auto at = [&](double offset) {
                values[i] = saved + offset;
                return scalar_value(loss());
            };
            // Fourth-order stencil: O(eps^4) truncation lets eps stay large
            // enough that roundoff does not swamp small coordinates.
            const double f2 = at(2 * eps), f1 = at(eps), m1 = at(-eps), m2 = at(-2 * eps);
            // Differences first so a flat coordinate gives exactly zero.
            const double numeric = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * eps);
            values[i] = saved;
            result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[i], numeric));
            ++result.coordinates;
        }
    }
    return result;
}

}  // namespace dnd
