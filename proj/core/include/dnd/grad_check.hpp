#pragma once

#include <functional>
#include <vector>

#include "dnd/tensor.hpp"

namespace dnd {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
};

// Compares reverse-mode gradients of a scalar function with five-point
// central differences. Relative error per coordinate is
// |autodiff - numeric| / max(|autodiff|, |numeric|, 1e-6).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

// Multi-parameter variant: `loss` rebuilds the graph from the current values
// of `params` (leaf tensors, probed in place and restored). At most
// `max_coords_per_param` evenly spaced coordinates are probed per tensor;
// 0 means all of them.
GradCheckResult grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                  double eps = 1e-6, std::size_t max_coords_per_param = 0);

}  // namespace dnd
