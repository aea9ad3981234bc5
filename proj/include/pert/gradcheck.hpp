#pragma once

#include <functional>
#include <vector>

#include "pert/tensor.hpp"

namespace pert {

/// Reverse-mode gradients of f() with respect to each params[i], as flat
/// buffers. Zeroes existing gradients first, so the result is exactly one
/// evaluation's worth.
std::vector<std::vector<double>> autodiff_gradients(const std::function<Tensor()>& f,
                                                    const std::vector<Tensor>& params);

/// Worst relative error between the supplied analytic gradients and central
/// finite differences (f(t+h) - f(t-h)) / 2h, coordinate by coordinate.
///
/// Relative error is |a - n| / max(|a|, |n|, 1e-4); the floor keeps
/// differencing noise on near-zero coordinates from dominating the report.
/// f must be deterministic (no dropout).
double compare_to_finite_differences(const std::function<Tensor()>& f,
                                     const std::vector<Tensor>& params,
                                     const std::vector<std::vector<double>>& analytic,
                                     double h = 1e-5);

/// autodiff_gradients + compare_to_finite_differences in one call.
double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double h = 1e-5);

}  // namespace pert
