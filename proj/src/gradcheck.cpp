#include "pert/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pert {

std::vector<std::vector<double>> autodiff_gradients(const std::function<Tensor()>& f,
                                                    const std::vector<Tensor>& params) {
  for (const Tensor& p : params) {
    Tensor(p).zero_grad();
  }
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) {
    if (!p.has_grad()) {
      throw UsageError("autodiff_gradients: parameter has no gradient after backward()");
    }
    grads.push_back(p.grad());
  }
  return grads;
}

double compare_to_finite_differences(const std::function<Tensor()>& f,
                                     const std::vector<Tensor>& params,
                                     const std::vector<std::vector<double>>& analytic, double h) {
  NoGradGuard ng;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p.at(i);
      p.at(i) = saved + h;
      const double up = f().item();
      p.at(i) = saved - h;
      const double down = f().item();
      p.at(i) = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-4});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double h) {
  const auto grads = autodiff_gradients(f, params);
  return compare_to_finite_differences(f, params, grads, h);
}

}  // namespace pert
