#ifndef IPRM_NUMERICS_GRADCHECK_HPP_
#define IPRM_NUMERICS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "iprm/numerics/tensor.hpp"

namespace iprm {

/// Compares the analytic gradient of f with respect to `param` against
/// central differences of step h. Returns
///   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor)
/// with floor = 1e-6. Gradients below the floor are compared in absolute
/// terms; this keeps structurally zero gradients (softmax shift invariance)
/// from being judged against central-difference rounding noise.
/// f receives `param` and must return a scalar tensor. The parameter's grad
/// is cleared before and left holding the analytic gradient afterwards.
template <class Real>
Real finite_difference_check(const std::function<Tensor<Real>(const Tensor<Real>&)>& f,
                             Tensor<Real> param, Real h) {
  if (!(h > Real(0))) throw std::invalid_argument("finite difference step must be positive");
  param.set_requires_grad(true);
  param.zero_grad();
  Tensor<Real> loss = f(param);
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericalError("finite_difference_check: non-finite function value");
  }
  loss.backward();
  std::vector<Real> analytic(param.numel(), Real(0));
  if (param.has_grad()) {
    std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
  }

  auto eval = [&]() {
    NoGradGuard guard;
    const Real v = f(param).item();
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericalError("finite_difference_check: non-finite function value");
    }
    return v;
  };

  Real worst = 0;
  auto values = param.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + h;
    const Real plus = eval();
    values[i] = saved - h;
    const Real minus = eval();
    values[i] = saved;
    const Real numeric = (plus - minus) / (Real(2) * h);
    const Real denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), static_cast<Real>(1e-6)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace iprm

#endif  // IPRM_NUMERICS_GRADCHECK_HPP_
