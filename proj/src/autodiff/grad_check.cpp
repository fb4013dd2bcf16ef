#include "pulse/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pulse/errors.hpp"

namespace pulse::ad {

double relative_error(double autodiff, double numeric, double floor) {
  const double denom = std::max({std::abs(autodiff), std::abs(numeric), floor});
  return std::abs(autodiff - numeric) / denom;
}

GradCheckResult grad_check_detailed(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                                    double epsilon, Stencil stencil) {
  std::vector<Tensor> leaves = inputs;
  for (auto& t : leaves) {
    if (!t.is_leaf()) throw ContractError("grad_check inputs must be leaf tensors");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    if (loss.numel() != 1) throw ContractError("grad_check requires a scalar-valued function");
    backward(loss);
  }

  GradCheckResult res;
  for (auto& t : leaves) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      auto at = [&](double offset) {
        values[i] = orig + offset;
        return f().item();
      };
      double numeric;
      if (stencil == Stencil::Central2) {
        numeric = (at(epsilon) - at(-epsilon)) / (2.0 * epsilon);
      } else {
        numeric = (-at(2 * epsilon) + 8 * at(epsilon) - 8 * at(-epsilon) + at(-2 * epsilon)) / (12.0 * epsilon);
      }
      values[i] = orig;
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[i], numeric));
      res.max_abs_autodiff = std::max(res.max_abs_autodiff, std::abs(analytic[i]));
      res.max_abs_numeric = std::max(res.max_abs_numeric, std::abs(numeric));
      ++res.checked;
    }
  }
  return res;
}

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double epsilon,
                  Stencil stencil) {
  return grad_check_detailed(f, inputs, epsilon, stencil).max_rel_error;
}

}  // namespace pulse::ad
