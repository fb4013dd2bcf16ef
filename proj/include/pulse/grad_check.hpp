#pragma once

#include <functional>
#include <vector>

#include "pulse/tensor.hpp"

namespace pulse::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_autodiff = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros comparable.
double relative_error(double autodiff, double numeric, double floor = 1e-7);

enum class Stencil {
  Central2,  // (f(x+h) - f(x-h)) / 2h
  Central4,  // five-point, fourth order; for deep graphs where tiny entries sink into rounding at small h
};

/// Compare reverse-mode gradients of the scalar `f` against central differences
/// with step `epsilon`, over every element of every tensor in `inputs`.
/// `f` must read the inputs' current values each time it is called.
GradCheckResult grad_check_detailed(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                                    double epsilon = 1e-5, Stencil stencil = Stencil::Central2);

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double epsilon = 1e-5,
                  Stencil stencil = Stencil::Central2);

}  // namespace pulse::ad
