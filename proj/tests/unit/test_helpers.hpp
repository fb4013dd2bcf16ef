#pragma once

#include <vector>

#include "pulse/rng.hpp"
#include "pulse/tensor.hpp"

namespace pulse::testing {

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return ad::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

}  // namespace pulse::testing
