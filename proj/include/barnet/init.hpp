#pragma once

#include <cmath>
#include <random>

#include "barnet/tensor.hpp"

namespace barnet {

/// He-uniform: U(−√(6/fan_in), √(6/fan_in)), drawn in row-major order.
template <typename T>
Tensor<T> he_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
  Dense<T> d(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Index i = 0; i < d.numel(); ++i) d.data[i] = static_cast<T>(u(rng));
  return Tensor<T>(std::move(d), true);
}

template <typename T>
Tensor<T> filled_parameter(Shape shape, T value) {
  return Tensor<T>(Dense<T>::constant(std::move(shape), value), true);
}

}  // namespace barnet
