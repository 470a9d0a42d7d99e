#pragma once

#include <atomic>
#include <cstdint>

#include "barnet/ops.hpp"

namespace barnet {

namespace detail {
inline std::atomic<std::uint64_t>& descriptor_counter() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}
}  // namespace detail

/// Number of D×D global descriptors built so far in this process.
inline std::uint64_t descriptors_built() { return detail::descriptor_counter().load(); }

/// Raw second-order statistic and its normalized form.
template <typename T>
struct GlobalDescriptor {
  Tensor<T> raw;
  Tensor<T> normalized;
};

/// D×H×W -> D×(HW), row-major over pixels.
template <typename T>
Tensor<T> flatten_pixels(const Tensor<T>& x) {
  detail::require_rank("flatten_pixels", x, 3);
  return reshape(x, {x.dim(0), x.dim(1) * x.dim(2)});
}

/// Sum over pixels of x_ij·x_ijᵀ, i.e. X̄·X̄ᵀ. Symmetric positive semidefinite.
template <typename T>
Tensor<T> bilinear_pool(const Tensor<T>& x) {
  detail::require_rank("bilinear_pool", x, 3);
  detail::descriptor_counter().fetch_add(1, std::memory_order_relaxed);
  // Works on x's storage as a D×(HW) matrix; no flattened or transposed copies.
  const Index d = x.dim(0), n = x.dim(1) * x.dim(2);
  Dense<T> out({d, d});
  const auto flat = x.value().as_matrix(d, n);
  out.as_matrix(d, d).noalias() = flat * flat.transpose();
  return record<T>("bilinear_pool", std::move(out), {x}, [d, n](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      const auto grad = self.grad.as_matrix(d, d);
      g->as_matrix(d, n).noalias() += (grad + grad.transpose()) * self.inputs[0]->value.as_matrix(d, n);
    }
  });
}

/// Elementwise signed square root followed by whole-matrix ℓ2 normalization.
template <typename T>
Tensor<T> normalize_descriptor(const Tensor<T>& a, T eps = default_norm_eps<T>()) {
  return l2_normalize(signed_sqrt(a), eps);
}

/// Z = A′·X̄ + X, reshaped back to D×H×W.
template <typename T>
Tensor<T> distribute(const Tensor<T>& a_norm, const Tensor<T>& x) {
  detail::require_rank("distribute", a_norm, 2);
  detail::require_rank("distribute", x, 3);
  if (a_norm.dim(0) != x.dim(0) || a_norm.dim(1) != x.dim(0))
    throw DimensionError("distribute: descriptor " + to_string(a_norm.shape()) + " does not match " +
                         std::to_string(x.dim(0)) + " channels");
  const Index d = x.dim(0), n = x.dim(1) * x.dim(2);
  Dense<T> out(x.shape(), x.value().data);
  out.as_matrix(d, n).noalias() += a_norm.value().as_matrix(d, d) * x.value().as_matrix(d, n);
  return record<T>("distribute", std::move(out), {a_norm, x}, [d, n](Node<T>& self) {
    const auto grad = self.grad.as_matrix(d, n);
    if (auto* g = input_grad(self, 0))
      g->as_matrix(d, d).noalias() += grad * self.inputs[1]->value.as_matrix(d, n).transpose();
    if (auto* g = input_grad(self, 1)) {
      g->data += self.grad.data;
      g->as_matrix(d, n).noalias() += self.inputs[0]->value.as_matrix(d, d).transpose() * grad;
    }
  });
}

template <typename T>
GlobalDescriptor<T> describe(const Tensor<T>& x) {
  GlobalDescriptor<T> d;
  d.raw = bilinear_pool(x);
  d.normalized = normalize_descriptor(d.raw);
  return d;
}

/// Bilinear attention: pool, normalize, redistribute. Has no parameters.
template <typename T>
Tensor<T> bam_forward(const Tensor<T>& x) {
  return distribute(describe(x).normalized, x);
}

}  // namespace barnet
