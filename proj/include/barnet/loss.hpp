#pragma once

#include <string>

#include "barnet/mask.hpp"
#include "barnet/ops.hpp"

namespace barnet {

namespace detail {

template <typename T>
void require_mask_matches(const char* op, const Tensor<T>& x, const LabelMap& target) {
  require_rank(op, x, 3);
  if (x.dim(1) != target.height || x.dim(2) != target.width)
    throw DimensionError(std::string(op) + ": target " + std::to_string(target.height) + "x" +
                         std::to_string(target.width) + " does not match " + to_string(x.shape()));
}

}  // namespace detail

/// Mean over pixels of −log_probs[target(pixel), pixel].
template <typename T>
Tensor<T> nll_mean(const Tensor<T>& log_probs, const LabelMap& target) {
  detail::require_mask_matches("nll_mean", log_probs, target);
  const Index k = log_probs.dim(0), hw = target.size();
  check_labels(target, k);
  const auto& lp = log_probs.value().data;
  T total = 0;
  for (Index i = 0; i < hw; ++i) total -= lp[target.labels[static_cast<std::size_t>(i)] * hw + i];
  Dense<T> out = Dense<T>::from({1}, {total / static_cast<T>(hw)});
  return record<T>("nll_mean", std::move(out), {log_probs}, [target, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      const T step = self.grad.data[0] / static_cast<T>(hw);
      for (Index i = 0; i < hw; ++i) g->data[target.labels[static_cast<std::size_t>(i)] * hw + i] -= step;
    }
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& target) {
  return nll_mean(log_softmax_channels(logits), target);
}

/// Macro-averaged smoothed soft Dice over all K classes:
/// mean_k (2·Σ p·t + s) / (Σ p + Σ t + s), t the one-hot target.
template <typename T>
Tensor<T> dice(const Tensor<T>& probs, const LabelMap& target, T smooth = T(1)) {
  detail::require_mask_matches("dice", probs, target);
  if (!(smooth > T(0))) throw ConfigError("dice: smoothing constant must be positive");
  const Index k = probs.dim(0);
  const Tensor<T> onehot(one_hot<T>(target, k));
  const Tensor<T> overlap = sum_spatial(mul(probs, onehot));
  const Tensor<T> predicted = sum_spatial(probs);
  const Tensor<T> present(Dense<T>(Shape{k}, onehot.value().as_matrix(k, target.size()).rowwise().sum().array()));
  const Tensor<T> numer = add_scalar(scale(overlap, T(2)), smooth);
  const Tensor<T> denom = add_scalar(add(predicted, present), smooth);
  return mean(div(numer, denom));
}

template <typename T>
void check_alpha(T alpha) {
  if (!(alpha >= T(0) && alpha <= T(1))) throw ConfigError("hybrid loss alpha must lie in [0,1]");
}

/// (1−α)·cross_entropy − α·ln(dice of the softmax probabilities).
template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& logits, const LabelMap& target, T alpha = T(0.2), T smooth = T(1)) {
  check_alpha(alpha);
  const Tensor<T> ce = cross_entropy(logits, target);
  const Tensor<T> d = dice(softmax_channels(logits), target, smooth);
  return sub(scale(ce, T(1) - alpha), scale(log(d), alpha));
}

}  // namespace barnet
