#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "barnet/ops.hpp"

namespace barnet {

struct GradcheckOptions {
  double tolerance = 1e-4;
  /// Central-difference step before scaling by max(1, |x|).
  double step = 1e-4;
  std::uint64_t seed = 0;
  /// Check at most this many randomly chosen elements per input (0 = all).
  Index max_elements = 0;
  /// Entries whose magnitude is below this fraction of the input's largest
  /// numeric gradient are compared against that scale instead of themselves.
  double relative_floor = 1e-3;
};

struct InputCheck {
  std::size_t input = 0;
  Index checked = 0;
  Index worst_index = -1;
  double max_rel_error = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradcheckReport {
  std::string op;
  double tolerance = 0.0;
  std::vector<InputCheck> inputs;

  bool passed() const {
    for (const auto& in : inputs)
      if (!(in.max_rel_error <= tolerance)) return false;
    return true;
  }

  double max_rel_error() const {
    double worst = 0.0;
    for (const auto& in : inputs) worst = std::max(worst, in.max_rel_error);
    return worst;
  }

  std::string describe() const {
    std::ostringstream os;
    os << op << ": " << (passed() ? "ok" : "FAILED") << " (tol " << tolerance << ")";
    for (const auto& in : inputs) {
      os << "\n  input " << in.input << ": max rel err " << in.max_rel_error << " over " << in.checked
         << " elements";
      if (!(in.max_rel_error <= tolerance))
        os << ", worst at element " << in.worst_index << " (analytic " << in.analytic << ", numeric "
           << in.numeric << ")";
    }
    return os.str();
  }
};

/// Compares reverse-mode gradients of `f` against central differences.
/// Non-scalar outputs are reduced with a fixed random projection so the
/// whole Jacobian participates. `f` maps the input tensors to one output.
template <typename F>
GradcheckReport gradcheck(std::string op, F&& f, const std::vector<Dense<double>>& inputs,
                          const GradcheckOptions& opts = {}) {
  std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::vector<Tensor<double>> leaves;
  for (const auto& in : inputs) leaves.emplace_back(in, true);
  Tensor<double> out = f(leaves);
  Dense<double> projection(out.shape());
  for (Index i = 0; i < projection.numel(); ++i) projection.data[i] = unit(rng);
  Tensor<double> weights(projection);
  Tensor<double> loss = sum(mul(out, weights));
  loss.backward();

  auto objective = [&](const std::vector<Dense<double>>& values) {
    NoGradGuard guard;
    std::vector<Tensor<double>> ts;
    for (const auto& v : values) ts.emplace_back(v);
    Tensor<double> y = f(ts);
    return (y.value().data * projection.data).sum();
  };

  GradcheckReport report;
  report.op = std::move(op);
  report.tolerance = opts.tolerance;
  std::vector<Dense<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Index n = inputs[i].numel();
    std::vector<Index> indices;
    if (opts.max_elements > 0 && opts.max_elements < n) {
      std::uniform_int_distribution<Index> pick(0, n - 1);
      for (Index k = 0; k < opts.max_elements; ++k) indices.push_back(pick(rng));
    } else {
      for (Index k = 0; k < n; ++k) indices.push_back(k);
    }
    const Dense<double> analytic = leaves[i].has_grad() ? leaves[i].grad() : Dense<double>(inputs[i].shape);

    std::vector<double> numeric(indices.size());
    double scale = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const Index at = indices[k];
      const double x0 = inputs[i].data[at];
      const double h = opts.step * std::max(1.0, std::abs(x0));
      probe[i].data[at] = x0 + h;
      const double up = objective(probe);
      probe[i].data[at] = x0 - h;
      const double down = objective(probe);
      probe[i].data[at] = x0;
      numeric[k] = (up - down) / (2.0 * h);
      scale = std::max({scale, std::abs(numeric[k]), std::abs(analytic.data[at])});
    }

    InputCheck check;
    check.input = i;
    check.checked = static_cast<Index>(indices.size());
    const double floor = std::max(opts.relative_floor * scale, 1e-12);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const double a = analytic.data[indices[k]];
      const double err = std::abs(a - numeric[k]) / std::max({std::abs(a), std::abs(numeric[k]), floor});
      if (err > check.max_rel_error || check.worst_index < 0) {
        check.max_rel_error = err;
        check.worst_index = indices[k];
        check.analytic = a;
        check.numeric = numeric[k];
      }
    }
    report.inputs.push_back(check);
  }
  return report;
}

/// Random dense tensor with entries uniform in [lo, hi].
inline Dense<double> random_dense(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Dense<double> d(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < d.numel(); ++i) d.data[i] = u(rng);
  return d;
}

}  // namespace barnet
