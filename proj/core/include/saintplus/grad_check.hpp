#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "saintplus/tensor.hpp"

namespace saintplus::tensor {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates checked per input; 0 checks all of them.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
  GraphOptions graph;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  /// Coordinates whose central difference straddles a ReLU kink.
  std::size_t excluded = 0;
  std::vector<double> per_input_max;
};

/// Scalar function of several tensors, evaluated on a fresh graph each call.
using ScalarFunction = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares reverse-mode gradients against central differences
/// (f(x+h e) - f(x-h e)) / 2h. Per coordinate the error is
/// |a - n| / max(1, |a|, |n|). A coordinate is excluded when either
/// perturbed evaluation changes the ReLU activation pattern.
GradCheckReport grad_check(const ScalarFunction& f, std::span<const Tensor> inputs,
                           const GradCheckOptions& options = {});

/// Single-input convenience form; returns the maximum relative error.
double grad_check(const std::function<Var(Graph&, Var)>& f, const Tensor& x, double step = 1e-5);

}  // namespace saintplus::tensor
