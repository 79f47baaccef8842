#pragma once

#include <functional>

#include "fsd/tensorgrad/tape.hpp"

namespace fsd::tg {

/// Scalar function built on a fresh tape from a variable holding x.
using ScalarFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;  // max |analytic - fd| / (|fd| + 1e-12)
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares the tape gradient of f at x with central differences of the
/// given step, coordinate by coordinate.
GradCheckResult grad_check_report(const ScalarFn& f, const Tensor& x, double step);

inline double grad_check(const ScalarFn& f, const Tensor& x, double step) {
  return grad_check_report(f, x, step).max_rel_error;
}

/// Evaluates f(x) without keeping the tape.
double evaluate(const ScalarFn& f, const Tensor& x);

}  // namespace fsd::tg
