#include "fsd/tensorgrad/gradcheck.hpp"

#include <cmath>

namespace fsd::tg {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Var v = tape.variable(x);
  const double y = f(tape, v).value().item();
  if (!std::isfinite(y)) throw NumericalError("grad_check: non-finite function value");
  return y;
}

GradCheckResult grad_check_report(const ScalarFn& f, const Tensor& x, double step) {
  Tensor analytic;
  {
    Tape tape;
    Var v = tape.variable(x);
    Var y = f(tape, v);
    analytic = tape.gradient(y, v);
  }
  GradCheckResult res;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double fp = evaluate(f, probe);
    probe[i] = x[i] - step;
    const double fm = evaluate(f, probe);
    probe[i] = x[i];
    const double fd = (fp - fm) / (2.0 * step);
    const double abs_err = std::abs(analytic[i] - fd);
    const double rel_err = abs_err / (std::abs(fd) + 1e-12);
    if (rel_err > res.max_rel_error) {
      res.max_rel_error = rel_err;
      res.worst_index = i;
    }
    res.max_abs_error = std::max(res.max_abs_error, abs_err);
  }
  return res;
}

}  // namespace fsd::tg
