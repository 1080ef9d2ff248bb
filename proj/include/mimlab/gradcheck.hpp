#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "mimlab/ops.hpp"

namespace mimlab {

/// Scalar-valued function of one tensor, evaluated on a fresh tape.
using ScalarFunction = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

struct GradCheckReport {
  double max_error = 0.0;
  Index worst_index = -1;
  bool passed = true;
};

/// Compares reverse-mode gradients with central differences.
///
/// Error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Coordinates
/// for which `skip(i)` returns true are left out (e.g. near a kink).
inline GradCheckReport finite_diff_check(const ScalarFunction& f, const Tensor<double>& x, double h = 1e-5,
                                         double tol = 1e-4, const std::function<bool(Index)>& skip = {}) {
  auto eval = [&](const Tensor<double>& at) {
    Tape<double> tape;
    const double v = f(tape, tape.leaf(at)).value().item();
    if (!std::isfinite(v)) throw NumericalError("finite_diff_check: function returned a non-finite value");
    return v;
  };

  Tensor<double> analytic;
  {
    Tape<double> tape;
    auto xv = tape.leaf(x);
    auto y = f(tape, xv);
    if (!std::isfinite(y.value().item()))
      throw NumericalError("finite_diff_check: function returned a non-finite value");
    analytic = tape.backward(y)[xv];
  }
  if (!analytic.all_finite()) throw NumericalError("finite_diff_check: non-finite analytic gradient");

  GradCheckReport report;
  Tensor<double> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    if (skip && skip(i)) continue;
    const double x0 = probe[i];
    probe[i] = x0 + h;
    const double fp = eval(probe);
    probe[i] = x0 - h;
    const double fm = eval(probe);
    probe[i] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    if (err > report.max_error) {
      report.max_error = err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_error < tol;
  return report;
}

}  // namespace mimlab
