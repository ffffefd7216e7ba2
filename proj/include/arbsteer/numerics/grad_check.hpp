#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "arbsteer/numerics/tape.hpp"

namespace arbsteer::numerics {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

template <class T>
using ScalarFn = std::function<Var<T>(Tape<T>&, Var<T>)>;

/// Relative error used by the checker. The floor keeps near-zero gradients
/// from turning rounding noise into huge ratios.
inline double grad_rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares tape gradients of scalar f at x against central differences.
/// `indices` restricts the check to a subset of x's elements.
template <class T>
GradCheckReport grad_check(const ScalarFn<T>& f, const Tensor<T>& x, double tol,
                           std::optional<std::vector<std::size_t>> indices = std::nullopt,
                           double step = 1e-5) {
  Tensor<T> analytic;
  {
    Tape<T> tape;
    Var<T> xv = tape.leaf(x, true);
    Var<T> y = f(tape, xv);
    const T y0 = y.value()[0];
    if (y.value().size() != 1 || !std::isfinite(static_cast<double>(y0))) {
      throw ContractError("grad_check: f(x) is not a finite scalar");
    }
    tape.backward(y);
    analytic = tape.grad(xv);
  }

  auto eval = [&](const Tensor<T>& at) {
    Tape<T> tape(false);
    Var<T> y = f(tape, tape.leaf(at));
    const double v = static_cast<double>(y.value()[0]);
    if (!std::isfinite(v)) throw ContractError("grad_check: f(x + h) is not finite");
    return v;
  };

  std::vector<std::size_t> idx;
  if (indices) {
    idx = *indices;
  } else {
    idx.resize(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }

  GradCheckReport rep;
  rep.tolerance = tol;
  Tensor<T> probe = x;
  for (std::size_t i : idx) {
    const T orig = probe[i];
    probe[i] = orig + static_cast<T>(step);
    const double up = eval(probe);
    probe[i] = orig - static_cast<T>(step);
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = grad_rel_error(static_cast<double>(analytic[i]), numeric);
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace arbsteer::numerics
