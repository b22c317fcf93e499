#pragma once

// Central finite-difference gradient oracle shared by the unit and
// acceptance suites. Rebuilds the computation per probe, so the closure must
// be a pure function of the given leaves.

#include <cmath>
#include <functional>
#include <vector>

#include "starnet/tensor.hpp"

namespace starnet::testing {

using ScalarFn = std::function<Tensor()>;

inline double fd_derivative(Tensor& leaf, int64_t index, const ScalarFn& fn, double h = 1e-5) {
  double orig = leaf.data()[static_cast<size_t>(index)];
  auto set = [&](double v) { leaf.mutable_data()[static_cast<size_t>(index)] = v; };
  set(orig + h);
  double up = fn().item();
  set(orig - h);
  double down = fn().item();
  set(orig);
  return (up - down) / (2.0 * h);
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t checked = 0;
};

// Compares backward() gradients on every given leaf against central
// differences. Relative error uses max(|analytic|, |numeric|, eps) as scale.
inline GradCheckResult grad_check(std::vector<Tensor> leaves, const ScalarFn& fn,
                                  double h = 1e-5) {
  for (auto& l : leaves) l.zero_grad();
  Tensor out = fn();
  backward(out);
  GradCheckResult r;
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      double analytic = g.empty() ? 0.0 : g[static_cast<size_t>(i)];
      double numeric = fd_derivative(leaf, i, fn, h);
      double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-4});
      double abs_err = std::fabs(analytic - numeric);
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      r.max_rel_err = std::max(r.max_rel_err, abs_err / scale);
      ++r.checked;
    }
  }
  return r;
}

}  // namespace starnet::testing
