#pragma once

// Central finite-difference oracle. Test-only; shares no code with the
// reverse-mode implementation it checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "zsl/tensor.hpp"

namespace zsl::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares an analytic gradient against (f(x+h) - f(x-h)) / 2h for every
// element of `x`. `f` must evaluate the loss with the current contents of x.
inline GradCheckResult check_tensor(Tensor& x, const Tensor& analytic,
                                    const std::function<double()>& f,
                                    const std::string& name, double step = 1e-5,
                                    double floor = 1e-6) {
  GradCheckResult r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f();
    x[i] = orig - step;
    const double down = f();
    x[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric, floor);
    ++r.checked;
    if (err > r.max_rel_error) {
      r.max_rel_error = err;
      char buf[96];
      std::snprintf(buf, sizeof buf, "] analytic=%.6g numeric=%.6g", analytic[i], numeric);
      r.worst = name + "[" + std::to_string(i) + buf;
    }
  }
  return r;
}

// Every element of every parameter; gradients must already sit in p.grad.
inline GradCheckResult check_parameters(ParameterSet& params, const std::function<double()>& f,
                                        double step = 1e-5, double floor = 1e-6) {
  GradCheckResult total;
  for (auto& [name, p] : params) {
    const Tensor analytic = p.grad;
    auto r = check_tensor(p.value, analytic, f, name, step, floor);
    total.checked += r.checked;
    if (r.max_rel_error > total.max_rel_error) {
      total.max_rel_error = r.max_rel_error;
      total.worst = r.worst;
    }
  }
  return total;
}

}  // namespace zsl::testing
