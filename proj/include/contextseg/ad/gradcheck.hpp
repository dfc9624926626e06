#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "contextseg/ad/params.hpp"
#include "contextseg/ad/tape.hpp"

namespace cseg::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[index]"
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
// turning round-off into large relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares backward() against central differences for every scalar of every
// parameter in `store` (or at most `max_per_param` evenly spaced entries).
// `loss` builds the scalar loss on the supplied tape.
inline GradCheckResult grad_check(ParameterStore<double>& store,
                                  const std::function<Var<double>(Tape<double>&)>& loss, double h = 1e-4,
                                  std::size_t max_per_param = 0) {
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    auto& p = store[pi];
    const std::size_t n = p.value.size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t k = 0; k < n; k += stride) {
      const double orig = p.value[k];
      auto eval = [&](double v) {
        p.value[k] = v;
        Tape<double> t(false);
        return loss(t).value()[0];
      };
      const double numeric = (eval(orig + h) - eval(orig - h)) / (2 * h);
      p.value[k] = orig;
      const double err = relative_error(p.grad[k], numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return res;
}

}  // namespace cseg::ad
