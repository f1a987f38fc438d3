#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "snowcast/core/graph.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::ad {

// Test oracle: compares reverse-mode gradients against central differences.
//
// The error for one coordinate is |analytic - numeric| / max(1, |analytic|)
// and the functions below return the maximum over coordinates.

using ScalarFn = std::function<Var(Graph&, Var)>;

inline double relative_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

/// Gradient of f w.r.t. its single tensor argument.
inline double gradient_check(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ParameterError("gradient_check: step must be positive");
  Tensor analytic;
  {
    Graph g;
    Var xv = g.input(x);
    Var y = f(g, xv);
    g.backward(y);
    analytic = xv.grad();
  }
  auto eval = [&](const Tensor& at) {
    Graph g;
    return f(g, g.constant(at)).value()[0];
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_gap(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Gradient of a parameterized scalar w.r.t. every listed parameter.
/// `f` must rebuild the whole computation on the graph it is given.
inline double gradient_check_params(const std::function<Var(Graph&)>& f, const std::vector<Parameter*>& params,
                                    double h = 1e-5) {
  if (!(h > 0.0)) throw ParameterError("gradient_check_params: step must be positive");
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(f(g));
  }
  auto eval = [&] {
    Graph g;
    return f(g).value()[0];
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      worst = std::max(worst, relative_gap(p->grad[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

}  // namespace snowcast::ad
