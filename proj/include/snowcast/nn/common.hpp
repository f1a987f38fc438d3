#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "snowcast/core/ops.hpp"
#include "snowcast/core/rng.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::nn {

using ad::Graph;
using ad::Var;

/// Training flag plus the random source dropout draws from.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(Rng& rng) { return {true, &rng}; }
};

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

inline Var dense(Graph& g, Var x, Parameter& w, Parameter& b) {
  return ad::add_bias(ad::matmul(x, g.param(w)), g.param(b));
}

inline Var maybe_dropout(Var x, double rate, const ForwardMode& mode) {
  if (!mode.training || rate == 0.0) return x;
  if (!mode.rng) throw ContractError("dropout in training mode needs an Rng");
  return ad::dropout(x, rate, *mode.rng, true);
}

/// Accepts [window x features] or [batch x window x features]; returns the
/// batched rank-3 view and checks the feature count.
inline Var as_batched_sequence(Var x, std::size_t features, const char* who) {
  const Shape& s = x.shape();
  if (s.size() == 2) x = ad::reshape(x, {1, s[0], s[1]});
  else if (s.size() != 3) throw DimensionError(std::string(who) + ": expected [window x features] input, got " + shape_str(s));
  if (x.shape()[2] != features) {
    throw DimensionError(std::string(who) + ": model expects " + std::to_string(features) + " features, input has " +
                         shape_str(x.shape()));
  }
  return x;
}

inline void set_all(const std::vector<Parameter*>& params, double value) {
  for (Parameter* p : params) p->value.fill(value);
}

}  // namespace snowcast::nn
