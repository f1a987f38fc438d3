#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::optim {

enum class OptimizerKind { adam, adamax, rmsprop, sgd };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::adam: return "Adam";
    case OptimizerKind::adamax: return "Adamax";
    case OptimizerKind::rmsprop: return "RMSProp";
    case OptimizerKind::sgd: return "SGD";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamax") return OptimizerKind::adamax;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ParameterError("unknown optimizer '" + name + "' (expected Adam, Adamax, RMSProp or SGD)");
}

inline constexpr OptimizerKind kAllOptimizers[] = {OptimizerKind::adam, OptimizerKind::adamax, OptimizerKind::rmsprop,
                                                   OptimizerKind::sgd};

struct OptimizerConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double rho = 0.9;  // RMSProp decay
};

/// Holds moment buffers for a fixed parameter list. step() reads each
/// Parameter::grad and updates Parameter::value in place.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, std::vector<Parameter*> params, OptimizerConstants c = {})
      : kind_(kind), lr_(lr), c_(c), params_(std::move(params)) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be positive, got " + std::to_string(lr));
    for (const Parameter* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Parameter& p = *params_[i];
      if (p.grad.shape() != p.value.shape() || m_[i].shape() != p.value.shape()) {
        throw ContractError("optimizer: gradient of " + p.name + " has shape " + shape_str(p.grad.shape()) +
                            ", parameter is " + shape_str(p.value.shape()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      std::span<double> th = params_[i]->value.data();
      std::span<const double> g = std::as_const(params_[i]->grad).data();
      std::span<double> m = m_[i].data(), v = v_[i].data();
      for (std::size_t j = 0; j < th.size(); ++j) {
        switch (kind_) {
          case OptimizerKind::sgd:
            th[j] -= lr_ * g[j];
            break;
          case OptimizerKind::adam:
            m[j] = c_.beta1 * m[j] + (1.0 - c_.beta1) * g[j];
            v[j] = c_.beta2 * v[j] + (1.0 - c_.beta2) * g[j] * g[j];
            th[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c_.eps);
            break;
          case OptimizerKind::adamax:
            m[j] = c_.beta1 * m[j] + (1.0 - c_.beta1) * g[j];
            v[j] = std::max(c_.beta2 * v[j], std::abs(g[j]));
            th[j] -= lr_ * (m[j] / bc1) / (v[j] + c_.eps);
            break;
          case OptimizerKind::rmsprop:
            v[j] = c_.rho * v[j] + (1.0 - c_.rho) * g[j] * g[j];
            th[j] -= lr_ * g[j] / (std::sqrt(v[j]) + c_.eps);
            break;
        }
      }
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  OptimizerConstants c_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace snowcast::optim
