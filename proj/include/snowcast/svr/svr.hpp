#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::svr {

enum class KernelKind { linear, rbf };

inline std::string to_string(KernelKind k) { return k == KernelKind::linear ? "linear" : "rbf"; }

inline KernelKind parse_kernel(const std::string& s) {
  if (s == "linear") return KernelKind::linear;
  if (s == "rbf") return KernelKind::rbf;
  throw ParameterError("unknown SVR kernel '" + s + "' (expected linear or rbf)");
}

/// K(a, b) = exp(-|a - b|^2 / (2 sigma^2)) for rbf, a.b for linear.
/// sigma <= 0 asks svr_fit to pick it from the data (see rbf_sigma_heuristic).
struct SvrSpec {
  double C = 1.0;
  double epsilon = 0.1;
  KernelKind kernel = KernelKind::linear;
  double sigma = 0.0;

  void validate() const {
    if (!(C > 0.0) || !std::isfinite(C)) throw ParameterError("SVR: C must be positive");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ParameterError("SVR: epsilon must be >= 0");
    if (kernel == KernelKind::rbf && !(sigma > 0.0)) throw ParameterError("SVR: rbf kernel needs sigma > 0");
  }
};

struct SvrOptions {
  double tolerance = 1e-3;  // stop when the maximal KKT violating pair gap drops below this
  std::size_t max_iterations = 0;  // 0: max(10^7, 100 n)
};

inline double kernel_eval(std::span<const double> a, std::span<const double> b, const SvrSpec& spec) {
  if (a.size() != b.size()) {
    throw DimensionError("kernel_eval: vectors of length " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  if (spec.kernel == KernelKind::linear) return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  if (!(spec.sigma > 0.0)) throw ParameterError("kernel_eval: rbf needs sigma > 0");
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-d2 / (2.0 * spec.sigma * spec.sigma));
}

/// gamma = 1 / (n_features * var(X)) over all entries, expressed as sigma
/// through gamma = 1 / (2 sigma^2). A constant X gives gamma = 1.
inline double rbf_sigma_heuristic(const Tensor& X) {
  const std::size_t d = X.dim(1);
  const auto& v = X.values();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double gamma = var > 0.0 ? 1.0 / (static_cast<double>(d) * var) : 1.0;
  return std::sqrt(1.0 / (2.0 * gamma));
}

struct SvrModel {
  SvrSpec spec;  // sigma resolved
  Tensor support_vectors;  // [n_sv x d]; empty when no coefficient is non-zero
  std::vector<double> coef;  // alpha_i - alpha_i*
  double bias = 0.0;
  std::size_t features = 0;
};

/// Full dual solution in the caller's sample order.
struct SvrSolution {
  std::vector<double> alpha, alpha_star;
  double bias = 0.0;
  std::size_t iterations = 0;
  bool converged = true;
  SvrSpec spec;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::MatrixXd gram(const RowMatrix& X, const SvrSpec& spec) {
  Eigen::MatrixXd K = X * X.transpose();
  if (spec.kernel == KernelKind::rbf) {
    const Eigen::VectorXd sq = K.diagonal();
    const double inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
      for (Eigen::Index i = 0; i < K.rows(); ++i) K(i, j) = std::exp(-std::max(0.0, sq(i) + sq(j) - 2.0 * K(i, j)) * inv);
    }
    K.diagonal().setOnes();
  }
  return K;
}

// Lexicographic order on (x, y); ties keep input order. Solving in this order
// makes the result independent of how the caller shuffled the samples.
inline std::vector<std::size_t> canonical_order(const Tensor& X, const std::vector<double>& y) {
  const std::size_t n = X.dim(0), d = X.dim(1);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t c = 0; c < d; ++c) {
      if (X.at(a, c) != X.at(b, c)) return X.at(a, c) < X.at(b, c);
    }
    return y[a] < y[b];
  });
  return idx;
}

inline void check_inputs(const Tensor& X, const std::vector<double>& y) {
  if (X.rank() != 2) throw DimensionError("svr_fit: X must be [samples x features], got " + shape_str(X.shape()));
  if (X.dim(0) != y.size()) {
    throw DimensionError("svr_fit: X has " + std::to_string(X.dim(0)) + " rows but y has " + std::to_string(y.size()));
  }
  if (y.size() < 2) throw ParameterError("svr_fit: need at least 2 samples");
  if (!X.all_finite()) throw NumericError("svr_fit: non-finite feature value");
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("svr_fit: non-finite target");
  }
}

}  // namespace detail

/// Solves the epsilon-SVR dual
///   min 1/2 (a - a*)' K (a - a*) + eps sum(a + a*) - y'(a - a*)
///   s.t. sum(a - a*) = 0, 0 <= a, a* <= C
/// by SMO on the 2n stacked variables with second-order working-set selection.
inline SvrSolution svr_solve(const Tensor& X, const std::vector<double>& y, SvrSpec spec, const SvrOptions& opt = {}) {
  detail::check_inputs(X, y);
  if (spec.kernel == KernelKind::rbf && !(spec.sigma > 0.0)) spec.sigma = rbf_sigma_heuristic(X);
  spec.validate();
  const std::size_t n = y.size(), d = X.dim(1);
  SvrSolution sol;
  sol.spec = spec;
  sol.alpha.assign(n, 0.0);
  sol.alpha_star.assign(n, 0.0);

  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  if (std::all_of(y.begin(), y.end(), [&](double v) { return std::abs(v - mean) <= spec.epsilon; })) {
    sol.bias = mean;
    return sol;
  }

  const std::vector<std::size_t> order = detail::canonical_order(X, y);
  detail::RowMatrix Xs(n, d);
  std::vector<double> ys(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) Xs(r, c) = X.at(order[r], c);
    ys[r] = y[order[r]];
  }
  const Eigen::MatrixXd K = detail::gram(Xs, spec);

  // variable t < n is alpha_t (sign +1), t >= n is alpha*_{t-n} (sign -1)
  const std::size_t l = 2 * n;
  const double C = spec.C, tau = 1e-12;
  std::vector<double> a(l, 0.0), G(l);
  std::vector<signed char> s(l);
  for (std::size_t t = 0; t < n; ++t) {
    s[t] = 1;
    s[t + n] = -1;
    G[t] = spec.epsilon - ys[t];
    G[t + n] = spec.epsilon + ys[t];
  }
  auto k = [&](std::size_t t) { return t < n ? t : t - n; };
  auto Q = [&](std::size_t i, std::size_t j) { return static_cast<double>(s[i] * s[j]) * K(k(i), k(j)); };
  auto upper = [&](std::size_t t) { return a[t] >= C; };
  auto lower = [&](std::size_t t) { return a[t] <= 0.0; };

  const std::size_t max_iter = opt.max_iterations ? opt.max_iterations : std::max<std::size_t>(10'000'000, 100 * l);
  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity(), gmax2 = gmax;
    std::ptrdiff_t ii = -1, jj = -1;
    for (std::size_t t = 0; t < l; ++t) {
      if (s[t] == 1 ? !upper(t) : !lower(t)) {
        const double v = -s[t] * G[t];
        if (v >= gmax) {
          gmax = v;
          ii = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    if (ii < 0) break;
    const std::size_t i = static_cast<std::size_t>(ii);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < l; ++t) {
      if (s[t] == 1 ? lower(t) : upper(t)) continue;
      const double v = s[t] * G[t];
      gmax2 = std::max(gmax2, v);
      const double diff = gmax + v;
      if (diff > 0.0) {
        const double quad = K(k(i), k(i)) + K(k(t), k(t)) - 2.0 * K(k(i), k(t));
        const double obj = -(diff * diff) / (quad > 0.0 ? quad : tau);
        if (obj <= best) {
          best = obj;
          jj = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    if (gmax + gmax2 < opt.tolerance || jj < 0) break;
    const std::size_t j = static_cast<std::size_t>(jj);

    const double ai = a[i], aj = a[j];
    const double qii = K(k(i), k(i)), qjj = K(k(j), k(j)), qij = Q(i, j);
    if (s[i] != s[j]) {
      double quad = qii + qjj + 2.0 * qij;
      if (quad <= 0.0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = a[i] - a[j];
      a[i] += delta;
      a[j] += delta;
      if (diff > 0.0) {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = diff;
        }
      } else if (a[i] < 0.0) {
        a[i] = 0.0;
        a[j] = -diff;
      }
      if (diff > 0.0) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = C - diff;
        }
      } else if (a[j] > C) {
        a[j] = C;
        a[i] = C + diff;
      }
    } else {
      double quad = qii + qjj - 2.0 * qij;
      if (quad <= 0.0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = a[i] + a[j];
      a[i] -= delta;
      a[j] += delta;
      if (sum > C) {
        if (a[i] > C) {
          a[i] = C;
          a[j] = sum - C;
        }
        if (a[j] > C) {
          a[j] = C;
          a[i] = sum - C;
        }
      } else {
        if (a[j] < 0.0) {
          a[j] = 0.0;
          a[i] = sum;
        }
        if (a[i] < 0.0) {
          a[i] = 0.0;
          a[j] = sum;
        }
      }
    }
    const double di = a[i] - ai, dj = a[j] - aj;
    for (std::size_t t = 0; t < l; ++t) G[t] += Q(i, t) * di + Q(j, t) * dj;
  }
  sol.iterations = iter;
  sol.converged = iter < max_iter;

  // bias: average of s*G over free variables, else the middle of the feasible interval
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, free_sum = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < l; ++t) {
    const double yg = s[t] * G[t];
    if (upper(t)) {
      if (s[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (s[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      free_sum += yg;
    }
  }
  const double rho = n_free > 0 ? free_sum / static_cast<double>(n_free) : 0.5 * (ub + lb);
  sol.bias = -rho;
  for (std::size_t r = 0; r < n; ++r) {
    sol.alpha[order[r]] = a[r];
    sol.alpha_star[order[r]] = a[r + n];
  }
  return sol;
}

inline SvrModel svr_model_from_solution(const Tensor& X, const SvrSolution& sol) {
  SvrModel m;
  m.spec = sol.spec;
  m.bias = sol.bias;
  m.features = X.dim(1);
  std::vector<std::size_t> sv;
  for (std::size_t i = 0; i < sol.alpha.size(); ++i) {
    if (sol.alpha[i] - sol.alpha_star[i] != 0.0) sv.push_back(i);
  }
  if (!sv.empty()) {
    m.support_vectors = Tensor({sv.size(), m.features});
    for (std::size_t r = 0; r < sv.size(); ++r) {
      for (std::size_t c = 0; c < m.features; ++c) m.support_vectors.at(r, c) = X.at(sv[r], c);
      m.coef.push_back(sol.alpha[sv[r]] - sol.alpha_star[sv[r]]);
    }
  }
  return m;
}

inline SvrModel svr_fit(const Tensor& X, const std::vector<double>& y, const SvrSpec& spec, const SvrOptions& opt = {}) {
  const SvrSolution sol = svr_solve(X, y, spec, opt);
  if (!sol.converged) throw TrainingError("svr_fit: SMO hit the iteration limit before reaching tolerance");
  return svr_model_from_solution(X, sol);
}

inline double svr_predict(const SvrModel& m, std::span<const double> x) {
  if (x.size() != m.features) {
    throw DimensionError("svr_predict: model expects " + std::to_string(m.features) + " features, got " +
                         std::to_string(x.size()));
  }
  double f = m.bias;
  for (std::size_t r = 0; r < m.coef.size(); ++r) {
    const double* row = m.support_vectors.data().data() + r * m.features;
    f += m.coef[r] * kernel_eval({row, m.features}, x, m.spec);
  }
  return f;
}

/// Predictions for every row of X [samples x features].
inline std::vector<double> svr_predict(const SvrModel& m, const Tensor& X) {
  if (X.rank() != 2) throw DimensionError("svr_predict: X must be [samples x features]");
  std::vector<double> out(X.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = svr_predict(m, X.data().subspan(r * X.dim(1), X.dim(1)));
  return out;
}

/// Largest violation of the optimality conditions of `sol` on (X, y):
/// box constraints, sum(a - a*) = 0, and for each sample with f = prediction
///   a  < C needs y - f <= eps,  a  > 0 needs y - f >= eps,
///   a* < C needs f - y <= eps,  a* > 0 needs f - y >= eps.
inline double max_kkt_violation(const Tensor& X, const std::vector<double>& y, const SvrSolution& sol) {
  const SvrModel m = svr_model_from_solution(X, sol);
  const double C = sol.spec.C, eps = sol.spec.epsilon;
  double worst = 0.0, balance = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = sol.alpha[i], as = sol.alpha_star[i];
    worst = std::max({worst, -a, -as, a - C, as - C});
    balance += a - as;
    const double r = y[i] - svr_predict(m, X.data().subspan(i * X.dim(1), X.dim(1)));
    if (a < C) worst = std::max(worst, r - eps);
    if (a > 0.0) worst = std::max(worst, eps - r);
    if (as < C) worst = std::max(worst, -r - eps);
    if (as > 0.0) worst = std::max(worst, eps + r);
  }
  return std::max(worst, std::abs(balance));
}

inline nlohmann::json svr_to_json(const SvrModel& m) {
  nlohmann::json j{{"kind", "svr"},
                   {"C", m.spec.C},
                   {"epsilon", m.spec.epsilon},
                   {"kernel", to_string(m.spec.kernel)},
                   {"sigma", m.spec.sigma},
                   {"features", m.features},
                   {"bias", m.bias},
                   {"coef", m.coef}};
  j["support_vectors"] = m.coef.empty() ? std::vector<double>{} : m.support_vectors.values();
  return j;
}

inline SvrModel svr_from_json(const nlohmann::json& j) {
  SvrModel m;
  m.spec.C = j.at("C").get<double>();
  m.spec.epsilon = j.at("epsilon").get<double>();
  m.spec.kernel = parse_kernel(j.at("kernel").get<std::string>());
  m.spec.sigma = j.at("sigma").get<double>();
  m.features = j.at("features").get<std::size_t>();
  m.bias = j.at("bias").get<double>();
  m.coef = j.at("coef").get<std::vector<double>>();
  auto sv = j.at("support_vectors").get<std::vector<double>>();
  if (sv.size() != m.coef.size() * m.features) throw DimensionError("svr_from_json: support vector block has wrong size");
  if (!m.coef.empty()) m.support_vectors = Tensor({m.coef.size(), m.features}, std::move(sv));
  return m;
}

}  // namespace snowcast::svr
