#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>

#include "snowcast/core/errors.hpp"

namespace snowcast::metrics {

using Series = std::span<const double>;

namespace detail {

inline void check_pair(Series obs, Series sim, const char* who) {
  if (obs.size() != sim.size()) {
    throw ContractError(std::string(who) + ": observed has " + std::to_string(obs.size()) + " values, simulated " +
                        std::to_string(sim.size()));
  }
  if (obs.empty()) throw ContractError(std::string(who) + ": empty series");
}

inline double mean(Series x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double sum_sq_dev(Series x, double m) {
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s;
}

}  // namespace detail

/// Population standard deviation (divide by n).
inline double population_std(Series x) {
  if (x.empty()) throw ContractError("population_std: empty series");
  return std::sqrt(detail::sum_sq_dev(x, detail::mean(x)) / static_cast<double>(x.size()));
}

inline double mae(Series obs, Series sim) {
  detail::check_pair(obs, sim, "mae");
  double s = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) s += std::abs(obs[t] - sim[t]);
  return s / static_cast<double>(obs.size());
}

inline double rmse(Series obs, Series sim) {
  detail::check_pair(obs, sim, "rmse");
  double s = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) s += (sim[t] - obs[t]) * (sim[t] - obs[t]);
  return std::sqrt(s / static_cast<double>(obs.size()));
}

/// Pearson correlation; either series constant is undefined.
inline double pearson(Series obs, Series sim) {
  detail::check_pair(obs, sim, "pearson");
  const double mo = detail::mean(obs), ms = detail::mean(sim);
  double cov = 0.0, so = 0.0, ss = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    cov += (sim[t] - ms) * (obs[t] - mo);
    so += (obs[t] - mo) * (obs[t] - mo);
    ss += (sim[t] - ms) * (sim[t] - ms);
  }
  // the floating-point mean of a constant series need not equal its value, so
  // constancy is tested on the elements themselves
  const auto constant = [](Series x) { return std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }); };
  if (so == 0.0 || constant(obs)) throw UndefinedMetricError("correlation undefined: observed series is constant");
  if (ss == 0.0 || constant(sim)) throw UndefinedMetricError("correlation undefined: simulated series is constant");
  return std::clamp(cov / std::sqrt(ss * so), -1.0, 1.0);
}

inline double r_squared(Series obs, Series sim) {
  const double r = pearson(obs, sim);
  return r * r;
}

inline double nse(Series obs, Series sim) {
  detail::check_pair(obs, sim, "nse");
  const double denom = detail::sum_sq_dev(obs, detail::mean(obs));
  if (denom == 0.0) throw UndefinedMetricError("NSE undefined: observed series is constant");
  double num = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) num += (obs[t] - sim[t]) * (obs[t] - sim[t]);
  return 1.0 - num / denom;
}

struct KgeResult {
  double value = 0.0;
  double r = 0.0;      // Pearson correlation
  double beta = 0.0;   // mean(sim) / mean(obs)
  double gamma = 0.0;  // CV(sim) / CV(obs)
};

/// 1 - sqrt((r-1)^2 + (beta-1)^2 + (gamma-1)^2), CV = population std / mean.
inline KgeResult kge(Series obs, Series sim) {
  detail::check_pair(obs, sim, "kge");
  const double mo = detail::mean(obs), ms = detail::mean(sim);
  if (mo == 0.0) throw UndefinedMetricError("KGE undefined: observed mean is zero");
  if (ms == 0.0) throw UndefinedMetricError("KGE undefined: simulated mean is zero");
  KgeResult k;
  k.r = pearson(obs, sim);
  k.beta = ms / mo;
  const double cv_o = population_std(obs) / mo, cv_s = population_std(sim) / ms;
  k.gamma = cv_s / cv_o;
  k.value = 1.0 - std::sqrt((k.r - 1.0) * (k.r - 1.0) + (k.beta - 1.0) * (k.beta - 1.0) +
                            (k.gamma - 1.0) * (k.gamma - 1.0));
  return k;
}

struct MetricReport {
  double mae = 0.0, rmse = 0.0, r2 = 0.0, kge = 0.0, nse = 0.0;
  KgeResult kge_parts;
  std::size_t n = 0;
};

inline MetricReport evaluate_all(Series obs, Series sim) {
  MetricReport m;
  m.mae = mae(obs, sim);
  m.rmse = rmse(obs, sim);
  m.r2 = r_squared(obs, sim);
  m.nse = nse(obs, sim);
  m.kge_parts = kge(obs, sim);
  m.kge = m.kge_parts.value;
  m.n = obs.size();
  return m;
}

/// As evaluate_all, but a metric that is undefined for this pair (constant
/// predictions, zero means) is reported as NaN instead of throwing.
inline MetricReport evaluate_all_or_nan(Series obs, Series sim) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const auto guarded = [nan](auto f) {
    try {
      return f();
    } catch (const UndefinedMetricError&) {
      return nan;
    }
  };
  MetricReport m;
  m.mae = mae(obs, sim);
  m.rmse = rmse(obs, sim);
  m.r2 = guarded([&] { return r_squared(obs, sim); });
  m.nse = guarded([&] { return nse(obs, sim); });
  try {
    m.kge_parts = kge(obs, sim);
  } catch (const UndefinedMetricError&) {
    m.kge_parts = {nan, guarded([&] { return pearson(obs, sim); }), nan, nan};
  }
  m.kge = m.kge_parts.value;
  m.n = obs.size();
  return m;
}

}  // namespace snowcast::metrics
