#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>

#include "snowcast/core/rng.hpp"
#include "snowcast/data/table.hpp"

namespace snowcast::data {

struct SyntheticConfig {
  std::size_t days = 2000;
  std::uint64_t seed = 42;
  Date start = Date{std::chrono::year{2000} / 1 / 1};
  double discharge_noise = 0.05;  // std of the innovation added to Q each day
  double recession = 0.75;        // share of yesterday's discharge carried over
  double melt_rate = 1.5;         // discharge per degree above the melt threshold at full snow cover
};

struct SyntheticData {
  TimeSeriesTable daily;  // T, P, Q, SCA
  TimeSeriesTable sca8;   // SCA8: 8-day means, dated at the start of each period
};

/// Snowmelt-driven toy basin:
///   T    seasonal sinusoid plus AR(1) anomaly
///   SCA  seasonal snow fraction, shrinking on warm anomalies
///   P    seasonal wet-day occurrence with exponential amounts
///   Q_t = recession Q_{t-1} + melt_rate max(T_{t-1} - 1, 0) SCA_{t-1} + 0.2 P_{t-1} + 0.5 + noise
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.days < 16) throw ParameterError("generate_synthetic: need at least 16 days");
  Rng rng(cfg.seed);
  SyntheticData out;
  TimeSeriesTable& t = out.daily;
  auto& T = t.columns["T"];
  auto& P = t.columns["P"];
  auto& Q = t.columns["Q"];
  auto& S = t.columns["SCA"];
  double anomaly = 0.0, snow_noise = 0.0, q = 4.0;
  for (std::size_t d = 0; d < cfg.days; ++d) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(d) / 365.25;
    const double season = std::sin(phase - std::numbers::pi / 2.0);  // -1 in January, +1 in July
    anomaly = 0.8 * anomaly + rng.normal(0.0, 1.5);
    const double temp = 3.0 + 9.0 * season + anomaly;
    snow_noise = 0.95 * snow_noise + rng.normal(0.0, 0.015);
    const double sca = std::clamp(0.5 - 0.35 * season - 0.02 * anomaly + snow_noise, 0.05, 0.95);
    const double wet = 0.1 + 0.5 * std::max(0.0, std::sin(phase - std::numbers::pi / 3.0));
    double precip = 0.0;
    if (rng.uniform() < wet) precip = -5.0 * std::log(1.0 - rng.uniform());
    if (d > 0) {
      const double melt = std::max(T.back() - 1.0, 0.0) * S.back();
      q = cfg.recession * q + cfg.melt_rate * melt + 0.2 * P.back() + 0.5 + rng.normal(0.0, cfg.discharge_noise);
    }
    t.dates.push_back(cfg.start + std::chrono::days{static_cast<long>(d)});
    T.push_back(temp);
    P.push_back(precip);
    Q.push_back(q);
    S.push_back(sca);
  }
  auto& s8 = out.sca8.columns["SCA8"];
  for (std::size_t d = 0; d < cfg.days; d += 8) {
    const std::size_t end = std::min(cfg.days, d + 8);
    double m = 0.0;
    for (std::size_t k = d; k < end; ++k) m += S[k];
    out.sca8.dates.push_back(t.dates[d]);
    s8.push_back(m / static_cast<double>(end - d));
  }
  return out;
}

}  // namespace snowcast::data
