#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "snowcast/core/errors.hpp"
#include "snowcast/data/table.hpp"

namespace snowcast::data {

enum class SplineEnd {
  not_a_knot,  // third derivative continuous at the second and second-to-last knots
  natural,     // zero second derivative at both ends
};

/// Interpolating cubic spline, linear beyond the end knots (slope taken from
/// the end segments).
class CubicSpline {
 public:
  CubicSpline(std::vector<double> x, std::vector<double> y, SplineEnd end = SplineEnd::not_a_knot)
      : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n != y_.size()) throw DimensionError("CubicSpline: " + std::to_string(n) + " knots but " +
                                             std::to_string(y_.size()) + " values");
    if (n < 4) throw ParameterError("CubicSpline: need at least 4 knots, got " + std::to_string(n));
    for (std::size_t i = 1; i < n; ++i) {
      if (!(x_[i] > x_[i - 1])) throw ParameterError("CubicSpline: knots must be strictly increasing");
    }
    solve(end);
  }

  double operator()(double t) const {
    const std::size_t n = x_.size();
    if (t <= x_.front()) return y_.front() + slope_left_ * (t - x_.front());
    if (t >= x_.back()) return y_.back() + slope_right_ * (t - x_.back());
    const std::size_t i = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), t) - x_.begin()) - 1;
    if (i + 1 >= n) return y_.back();
    const double h = x_[i + 1] - x_[i], a = (x_[i + 1] - t) / h, b = (t - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
  }

  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& second_derivatives() const { return m_; }

 private:
  void solve(SplineEnd end) {
    const std::size_t n = x_.size();
    std::vector<double> h(n - 1), d(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      d[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    // unknowns: second derivatives M_0..M_{n-1}
    using Trip = Eigen::Triplet<double>;
    std::vector<Trip> trips;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const auto I = [](std::size_t i) { return static_cast<Eigen::Index>(i); };
    if (end == SplineEnd::natural) {
      trips.emplace_back(0, 0, 1.0);
      trips.emplace_back(I(n - 1), I(n - 1), 1.0);
    } else {
      // (M1 - M0)/h0 = (M2 - M1)/h1, and the mirror image at the right end
      trips.emplace_back(0, 0, h[1]);
      trips.emplace_back(0, 1, -(h[0] + h[1]));
      trips.emplace_back(0, 2, h[0]);
      trips.emplace_back(I(n - 1), I(n - 3), h[n - 2]);
      trips.emplace_back(I(n - 1), I(n - 2), -(h[n - 3] + h[n - 2]));
      trips.emplace_back(I(n - 1), I(n - 1), h[n - 3]);
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
      trips.emplace_back(I(i), I(i - 1), h[i - 1]);
      trips.emplace_back(I(i), I(i), 2.0 * (h[i - 1] + h[i]));
      trips.emplace_back(I(i), I(i + 1), h[i]);
      rhs(I(i)) = 6.0 * (d[i] - d[i - 1]);
    }
    Eigen::SparseMatrix<double> A(I(n), I(n));
    A.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) throw NumericError("CubicSpline: singular system");
    const Eigen::VectorXd M = lu.solve(rhs);
    m_.assign(M.data(), M.data() + n);
    slope_left_ = d[0] - h[0] * (2.0 * m_[0] + m_[1]) / 6.0;
    slope_right_ = d[n - 2] + h[n - 2] * (m_[n - 2] + 2.0 * m_[n - 1]) / 6.0;
  }

  std::vector<double> x_, y_, m_;
  double slope_left_ = 0.0, slope_right_ = 0.0;
};

/// Interpolates 8-day SCA samples onto `targets`. Targets may reach past the
/// knot range by at most one knot interval.
inline std::vector<double> spline_daily_sca(const std::vector<Date>& knot_dates, const std::vector<double>& sca,
                                            const std::vector<Date>& targets, SplineEnd end = SplineEnd::not_a_knot) {
  if (knot_dates.size() != sca.size()) throw DimensionError("spline_daily_sca: dates and values differ in length");
  if (knot_dates.size() < 4) {
    throw ParameterError("spline_daily_sca: need at least 4 SCA samples, got " + std::to_string(knot_dates.size()));
  }
  std::vector<double> x;
  x.reserve(knot_dates.size());
  for (Date d : knot_dates) x.push_back(static_cast<double>(d.time_since_epoch().count()));
  CubicSpline s(x, sca, end);
  double max_gap = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) max_gap = std::max(max_gap, x[i] - x[i - 1]);
  std::vector<double> out;
  out.reserve(targets.size());
  for (Date d : targets) {
    const double t = static_cast<double>(d.time_since_epoch().count());
    if (t < x.front() - max_gap || t > x.back() + max_gap) {
      throw ParameterError("spline_daily_sca: " + format_date(d) + " lies too far outside the SCA sample range " +
                           format_date(knot_dates.front()) + " .. " + format_date(knot_dates.back()));
    }
    out.push_back(s(t));
  }
  return out;
}

/// Reads the 8-day sidecar (header date,SCA8).
inline TimeSeriesTable load_sca8(const std::filesystem::path& path) { return read_dated_csv(path, {"SCA8"}); }

/// Fills (or replaces) the SCA column of a daily table from 8-day samples.
inline TimeSeriesTable merge_splined_sca(TimeSeriesTable daily, const TimeSeriesTable& sca8,
                                         SplineEnd end = SplineEnd::not_a_knot) {
  daily.columns["SCA"] = spline_daily_sca(sca8.dates, sca8.column("SCA8"), daily.dates, end);
  return daily;
}

}  // namespace snowcast::data
