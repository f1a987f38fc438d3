#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "snowcast/core/errors.hpp"
#include "snowcast/data/windows.hpp"

namespace snowcast::data {

enum class ScalingMode {
  per_fold,  // fit on each fold's training samples only
  global,    // fit once on every sample before splitting
};

inline std::string to_string(ScalingMode m) { return m == ScalingMode::per_fold ? "per-fold" : "global"; }

inline ScalingMode parse_scaling_mode(const std::string& s) {
  if (s == "per-fold" || s == "per_fold") return ScalingMode::per_fold;
  if (s == "global") return ScalingMode::global;
  throw ParameterError("unknown scaling mode '" + s + "' (expected per-fold or global)");
}

/// Min-max scaling (x - xmin) / (xmax - xmin) per column; a constant column
/// maps to 0.
struct ScalerParams {
  std::vector<std::string> columns;
  std::vector<double> xmin, xmax;

  std::size_t index(const std::string& col) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == col) return i;
    }
    throw LookupError("scaler has no column " + col);
  }

  double apply(std::size_t c, double x) const {
    const double range = xmax[c] - xmin[c];
    return range > 0.0 ? (x - xmin[c]) / range : 0.0;
  }
  double invert(std::size_t c, double m) const { return xmin[c] + m * (xmax[c] - xmin[c]); }

  double apply(const std::string& col, double x) const { return apply(index(col), x); }
  double invert(const std::string& col, double m) const { return invert(index(col), m); }
};

/// Fits on raw values per column.
inline ScalerParams scaler_fit(const std::vector<std::string>& columns, const std::vector<std::vector<double>>& values) {
  if (columns.size() != values.size()) throw DimensionError("scaler_fit: column names and value lists differ");
  ScalerParams p;
  p.columns = columns;
  for (const auto& v : values) {
    if (v.empty()) throw ParameterError("scaler_fit: empty column");
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    p.xmin.push_back(*lo);
    p.xmax.push_back(*hi);
  }
  return p;
}

/// Fits on the table rows of the given samples: every input value, and the
/// target values under the target column.
inline ScalerParams scaler_fit(const WindowedDataset& ds, const std::vector<std::size_t>& samples) {
  if (samples.empty()) throw ParameterError("scaler_fit: no training samples");
  ScalerParams p;
  p.columns = ds.features;
  std::size_t target_col = ds.features.size();
  for (std::size_t f = 0; f < ds.features.size(); ++f) {
    if (ds.features[f] == ds.target) target_col = f;
  }
  if (target_col == ds.features.size()) p.columns.push_back(ds.target);
  const double inf = std::numeric_limits<double>::infinity();
  p.xmin.assign(p.columns.size(), inf);
  p.xmax.assign(p.columns.size(), -inf);
  const std::size_t nf = ds.features.size(), per = ds.window * nf;
  const auto data = ds.inputs.data();
  for (std::size_t i : samples) {
    if (i >= ds.size()) throw LookupError("scaler_fit: sample " + std::to_string(i) + " out of range");
    for (std::size_t k = 0; k < per; ++k) {
      const double v = data[i * per + k];
      p.xmin[k % nf] = std::min(p.xmin[k % nf], v);
      p.xmax[k % nf] = std::max(p.xmax[k % nf], v);
    }
    p.xmin[target_col] = std::min(p.xmin[target_col], ds.targets[i]);
    p.xmax[target_col] = std::max(p.xmax[target_col], ds.targets[i]);
  }
  return p;
}

inline WindowedDataset scaler_apply(const ScalerParams& p, WindowedDataset ds) {
  std::vector<std::size_t> col(ds.features.size());
  for (std::size_t f = 0; f < col.size(); ++f) col[f] = p.index(ds.features[f]);
  const std::size_t nf = col.size();
  auto data = ds.inputs.data();
  for (std::size_t k = 0; k < data.size(); ++k) data[k] = p.apply(col[k % nf], data[k]);
  const std::size_t t = p.index(ds.target);
  for (double& y : ds.targets) y = p.apply(t, y);
  return ds;
}

inline std::vector<double> invert_targets(const ScalerParams& p, const std::string& target, std::vector<double> v) {
  const std::size_t t = p.index(target);
  for (double& y : v) y = p.invert(t, y);
  return v;
}

inline nlohmann::json scaler_to_json(const ScalerParams& p) {
  return {{"columns", p.columns}, {"xmin", p.xmin}, {"xmax", p.xmax}};
}

inline ScalerParams scaler_from_json(const nlohmann::json& j) {
  ScalerParams p;
  p.columns = j.at("columns").get<std::vector<std::string>>();
  p.xmin = j.at("xmin").get<std::vector<double>>();
  p.xmax = j.at("xmax").get<std::vector<double>>();
  if (p.xmin.size() != p.columns.size() || p.xmax.size() != p.columns.size()) {
    throw DimensionError("scaler_from_json: column count mismatch");
  }
  return p;
}

}  // namespace snowcast::data
