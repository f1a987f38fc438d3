#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/tensor.hpp"
#include "snowcast/data/table.hpp"

namespace snowcast::data {

enum class FeatureSet { M1, M2 };

inline std::string to_string(FeatureSet f) { return f == FeatureSet::M1 ? "M1" : "M2"; }

inline FeatureSet parse_feature_set(const std::string& s) {
  if (s == "M1" || s == "m1") return FeatureSet::M1;
  if (s == "M2" || s == "m2") return FeatureSet::M2;
  throw ParameterError("unknown feature set '" + s + "' (expected M1 or M2)");
}

/// M1 = T, Q, SCA, P; M2 drops P.
inline std::vector<std::string> feature_columns(FeatureSet f) {
  if (f == FeatureSet::M1) return {"T", "Q", "SCA", "P"};
  return {"T", "Q", "SCA"};
}

/// Supervised framing of a table: sample i reads `window` consecutive days and
/// targets the following day.
struct WindowedDataset {
  Tensor inputs;  // [samples x window x features]
  std::vector<double> targets;
  std::vector<Date> target_dates;
  std::vector<std::size_t> first_row;  // table row of each window's first day
  std::vector<std::string> features;
  std::string target;
  std::size_t window = 0;

  std::size_t size() const { return targets.size(); }
  std::size_t feature_count() const { return features.size(); }
  Shape sample_shape() const { return {window, features.size()}; }
};

inline WindowedDataset make_windows(const TimeSeriesTable& table, FeatureSet set, std::size_t window = 2,
                                    const std::string& target = "Q") {
  if (window == 0) throw ParameterError("make_windows: window must be positive");
  if (table.size() < window + 1) {
    throw ParameterError("make_windows: table has " + std::to_string(table.size()) + " rows, window " +
                         std::to_string(window) + " needs at least " + std::to_string(window + 1));
  }
  WindowedDataset ds;
  ds.features = feature_columns(set);
  ds.target = target;
  ds.window = window;
  std::vector<const std::vector<double>*> cols;
  for (const auto& f : ds.features) cols.push_back(&table.column(f));
  const std::vector<double>& y = table.column(target);

  std::vector<double> buf;
  const std::size_t nf = ds.features.size();
  for (std::size_t s = 0; s + window < table.size(); ++s) {
    // skip windows whose days (inputs plus target) are not consecutive
    if (days_between(table.dates[s], table.dates[s + window]) != static_cast<long>(window)) continue;
    for (std::size_t w = 0; w < window; ++w) {
      for (std::size_t f = 0; f < nf; ++f) buf.push_back((*cols[f])[s + w]);
    }
    ds.targets.push_back(y[s + window]);
    ds.target_dates.push_back(table.dates[s + window]);
    ds.first_row.push_back(s);
  }
  if (ds.targets.empty()) throw ParameterError("make_windows: no run of " + std::to_string(window + 1) + " consecutive days");
  ds.inputs = Tensor({ds.targets.size(), window, nf}, std::move(buf));
  return ds;
}

/// Records which sample indices each phase of an experiment materialised.
class AccessAudit {
 public:
  void record(const std::string& phase, const std::vector<std::size_t>& idx) {
    auto& v = log_[phase];
    v.insert(v.end(), idx.begin(), idx.end());
  }
  const std::map<std::string, std::vector<std::size_t>>& log() const { return log_; }
  std::vector<std::size_t> touched(const std::string& phase) const {
    auto it = log_.find(phase);
    return it == log_.end() ? std::vector<std::size_t>{} : it->second;
  }
  void clear() { log_.clear(); }

 private:
  std::map<std::string, std::vector<std::size_t>> log_;
};

/// Copies the selected samples, in the given order.
inline WindowedDataset subset(const WindowedDataset& ds, const std::vector<std::size_t>& idx,
                              AccessAudit* audit = nullptr, const std::string& phase = "") {
  if (idx.empty()) throw ParameterError("subset: empty index set");
  if (audit) audit->record(phase, idx);
  WindowedDataset out;
  out.features = ds.features;
  out.target = ds.target;
  out.window = ds.window;
  const std::size_t per = ds.window * ds.features.size();
  std::vector<double> buf;
  buf.reserve(idx.size() * per);
  for (std::size_t i : idx) {
    if (i >= ds.size()) throw LookupError("subset: sample " + std::to_string(i) + " out of range");
    const auto src = ds.inputs.data().subspan(i * per, per);
    buf.insert(buf.end(), src.begin(), src.end());
    out.targets.push_back(ds.targets[i]);
    out.target_dates.push_back(ds.target_dates[i]);
    out.first_row.push_back(ds.first_row[i]);
  }
  out.inputs = Tensor({idx.size(), ds.window, ds.features.size()}, std::move(buf));
  return out;
}

/// Windows flattened to [samples x (window * features)] for SVR.
inline Tensor flatten_inputs(const WindowedDataset& ds) {
  return ds.inputs.reshaped({ds.size(), ds.window * ds.features.size()});
}

}  // namespace snowcast::data
