#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/data/table.hpp"
#include "snowcast/metrics/metrics.hpp"
#include "snowcast/search/nested_cv.hpp"

namespace snowcast::report {

namespace fs = std::filesystem;

// Folds are numbered from 1 in every emitted file.
struct FoldRow {
  std::string model, feature_set;
  std::size_t fold = 0;
  double mae = 0.0, rmse = 0.0, r2 = 0.0, kge = 0.0, nse = 0.0;
};

struct AverageRow {
  std::string model, feature_set;
  double mae = 0.0, rmse = 0.0, r2 = 0.0, kge = 0.0, nse = 0.0;
};

struct TimingRow {
  std::string model, feature_set;
  double seconds = 0.0;
};

inline const std::string& fold_header() {
  static const std::string h = "model,feature_set,fold,MAE,RMSE,R2,KGE,NSE";
  return h;
}
inline const std::string& averages_header() {
  static const std::string h = "model,feature_set,MAE,RMSE,R2,KGE,NSE";
  return h;
}
inline const std::string& timing_header() {
  static const std::string h = "model,feature_set,testing_time_seconds";
  return h;
}

/// Shortest round-trip text; NaN is written as "nan".
inline std::string format_value(double v) { return std::isnan(v) ? "nan" : data::format_double(v); }

inline double parse_value(std::string_view s, const std::string& where) {
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  const auto v = data::parse_double(s);
  if (!v) throw ParseError(where + ": cannot parse '" + std::string(s) + "' as a number");
  return *v;
}

inline FoldRow fold_row(const std::string& model, const std::string& feature_set, std::size_t fold,
                        const metrics::MetricReport& m) {
  return {model, feature_set, fold, m.mae, m.rmse, m.r2, m.kge, m.nse};
}

inline std::vector<FoldRow> fold_rows(const search::NestedCvResult& r) {
  std::vector<FoldRow> out;
  for (const auto& f : r.folds) out.push_back(fold_row(search::to_string(r.model), r.feature_set, f.fold + 1, f.metrics));
  return out;
}

/// Arithmetic mean per (model, feature_set), in order of first appearance.
inline std::vector<AverageRow> average_rows(const std::vector<FoldRow>& rows) {
  std::vector<AverageRow> out;
  std::vector<std::size_t> counts;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const AverageRow& a) { return a.model == r.model && a.feature_set == r.feature_set; });
    if (it == out.end()) {
      out.push_back({r.model, r.feature_set});
      counts.push_back(0);
      it = out.end() - 1;
    }
    it->mae += r.mae;
    it->rmse += r.rmse;
    it->r2 += r.r2;
    it->kge += r.kge;
    it->nse += r.nse;
    ++counts[static_cast<std::size_t>(it - out.begin())];
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double n = static_cast<double>(counts[i]);
    out[i].mae /= n;
    out[i].rmse /= n;
    out[i].r2 /= n;
    out[i].kge /= n;
    out[i].nse /= n;
  }
  return out;
}

namespace detail {

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

/// Header-checked row reader; calls `row(cells, where)` for every data line.
template <class F>
void read_rows(const fs::path& path, const std::string& header, F row) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || data::trim(line) != header) {
    throw SchemaError(path.string() + ": expected header " + header);
  }
  const std::size_t ncol = data::split_csv_line(header).size();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (data::trim(line).empty()) continue;
    const auto cells = data::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != ncol) {
      throw ParseError(where + ": expected " + std::to_string(ncol) + " cells, found " + std::to_string(cells.size()));
    }
    row(cells, where);
  }
}

inline std::size_t parse_index(std::string_view s, const std::string& where) {
  const double v = parse_value(s, where);
  if (!(v >= 0) || v != std::floor(v)) throw ParseError(where + ": '" + std::string(s) + "' is not an index");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline void write_fold_csv(const fs::path& path, const std::vector<FoldRow>& rows) {
  auto out = detail::open_out(path);
  out << fold_header() << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << r.feature_set << ',' << r.fold << ',' << format_value(r.mae) << ','
        << format_value(r.rmse) << ',' << format_value(r.r2) << ',' << format_value(r.kge) << ','
        << format_value(r.nse) << '\n';
  }
}

inline std::vector<FoldRow> read_fold_csv(const fs::path& path) {
  std::vector<FoldRow> rows;
  detail::read_rows(path, fold_header(), [&](const auto& c, const std::string& w) {
    rows.push_back({std::string(c[0]), std::string(c[1]), detail::parse_index(c[2], w), parse_value(c[3], w),
                    parse_value(c[4], w), parse_value(c[5], w), parse_value(c[6], w), parse_value(c[7], w)});
  });
  return rows;
}

inline void write_averages_csv(const fs::path& path, const std::vector<AverageRow>& rows) {
  auto out = detail::open_out(path);
  out << averages_header() << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << r.feature_set << ',' << format_value(r.mae) << ',' << format_value(r.rmse) << ','
        << format_value(r.r2) << ',' << format_value(r.kge) << ',' << format_value(r.nse) << '\n';
  }
}

inline std::vector<AverageRow> read_averages_csv(const fs::path& path) {
  std::vector<AverageRow> rows;
  detail::read_rows(path, averages_header(), [&](const auto& c, const std::string& w) {
    rows.push_back({std::string(c[0]), std::string(c[1]), parse_value(c[2], w), parse_value(c[3], w),
                    parse_value(c[4], w), parse_value(c[5], w), parse_value(c[6], w)});
  });
  return rows;
}

inline void write_timing_csv(const fs::path& path, const std::vector<TimingRow>& rows) {
  auto out = detail::open_out(path);
  out << timing_header() << '\n';
  for (const auto& r : rows) out << r.model << ',' << r.feature_set << ',' << format_value(r.seconds) << '\n';
}

inline std::vector<TimingRow> read_timing_csv(const fs::path& path) {
  std::vector<TimingRow> rows;
  detail::read_rows(path, timing_header(), [&](const auto& c, const std::string& w) {
    rows.push_back({std::string(c[0]), std::string(c[1]), parse_value(c[2], w)});
  });
  return rows;
}

/// Two-column text table: model name and testing time (6 significant digits).
inline void print_timing_table(std::ostream& os, const std::vector<TimingRow>& rows) {
  const auto short_value = [](double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
  };
  std::size_t width = std::string("Models").size();
  for (const auto& r : rows) width = std::max(width, r.model.size() + 1 + r.feature_set.size());
  os << std::string("Models") + std::string(width - 6 + 2, ' ') << "Testing Time (seconds)\n";
  for (const auto& r : rows) {
    const std::string name = r.model + " " + r.feature_set;
    os << name << std::string(width - name.size() + 2, ' ') << short_value(r.seconds) << '\n';
  }
}

// ---- persisted predictions ------------------------------------------------

struct PredictionSet {
  std::string model, feature_set;
  std::size_t fold = 0;
  std::vector<data::Date> dates;
  std::vector<std::size_t> sample;  // windowed sample index
  std::vector<double> observed, predicted;

  std::size_t size() const { return observed.size(); }
};

inline PredictionSet prediction_set(const std::string& model, const std::string& feature_set,
                                    const search::FoldReport& f) {
  return {model, feature_set, f.fold + 1, f.dates, f.test_index, f.observed, f.predicted};
}

inline fs::path prediction_path(const fs::path& dir, const std::string& model, const std::string& feature_set,
                                std::size_t fold) {
  return dir / "predictions" / (model + "_" + feature_set + "_fold" + std::to_string(fold) + ".csv");
}

inline void write_predictions(const fs::path& path, const PredictionSet& p) {
  if (p.dates.size() != p.size() || p.predicted.size() != p.size() || p.sample.size() != p.size()) {
    throw DimensionError("write_predictions: column lengths differ");
  }
  auto out = detail::open_out(path);
  out << "date,sample,observed,predicted\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    out << data::format_date(p.dates[i]) << ',' << p.sample[i] << ',' << format_value(p.observed[i]) << ','
        << format_value(p.predicted[i]) << '\n';
  }
}

inline PredictionSet read_predictions(const fs::path& path, const std::string& model = {},
                                      const std::string& feature_set = {}, std::size_t fold = 0) {
  PredictionSet p{model, feature_set, fold, {}, {}, {}, {}};
  detail::read_rows(path, "date,sample,observed,predicted", [&](const auto& c, const std::string& w) {
    const auto d = data::parse_date(c[0]);
    if (!d) throw ParseError(w + ": cannot parse '" + std::string(c[0]) + "' as YYYY-MM-DD");
    p.dates.push_back(*d);
    p.sample.push_back(detail::parse_index(c[1], w));
    p.observed.push_back(parse_value(c[2], w));
    p.predicted.push_back(parse_value(c[3], w));
  });
  return p;
}

inline PredictionSet load_predictions(const fs::path& dir, const std::string& model, const std::string& feature_set,
                                      std::size_t fold) {
  const fs::path path = prediction_path(dir, model, feature_set, fold);
  if (!fs::exists(path)) {
    throw LookupError("no predictions for model " + model + ", feature set " + feature_set + ", fold " +
                      std::to_string(fold) + " (looked for " + path.string() + ")");
  }
  return read_predictions(path, model, feature_set, fold);
}

/// Fold rows recomputed from persisted predictions.
inline std::vector<FoldRow> rows_from_predictions(const fs::path& dir, const std::vector<std::string>& models,
                                                  const std::vector<std::string>& feature_sets, std::size_t folds) {
  std::vector<FoldRow> rows;
  for (const auto& m : models) {
    for (const auto& f : feature_sets) {
      for (std::size_t k = 1; k <= folds; ++k) {
        const auto p = load_predictions(dir, m, f, k);
        rows.push_back(fold_row(m, f, k, metrics::evaluate_all_or_nan(p.observed, p.predicted)));
      }
    }
  }
  return rows;
}

inline void write_scatter(const fs::path& path, const PredictionSet& p) {
  auto out = detail::open_out(path);
  out << "observed,predicted\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    out << format_value(p.observed[i]) << ',' << format_value(p.predicted[i]) << '\n';
  }
}

inline std::pair<std::vector<double>, std::vector<double>> read_scatter(const fs::path& path) {
  std::pair<std::vector<double>, std::vector<double>> out;
  detail::read_rows(path, "observed,predicted", [&](const auto& c, const std::string& w) {
    out.first.push_back(parse_value(c[0], w));
    out.second.push_back(parse_value(c[1], w));
  });
  return out;
}

}  // namespace snowcast::report
