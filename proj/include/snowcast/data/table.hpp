#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "snowcast/core/errors.hpp"

namespace snowcast::data {

using Date = std::chrono::sys_days;

/// Strict YYYY-MM-DD.
inline std::optional<Date> parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return ec == std::errc{} && p == s.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

inline long days_between(Date a, Date b) { return (b - a).count(); }

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ContractError("format_double: conversion failed");
  return std::string(buf, p);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

/// Dated numeric columns. Dates are strictly increasing after loading.
struct TimeSeriesTable {
  std::vector<Date> dates;
  std::map<std::string, std::vector<double>> columns;

  std::size_t size() const { return dates.size(); }
  bool has(const std::string& name) const { return columns.count(name) != 0; }

  const std::vector<double>& column(const std::string& name) const {
    auto it = columns.find(name);
    if (it == columns.end()) throw SchemaError("table has no column " + name);
    return it->second;
  }

  /// True when consecutive dates are exactly one day apart.
  bool gap_free() const {
    for (std::size_t i = 1; i < dates.size(); ++i) {
      if (days_between(dates[i - 1], dates[i]) != 1) return false;
    }
    return true;
  }
};

inline const std::vector<std::string>& standard_columns() {
  static const std::vector<std::string> cols{"T", "P", "Q", "SCA"};
  return cols;
}

/// Reads a dated CSV. `required` names the value columns that must appear
/// (any order, extra columns ignored). Rows are sorted by date; duplicate
/// dates are rejected.
inline TimeSeriesTable read_dated_csv(const std::filesystem::path& path, const std::vector<std::string>& required) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string where = path.string();
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(where + ": empty file, expected a header row");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> pos;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(header[c]);
    if (pos.count(name)) throw SchemaError(where + ": duplicate column " + name);
    pos[name] = c;
  }
  if (!pos.count("date")) throw SchemaError(where + ": missing column date");
  for (const std::string& col : required) {
    if (!pos.count(col)) throw SchemaError(where + ": missing column " + col);
  }

  struct Row {
    Date date;
    std::vector<double> values;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(where + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " cells, found " + std::to_string(cells.size()));
    }
    const auto date = parse_date(cells[pos["date"]]);
    if (!date) {
      throw ParseError(where + ":" + std::to_string(line_no) + ": column date: cannot parse '" +
                       std::string(cells[pos["date"]]) + "' as YYYY-MM-DD");
    }
    Row r{*date, {}, line_no};
    for (const std::string& col : required) {
      const auto v = parse_double(cells[pos[col]]);
      if (!v) {
        throw ParseError(where + ":" + std::to_string(line_no) + ": column " + col + ": cannot parse '" +
                         std::string(cells[pos[col]]) + "' as a number");
      }
      r.values.push_back(*v);
    }
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.date < b.date; });
  TimeSeriesTable t;
  for (const std::string& col : required) t.columns[col].reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].date == rows[i - 1].date) {
      throw DataError(where + ": duplicate date " + format_date(rows[i].date) + " (lines " +
                      std::to_string(rows[i - 1].line) + " and " + std::to_string(rows[i].line) + ")");
    }
    t.dates.push_back(rows[i].date);
    for (std::size_t c = 0; c < required.size(); ++c) t.columns[required[c]].push_back(rows[i].values[c]);
  }
  return t;
}

/// Daily input table with header date,T,P,Q,SCA.
inline TimeSeriesTable load_csv(const std::filesystem::path& path) { return read_dated_csv(path, standard_columns()); }

/// Writes date plus the given columns (all columns when empty), shortest
/// round-trip number formatting.
inline void write_csv(const TimeSeriesTable& t, const std::filesystem::path& path,
                      std::vector<std::string> cols = {}) {
  if (cols.empty()) {
    for (const auto& [name, _] : t.columns) cols.push_back(name);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "date";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << format_date(t.dates[i]);
    for (const auto& c : cols) out << ',' << format_double(t.column(c)[i]);
    out << '\n';
  }
}

}  // namespace snowcast::data
