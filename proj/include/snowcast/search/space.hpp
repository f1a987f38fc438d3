#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/rng.hpp"

namespace snowcast::search {

using Assignment = nlohmann::json;

enum class ModelKind { svr, lstm, transformer, tcn, persistence, constant };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::svr: return "SVR";
    case ModelKind::lstm: return "LSTM";
    case ModelKind::transformer: return "Transformer";
    case ModelKind::tcn: return "TCN";
    case ModelKind::persistence: return "Persistence";
    case ModelKind::constant: return "Constant";
  }
  return "?";
}

inline ModelKind parse_model(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "svr") return ModelKind::svr;
  if (s == "lstm") return ModelKind::lstm;
  if (s == "transformer") return ModelKind::transformer;
  if (s == "tcn") return ModelKind::tcn;
  if (s == "persistence") return ModelKind::persistence;
  if (s == "constant") return ModelKind::constant;
  throw ParameterError("unknown model '" + s + "' (expected svr, lstm, transformer, tcn, persistence or constant)");
}

struct ParamDomain {
  enum class Kind {
    choice,      // one of `choices`
    int_range,   // lo, lo + step, ..., hi
    real_range,  // uniform on [lo, hi]
    log_range,   // log-uniform on [lo, hi]
    int_list,    // array whose length is the value of `length_from`, entries as int_range
  };
  std::string name;
  Kind kind = Kind::choice;
  std::vector<nlohmann::json> choices;
  double lo = 0.0, hi = 0.0, step = 1.0;
  std::string length_from;

  static ParamDomain choice(std::string n, std::vector<nlohmann::json> c) {
    return {std::move(n), Kind::choice, std::move(c), 0, 0, 1, {}};
  }
  static ParamDomain ints(std::string n, long lo, long hi, long step = 1) {
    return {std::move(n), Kind::int_range, {}, double(lo), double(hi), double(step), {}};
  }
  static ParamDomain real(std::string n, double lo, double hi) { return {std::move(n), Kind::real_range, {}, lo, hi, 0, {}}; }
  static ParamDomain log(std::string n, double lo, double hi) { return {std::move(n), Kind::log_range, {}, lo, hi, 0, {}}; }
  static ParamDomain int_list(std::string n, long lo, long hi, long step, std::string length_from) {
    return {std::move(n), Kind::int_list, {}, double(lo), double(hi), double(step), std::move(length_from)};
  }

  long int_count() const { return static_cast<long>((hi - lo) / step) + 1; }
  long draw_int(Rng& rng) const { return static_cast<long>(lo) + static_cast<long>(step) * rng.integer(0, int_count() - 1); }
  bool int_ok(const nlohmann::json& v) const {
    if (!v.is_number_integer()) return false;
    const long x = v.get<long>();
    return x >= lo && x <= hi && (x - static_cast<long>(lo)) % static_cast<long>(step) == 0;
  }
};

struct SearchSpace {
  ModelKind model = ModelKind::svr;
  std::vector<ParamDomain> params;

  bool discrete() const {
    for (const auto& p : params) {
      if (p.kind != ParamDomain::Kind::choice) return false;
    }
    return true;
  }

  Assignment sample(Rng& rng) const {
    Assignment a = Assignment::object();
    for (const auto& p : params) {
      switch (p.kind) {
        case ParamDomain::Kind::choice:
          a[p.name] = p.choices.at(rng.below(p.choices.size()));
          break;
        case ParamDomain::Kind::int_range:
          a[p.name] = p.draw_int(rng);
          break;
        case ParamDomain::Kind::real_range:
          a[p.name] = rng.uniform(p.lo, p.hi);
          break;
        case ParamDomain::Kind::log_range:
          a[p.name] = std::exp(rng.uniform(std::log(p.lo), std::log(p.hi)));
          break;
        case ParamDomain::Kind::int_list: {
          const std::size_t n = a.at(p.length_from).get<std::size_t>();
          nlohmann::json arr = nlohmann::json::array();
          for (std::size_t i = 0; i < n; ++i) arr.push_back(p.draw_int(rng));
          a[p.name] = arr;
          break;
        }
      }
    }
    return a;
  }

  bool contains(const Assignment& a) const {
    if (!a.is_object() || a.size() != params.size()) return false;
    for (const auto& p : params) {
      if (!a.contains(p.name)) return false;
      const auto& v = a.at(p.name);
      switch (p.kind) {
        case ParamDomain::Kind::choice:
          if (std::find(p.choices.begin(), p.choices.end(), v) == p.choices.end()) return false;
          break;
        case ParamDomain::Kind::int_range:
          if (!p.int_ok(v)) return false;
          break;
        case ParamDomain::Kind::real_range:
        case ParamDomain::Kind::log_range:
          if (!v.is_number() || v.get<double>() < p.lo || v.get<double>() > p.hi) return false;
          break;
        case ParamDomain::Kind::int_list: {
          if (!v.is_array() || !a.contains(p.length_from) || v.size() != a.at(p.length_from).get<std::size_t>()) {
            return false;
          }
          for (const auto& e : v) {
            if (!p.int_ok(e)) return false;
          }
          break;
        }
      }
    }
    return true;
  }

  /// Every combination, first parameter varying slowest.
  std::vector<Assignment> grid() const {
    if (!discrete()) throw ParameterError("grid: search space for " + to_string(model) + " is not discrete");
    std::vector<Assignment> out{Assignment::object()};
    for (const auto& p : params) {
      if (p.choices.empty()) throw ParameterError("grid: parameter " + p.name + " has no values");
      std::vector<Assignment> next;
      for (const auto& partial : out) {
        for (const auto& c : p.choices) {
          Assignment a = partial;
          a[p.name] = c;
          next.push_back(std::move(a));
        }
      }
      out = std::move(next);
    }
    return out;
  }
};

inline std::vector<nlohmann::json> optimizer_names() { return {"Adam", "Adamax", "RMSProp", "SGD"}; }

/// Hyperparameter domains per model. Units and filters are widened to the
/// integer range [32, 128]; learning rate is log-uniform on [1e-4, 1e-1];
/// dropout rates are continuous.
inline SearchSpace default_space(ModelKind kind) {
  using P = ParamDomain;
  SearchSpace s;
  s.model = kind;
  switch (kind) {
    case ModelKind::svr:
      s.params = {P::choice("C", {0.1, 1.0, 10.0}), P::choice("epsilon", {0.01, 0.1, 0.2}),
                  P::choice("kernel", {"linear", "rbf"})};
      break;
    case ModelKind::lstm:
      s.params = {P::choice("layers", {1, 2, 3}), P::ints("units", 32, 128), P::real("dropout", 0.2, 0.5),
                  P::choice("optimizer", optimizer_names()), P::log("learning_rate", 1e-4, 1e-1)};
      break;
    case ModelKind::transformer:
      s.params = {P::choice("blocks", {2, 4, 6, 8}),
                  P::ints("head_size", 8, 256, 8),
                  P::ints("heads", 2, 16, 2),
                  P::ints("ff_dim", 4, 64, 4),
                  P::real("dropout", 0.1, 0.6),
                  P::choice("mlp_layers", {1, 2, 3}),
                  P::int_list("mlp_units", 32, 256, 32, "mlp_layers"),
                  P::real("mlp_dropout", 0.1, 0.6),
                  P::choice("optimizer", optimizer_names()),
                  P::log("learning_rate", 1e-4, 1e-1)};
      break;
    case ModelKind::tcn:
      s.params = {P::choice("layers", {1, 2, 3}), P::ints("filters", 32, 128), P::choice("kernel", {2, 3, 4}),
                  P::choice("optimizer", optimizer_names()), P::log("learning_rate", 1e-4, 1e-1)};
      break;
    case ModelKind::persistence:
    case ModelKind::constant:
      break;
  }
  return s;
}

}  // namespace snowcast::search
