#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::nn {

// Parameters persist as a JSON object name -> {"shape": [...], "data": [...]}.
// nlohmann/json writes doubles with 17 significant digits, so values
// round-trip exactly.

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

inline nlohmann::json params_to_json(const std::vector<Parameter*>& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const Parameter* p : params) {
    if (out.contains(p->name)) throw ContractError("params_to_json: duplicate parameter name " + p->name);
    out[p->name] = tensor_to_json(p->value);
  }
  return out;
}

/// Loads values into existing parameters; names and shapes must match.
inline void params_from_json(const nlohmann::json& j, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (!j.contains(p->name)) throw LookupError("params_from_json: missing parameter " + p->name);
    Tensor t = tensor_from_json(j.at(p->name));
    if (t.shape() != p->value.shape()) {
      throw DimensionError("params_from_json: " + p->name + " has shape " + shape_str(t.shape()) + ", model expects " +
                           shape_str(p->value.shape()));
    }
    p->value = std::move(t);
    p->zero_grad();
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace snowcast::nn
