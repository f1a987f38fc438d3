#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "snowcast/core/errors.hpp"
#include "snowcast/data/folds.hpp"
#include "snowcast/data/scaler.hpp"
#include "snowcast/data/spline.hpp"
#include "snowcast/data/synthetic.hpp"
#include "snowcast/data/table.hpp"
#include "snowcast/data/windows.hpp"
#include "snowcast/report/reporting.hpp"
#include "snowcast/search/nested_cv.hpp"

namespace snowcast::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Experiment description. Relative paths resolve against the config file's
/// directory. See configs/example.json for the key list.
struct ExperimentConfig {
  fs::path data;  // daily CSV: date,T,P,Q and SCA unless `sca8` is given
  fs::path sca8;  // optional 8-day sidecar (date,SCA8); when set, daily SCA is splined from it
  data::SplineEnd spline_end = data::SplineEnd::not_a_knot;
  std::vector<data::FeatureSet> feature_sets{data::FeatureSet::M1, data::FeatureSet::M2};
  std::vector<search::ModelKind> models{search::ModelKind::svr, search::ModelKind::lstm,
                                        search::ModelKind::transformer, search::ModelKind::tcn};
  std::size_t window = 2;
  std::size_t outer_folds = 5;
  std::size_t inner_folds = 3;
  std::uint64_t seed = 42;
  data::SplitMode split = data::SplitMode::shuffled;
  std::size_t budget = 10;
  data::ScalingMode scaling = data::ScalingMode::per_fold;
  search::Selection selection = search::Selection::per_fold;
  std::size_t bench_repeats = 1;
  bool keep_models = true;
  search::TrainConfig train;
  json spaces = json::object();  // per-model overrides: {"LSTM": {"units": [64, 96]}}
  fs::path out = "results";

  void validate() const {
    if (data.empty()) throw ParameterError("config: 'data' is required");
    if (!fs::exists(data)) throw DataError("config: data file " + data.string() + " does not exist");
    if (!sca8.empty() && !fs::exists(sca8)) {
      throw DataError("config: SCA sidecar " + sca8.string() +
                      " does not exist; remove 'sca8' if the daily file already has an SCA column");
    }
    if (outer_folds < 2) throw ParameterError("config: outer_folds must be at least 2");
    if (inner_folds < 2) throw ParameterError("config: inner_folds must be at least 2");
    if (window < 1) throw ParameterError("config: window must be at least 1");
    if (budget < 1) throw ParameterError("config: budget must be at least 1");
    if (models.empty()) throw ParameterError("config: no models");
    if (feature_sets.empty()) throw ParameterError("config: no feature sets");
    for (const auto& [name, _] : spaces.items()) search::parse_model(name);
  }
};

inline std::string to_string(search::Selection s) { return s == search::Selection::per_fold ? "per-fold" : "global-best"; }

inline search::Selection parse_selection(const std::string& s) {
  if (s == "per-fold" || s == "per_fold") return search::Selection::per_fold;
  if (s == "global-best" || s == "global_best") return search::Selection::global_best;
  throw ParameterError("unknown selection '" + s + "' (expected per-fold or global-best)");
}

inline data::SplineEnd parse_spline_end(const std::string& s) {
  if (s == "not-a-knot" || s == "not_a_knot") return data::SplineEnd::not_a_knot;
  if (s == "natural") return data::SplineEnd::natural;
  throw ParameterError("unknown spline end '" + s + "' (expected not-a-knot or natural)");
}

namespace detail {

inline std::vector<std::string> string_list(const json& v) {
  if (v.is_string()) return {v.get<std::string>()};
  return v.get<std::vector<std::string>>();
}

inline search::TrainConfig train_from_json(const json& j) {
  search::TrainConfig t;
  static const std::set<std::string> keys{"epochs",    "patience", "batch_size",   "predict_batch",
                                          "transformer_width", "pe_base", "tcn_dropout", "tcn_skip_connections",
                                          "refit_attempts"};
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw ParameterError("config: unknown key train." + k);
  }
  t.epochs = j.value("epochs", t.epochs);
  t.patience = j.value("patience", t.patience);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.predict_batch = j.value("predict_batch", t.predict_batch);
  t.transformer_width = j.value("transformer_width", t.transformer_width);
  t.pe_base = j.value("pe_base", t.pe_base);
  t.tcn_dropout = j.value("tcn_dropout", t.tcn_dropout);
  t.tcn_skip_connections = j.value("tcn_skip_connections", t.tcn_skip_connections);
  t.refit_attempts = j.value("refit_attempts", t.refit_attempts);
  if (t.epochs < 1) throw ParameterError("config: train.epochs must be at least 1");
  return t;
}

inline json train_to_json(const search::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"patience", t.patience},
          {"batch_size", t.batch_size},
          {"predict_batch", t.predict_batch},
          {"transformer_width", t.transformer_width},
          {"pe_base", t.pe_base},
          {"tcn_dropout", t.tcn_dropout},
          {"tcn_skip_connections", t.tcn_skip_connections},
          {"refit_attempts", t.refit_attempts}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j, const fs::path& base = {}) {
  static const std::set<std::string> keys{"data",        "sca8",        "spline_end", "feature_sets", "models",
                                          "window",      "outer_folds", "inner_folds", "seed",        "split",
                                          "budget",      "scaling",     "selection",   "bench_repeats", "keep_models",
                                          "train",       "spaces",      "out"};
  if (!j.is_object()) throw ParameterError("config: expected a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!keys.count(k)) throw ParameterError("config: unknown key " + k);
  }
  const auto path = [&](const std::string& k) {
    const fs::path p = j.at(k).get<std::string>();
    return (p.is_absolute() || base.empty() ? p : base / p).lexically_normal();
  };
  ExperimentConfig c;
  try {
    if (j.contains("data")) c.data = path("data");
    if (j.contains("sca8")) c.sca8 = path("sca8");
    if (j.contains("spline_end")) c.spline_end = parse_spline_end(j["spline_end"].get<std::string>());
    if (j.contains("feature_sets")) {
      c.feature_sets.clear();
      for (const auto& s : detail::string_list(j["feature_sets"])) c.feature_sets.push_back(data::parse_feature_set(s));
    }
    if (j.contains("models")) {
      c.models.clear();
      for (const auto& s : detail::string_list(j["models"])) c.models.push_back(search::parse_model(s));
    }
    c.window = j.value("window", c.window);
    c.outer_folds = j.value("outer_folds", c.outer_folds);
    c.inner_folds = j.value("inner_folds", c.inner_folds);
    c.seed = j.value("seed", c.seed);
    if (j.contains("split")) c.split = data::parse_split_mode(j["split"].get<std::string>());
    c.budget = j.value("budget", c.budget);
    if (j.contains("scaling")) c.scaling = data::parse_scaling_mode(j["scaling"].get<std::string>());
    if (j.contains("selection")) c.selection = parse_selection(j["selection"].get<std::string>());
    c.bench_repeats = j.value("bench_repeats", c.bench_repeats);
    c.keep_models = j.value("keep_models", c.keep_models);
    if (j.contains("train")) c.train = detail::train_from_json(j["train"]);
    if (j.contains("spaces")) c.spaces = j["spaces"];
    if (j.contains("out")) c.out = path("out");
    else if (!base.empty()) c.out = (base / c.out).lexically_normal();
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParameterError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

inline json config_to_json(const ExperimentConfig& c) {
  json fsets = json::array(), models = json::array();
  for (auto f : c.feature_sets) fsets.push_back(data::to_string(f));
  for (auto m : c.models) models.push_back(search::to_string(m));
  json j{{"data", c.data.string()},
         {"spline_end", c.spline_end == data::SplineEnd::natural ? "natural" : "not-a-knot"},
         {"feature_sets", fsets},
         {"models", models},
         {"window", c.window},
         {"outer_folds", c.outer_folds},
         {"inner_folds", c.inner_folds},
         {"seed", c.seed},
         {"split", data::to_string(c.split)},
         {"budget", c.budget},
         {"scaling", data::to_string(c.scaling)},
         {"selection", to_string(c.selection)},
         {"bench_repeats", c.bench_repeats},
         {"keep_models", c.keep_models},
         {"train", detail::train_to_json(c.train)},
         {"spaces", c.spaces},
         {"out", c.out.string()}};
  if (!c.sca8.empty()) j["sca8"] = c.sca8.string();
  return j;
}

/// Default space with per-parameter overrides: each listed parameter becomes a
/// choice over the given values.
inline search::SearchSpace space_for(const ExperimentConfig& c, search::ModelKind kind) {
  search::SearchSpace s = search::default_space(kind);
  for (const auto& [name, over] : c.spaces.items()) {
    if (search::parse_model(name) != kind) continue;
    if (!over.is_object()) throw ParameterError("config: spaces." + name + " must be an object");
    for (const auto& [param, values] : over.items()) {
      auto it = std::find_if(s.params.begin(), s.params.end(), [&](const auto& p) { return p.name == param; });
      if (it == s.params.end()) throw ParameterError("config: " + name + " has no hyperparameter " + param);
      // a list is a set of choices; mlp_units choices are themselves lists
      std::vector<json> choices = values.is_array() ? values.get<std::vector<json>>() : std::vector<json>{values};
      if (choices.empty()) throw ParameterError("config: spaces." + name + "." + param + " is empty");
      *it = search::ParamDomain::choice(param, std::move(choices));
    }
  }
  return s;
}

/// Daily table with SCA, splined from the sidecar when one is configured.
inline data::TimeSeriesTable load_table(const ExperimentConfig& c) {
  if (c.sca8.empty()) return data::load_csv(c.data);
  const data::TimeSeriesTable daily = data::read_dated_csv(c.data, {"T", "P", "Q"});
  const data::TimeSeriesTable sca8 = data::load_sca8(c.sca8);
  try {
    return data::merge_splined_sca(daily, sca8, c.spline_end);
  } catch (const Error& e) {
    throw DataError(c.sca8.string() + ": " + e.what());
  }
}

inline std::string shape_string(const data::WindowedDataset& ds) {
  return "(" + std::to_string(ds.size()) + ", " + std::to_string(ds.window) + ", " + std::to_string(ds.feature_count()) +
         ")";
}

// ---- prepare --------------------------------------------------------------

/// Writes <out>/prepared.csv and prints the windowed shape per feature set.
inline fs::path cmd_prepare(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto table = load_table(c);
  fs::create_directories(c.out);
  const fs::path path = c.out / "prepared.csv";
  data::write_csv(table, path, data::standard_columns());
  log << "rows " << table.size() << " (" << data::format_date(table.dates.front()) << " .. "
      << data::format_date(table.dates.back()) << ")" << (table.gap_free() ? "" : ", with gaps") << '\n';
  for (auto f : c.feature_sets) {
    const auto ds = data::make_windows(table, f, c.window);
    log << data::to_string(f) << " samples " << ds.size() << " shape " << shape_string(ds) << '\n';
  }
  log << "wrote " << path.string() << '\n';
  return path;
}

// ---- run ------------------------------------------------------------------

struct RunSummary {
  std::vector<report::FoldRow> folds;
  std::vector<report::AverageRow> averages;
  std::vector<report::TimingRow> timing;
  std::vector<report::FoldRow> global_folds;  // global-best selection only
};

inline fs::path model_path(const fs::path& out, const std::string& model, const std::string& feature_set,
                           std::size_t fold) {
  return out / "models" / (model + "_" + feature_set + "_fold" + std::to_string(fold) + ".json");
}

inline data::FoldPlan plan_for(const ExperimentConfig& c, std::size_t n) {
  return data::plan_nested_cv(n, c.outer_folds, c.inner_folds, c.seed, c.split);
}

/// Runs every configured (model, feature set) pair and writes folds.csv,
/// averages.csv, timing.csv, predictions/, models/, trials.jsonl and run.json.
inline RunSummary cmd_run(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto table = load_table(c);
  fs::create_directories(c.out);
  const fs::path trial_log = c.out / "trials.jsonl";
  fs::remove(trial_log);

  search::SearchOptions opt;
  opt.budget = c.budget;
  opt.seed = c.seed;
  opt.train = c.train;
  opt.scaling = c.scaling;
  opt.selection = c.selection;
  opt.bench_repeats = c.bench_repeats;
  opt.keep_models = c.keep_models;

  RunSummary sum;
  json manifest = {{"config", config_to_json(c)}, {"models", json::array()}, {"feature_sets", json::array()},
                   {"folds", c.outer_folds}, {"results", json::array()}};
  for (auto m : c.models) manifest["models"].push_back(search::to_string(m));
  for (auto f : c.feature_sets) manifest["feature_sets"].push_back(data::to_string(f));

  for (auto kind : c.models) {
    const search::SearchSpace space = space_for(c, kind);
    for (auto fset : c.feature_sets) {
      const std::string model = search::to_string(kind), fsn = data::to_string(fset);
      const auto ds = data::make_windows(table, fset, c.window);
      const auto plan = plan_for(c, ds.size());
      const auto t0 = std::chrono::steady_clock::now();
      const auto res = search::run_nested_cv(kind, ds, plan, space, opt, nullptr, fsn);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      for (const auto& f : res.folds) {
        report::write_predictions(report::prediction_path(c.out, model, fsn, f.fold + 1),
                                  report::prediction_set(model, fsn, f));
        if (c.keep_models) {
          std::ofstream mo = report::detail::open_out(model_path(c.out, model, fsn, f.fold + 1));
          mo << json{{"model", model},       {"feature_set", fsn},  {"fold", f.fold + 1},
                     {"assignment", f.assignment}, {"state", f.model_state}, {"scaler", f.scaler}}
                    .dump()
             << '\n';
        }
      }
      search::append_trial_log(trial_log, res.trials, kind, fsn);
      const auto rows = report::fold_rows(res);
      sum.folds.insert(sum.folds.end(), rows.begin(), rows.end());
      sum.timing.push_back({model, fsn, res.mean_inference_seconds()});
      for (const auto& f : res.global_folds) {
        sum.global_folds.push_back(report::fold_row(model, fsn, f.fold + 1, f.metrics));
      }

      json folds = json::array();
      for (const auto& f : res.folds) {
        folds.push_back({{"fold", f.fold + 1},
                         {"assignment", f.assignment},
                         {"refit_epochs", f.refit_epochs},
                         {"refit_attempts", f.refit_attempts}});
      }
      manifest["results"].push_back({{"model", model},
                                     {"feature_set", fsn},
                                     {"samples", ds.size()},
                                     {"seconds", wall},
                                     {"folds", folds},
                                     {"global_assignment", res.global_assignment ? *res.global_assignment : json()}});
      log << std::left << std::setw(12) << model << ' ' << fsn << "  NSE " << report::format_value(res.average.nse)
          << "  RMSE " << report::format_value(res.average.rmse) << "  (" << std::fixed << std::setprecision(1) << wall
          << " s)" << std::defaultfloat << std::setprecision(6) << '\n';
    }
  }
  sum.averages = report::average_rows(sum.folds);
  report::write_fold_csv(c.out / "folds.csv", sum.folds);
  report::write_averages_csv(c.out / "averages.csv", sum.averages);
  report::write_timing_csv(c.out / "timing.csv", sum.timing);
  if (!sum.global_folds.empty()) {
    report::write_fold_csv(c.out / "folds_global.csv", sum.global_folds);
    report::write_averages_csv(c.out / "averages_global.csv", report::average_rows(sum.global_folds));
  }
  std::ofstream(c.out / "run.json") << manifest.dump(2) << '\n';
  return sum;
}

// ---- report / scatter -----------------------------------------------------

struct RunManifest {
  std::vector<std::string> models, feature_sets;
  std::size_t folds = 0;
};

inline RunManifest read_manifest(const fs::path& out) {
  const fs::path path = out / "run.json";
  std::ifstream in(path);
  if (!in) throw DataError("no completed run in " + out.string() + " (missing run.json)");
  try {
    const json j = json::parse(in);
    return {j.at("models").get<std::vector<std::string>>(), j.at("feature_sets").get<std::vector<std::string>>(),
            j.at("folds").get<std::size_t>()};
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Rebuilds the fold and average tables from persisted predictions into `dest`.
inline RunSummary cmd_report(const fs::path& out, const fs::path& dest) {
  const RunManifest m = read_manifest(out);
  RunSummary sum;
  sum.folds = report::rows_from_predictions(out, m.models, m.feature_sets, m.folds);
  sum.averages = report::average_rows(sum.folds);
  report::write_fold_csv(dest / "folds.csv", sum.folds);
  report::write_averages_csv(dest / "averages.csv", sum.averages);
  return sum;
}

/// Observed/predicted pairs of one outer test fold (folds count from 1).
inline report::PredictionSet cmd_scatter(const fs::path& out, const std::string& model, const std::string& feature_set,
                                         std::size_t fold, const fs::path& dest) {
  const RunManifest m = read_manifest(out);
  const std::string name = search::to_string(search::parse_model(model));
  if (std::find(m.models.begin(), m.models.end(), name) == m.models.end()) {
    throw LookupError("model " + name + " is not part of the run in " + out.string());
  }
  const std::string fsn = data::to_string(data::parse_feature_set(feature_set));
  if (std::find(m.feature_sets.begin(), m.feature_sets.end(), fsn) == m.feature_sets.end()) {
    throw LookupError("feature set " + fsn + " is not part of the run in " + out.string());
  }
  if (fold < 1 || fold > m.folds) {
    throw LookupError("fold " + std::to_string(fold) + " out of range (run has folds 1.." + std::to_string(m.folds) + ")");
  }
  auto p = report::load_predictions(out, name, fsn, fold);
  report::write_scatter(dest, p);
  return p;
}

// ---- bench ----------------------------------------------------------------

/// Reloads the saved fold models and times inference on their outer test
/// sets. Seconds are the median over `repeats`, averaged over folds.
inline std::vector<report::TimingRow> cmd_bench(const ExperimentConfig& c, std::size_t repeats, std::ostream& log) {
  c.validate();
  if (repeats < 1) throw ParameterError("bench: repeats must be at least 1");
  const auto table = load_table(c);
  std::vector<report::TimingRow> rows;
  for (auto kind : c.models) {
    for (auto fset : c.feature_sets) {
      const std::string model = search::to_string(kind), fsn = data::to_string(fset);
      const auto ds = data::make_windows(table, fset, c.window);
      const auto plan = plan_for(c, ds.size());
      double total = 0.0;
      for (std::size_t k = 1; k <= plan.outer.size(); ++k) {
        const fs::path path = model_path(c.out, model, fsn, k);
        std::ifstream in(path);
        if (!in) throw LookupError("no saved model " + path.string() + " (run with keep_models first)");
        json j;
        try {
          j = json::parse(in);
        } catch (const json::exception& e) {
          throw ParseError(path.string() + ": " + e.what());
        }
        const auto scaler = data::scaler_from_json(j.at("scaler"));
        const auto test = data::scaler_apply(scaler, data::subset(ds, plan.outer[k - 1].test));
        auto reg = search::make_regressor(kind, j.at("assignment"), ds.feature_count(), c.train, c.seed);
        reg->load_state(j.at("state"));
        total += search::benchmark_inference(*reg, test, repeats);
      }
      rows.push_back({model, fsn, total / static_cast<double>(plan.outer.size())});
    }
  }
  report::print_timing_table(log, rows);
  report::write_timing_csv(c.out / "bench.csv", rows);
  return rows;
}

// ---- synthetic data -------------------------------------------------------

/// Writes daily.csv (date,T,P,Q) and sca8.csv (date,SCA8) into `dir`.
inline void cmd_synth(const fs::path& dir, std::size_t days, std::uint64_t seed) {
  data::SyntheticConfig sc;
  sc.days = days;
  sc.seed = seed;
  const auto syn = data::generate_synthetic(sc);
  fs::create_directories(dir);
  data::write_csv(syn.daily, dir / "daily.csv", {"T", "P", "Q"});
  data::write_csv(syn.sca8, dir / "sca8.csv", {"SCA8"});
}

}  // namespace snowcast::cli
