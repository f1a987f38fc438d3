#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/rng.hpp"
#include "snowcast/data/folds.hpp"
#include "snowcast/data/scaler.hpp"
#include "snowcast/data/windows.hpp"
#include "snowcast/metrics/metrics.hpp"
#include "snowcast/search/regressors.hpp"
#include "snowcast/search/space.hpp"

namespace snowcast::search {

enum class Selection {
  per_fold,     // each outer fold keeps its own inner-search winner
  global_best,  // additionally re-evaluate every fold with the single best winner
};

struct SearchOptions {
  std::size_t budget = 20;  // random-search trials per outer fold
  std::uint64_t seed = 42;
  TrainConfig train;
  data::ScalingMode scaling = data::ScalingMode::per_fold;
  Selection selection = Selection::per_fold;
  std::size_t bench_repeats = 0;  // 0 = skip inference timing
  bool keep_models = false;       // store trained state and scaler in each FoldReport
};

struct TrialRecord {
  std::size_t outer_fold = 0;
  std::size_t trial = 0;
  Assignment assignment;
  std::vector<double> inner_rmse;  // one per inner fold
  std::vector<std::size_t> best_epochs;
  double mean_rmse = 0.0;
  std::size_t rank = 0;  // 1 = selected
  std::uint64_t seed = 0;

  double mean_best_epoch() const {
    if (best_epochs.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t e : best_epochs) s += static_cast<double>(e);
    return s / static_cast<double>(best_epochs.size());
  }
};

struct SearchResult {
  std::vector<TrialRecord> trials;  // in evaluation order
  std::size_t best = 0;

  const TrialRecord& best_trial() const { return trials.at(best); }
};

/// Scaled train/validation pair for one inner split.
struct PreparedSplit {
  WindowedDataset train, val;
};

inline PreparedSplit prepare_split(const WindowedDataset& ds, const data::Split& split,
                                   const std::optional<data::ScalerParams>& global_scaler, data::AccessAudit* audit,
                                   const std::string& phase) {
  WindowedDataset tr = data::subset(ds, split.train, audit, phase);
  WindowedDataset va = data::subset(ds, split.test, audit, phase);
  const data::ScalerParams sc = global_scaler ? *global_scaler : data::scaler_fit(ds, split.train);
  return {data::scaler_apply(sc, std::move(tr)), data::scaler_apply(sc, std::move(va))};
}

namespace detail {

inline double score_or_inf(double x) { return std::isfinite(x) ? x : std::numeric_limits<double>::infinity(); }

inline TrialRecord evaluate_trial(ModelKind kind, const Assignment& a, const std::vector<PreparedSplit>& folds,
                                  const TrainConfig& cfg, std::uint64_t seed) {
  TrialRecord r;
  r.assignment = a;
  r.seed = seed;
  double total = 0.0;
  for (std::size_t j = 0; j < folds.size(); ++j) {
    const PreparedSplit& f = folds[j];
    auto model = make_regressor(kind, a, f.train.feature_count(), cfg, mix_seed(seed, j));
    const FitReport rep = model->fit(f.train, &f.val);
    const std::vector<double> pred = model->predict(f.val);
    double rmse = std::numeric_limits<double>::infinity();
    try {
      rmse = score_or_inf(metrics::rmse(f.val.targets, pred));
    } catch (const NumericError&) {
    }
    r.inner_rmse.push_back(rmse);
    r.best_epochs.push_back(rep.best_epoch);
    total += rmse;
  }
  r.mean_rmse = total / static_cast<double>(folds.size());
  return r;
}

/// Rank 1 = lowest mean RMSE; ties go to the earlier trial.
inline std::size_t rank_trials(std::vector<TrialRecord>& trials) {
  std::vector<std::size_t> order(trials.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return score_or_inf(trials[x].mean_rmse) < score_or_inf(trials[y].mean_rmse);
  });
  for (std::size_t r = 0; r < order.size(); ++r) trials[order[r]].rank = r + 1;
  return order.front();
}

}  // namespace detail

/// Exhaustive search over a finite space; every combination is scored on all
/// inner folds.
inline SearchResult grid_search(ModelKind kind, const SearchSpace& space, const std::vector<PreparedSplit>& folds,
                                const TrainConfig& cfg, std::uint64_t seed, std::size_t outer_fold = 0) {
  if (space.params.empty()) throw ParameterError("grid_search: empty search space for " + to_string(kind));
  if (folds.empty()) throw ParameterError("grid_search: no inner folds");
  SearchResult out;
  const auto grid = space.grid();
  for (std::size_t t = 0; t < grid.size(); ++t) {
    TrialRecord r = detail::evaluate_trial(kind, grid[t], folds, cfg, mix_seed(seed, t + 1));
    r.outer_fold = outer_fold;
    r.trial = t;
    out.trials.push_back(std::move(r));
  }
  out.best = detail::rank_trials(out.trials);
  return out;
}

/// `budget` assignments drawn from `space` with Rng(seed).
inline SearchResult random_search(ModelKind kind, const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                  const std::vector<PreparedSplit>& folds, const TrainConfig& cfg,
                                  std::size_t outer_fold = 0) {
  if (budget < 1) throw ParameterError("random_search: budget must be at least 1");
  if (space.params.empty()) throw ParameterError("random_search: empty search space for " + to_string(kind));
  if (folds.empty()) throw ParameterError("random_search: no inner folds");
  Rng rng(seed);
  SearchResult out;
  for (std::size_t t = 0; t < budget; ++t) {
    const Assignment a = space.sample(rng);
    TrialRecord r = detail::evaluate_trial(kind, a, folds, cfg, mix_seed(seed, t + 1));
    r.outer_fold = outer_fold;
    r.trial = t;
    out.trials.push_back(std::move(r));
  }
  out.best = detail::rank_trials(out.trials);
  return out;
}

/// Median wall-clock seconds of a full prediction pass over `test`.
inline double benchmark_inference(Regressor& model, const WindowedDataset& test, std::size_t repeats) {
  if (repeats == 0) throw ParameterError("benchmark_inference: repeats must be at least 1");
  std::vector<double> t;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    const auto pred = model.predict(test);
    const auto stop = std::chrono::steady_clock::now();
    if (pred.size() != test.size()) throw ContractError("benchmark_inference: prediction count mismatch");
    t.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::sort(t.begin(), t.end());
  const std::size_t m = t.size() / 2;
  return t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
}

struct FoldReport {
  std::size_t fold = 0;
  Assignment assignment;
  metrics::MetricReport metrics;  // on scaled test targets
  std::vector<std::size_t> test_index;
  std::vector<data::Date> dates;
  std::vector<double> observed, predicted;  // scaled units
  std::size_t refit_epochs = 0;
  std::size_t refit_attempts = 1;
  double inference_seconds = std::numeric_limits<double>::quiet_NaN();
  nlohmann::json model_state;  // with SearchOptions::keep_models
  nlohmann::json scaler;
};

struct MetricAverages {
  double mae = 0.0, rmse = 0.0, r2 = 0.0, kge = 0.0, nse = 0.0;
};

inline MetricAverages average_metrics(const std::vector<FoldReport>& folds) {
  MetricAverages a;
  if (folds.empty()) return a;
  for (const auto& f : folds) {
    a.mae += f.metrics.mae;
    a.rmse += f.metrics.rmse;
    a.r2 += f.metrics.r2;
    a.kge += f.metrics.kge;
    a.nse += f.metrics.nse;
  }
  const double n = static_cast<double>(folds.size());
  a.mae /= n;
  a.rmse /= n;
  a.r2 /= n;
  a.kge /= n;
  a.nse /= n;
  return a;
}

struct NestedCvResult {
  ModelKind model = ModelKind::svr;
  std::string feature_set;
  std::vector<FoldReport> folds;  // by outer fold index
  MetricAverages average;
  std::vector<TrialRecord> trials;
  // Filled in global-best mode: every fold refit with one shared assignment.
  std::vector<FoldReport> global_folds;
  MetricAverages global_average;
  std::optional<Assignment> global_assignment;

  double mean_inference_seconds() const {
    double s = 0.0;
    for (const auto& f : folds) s += f.inference_seconds;
    return folds.empty() ? 0.0 : s / static_cast<double>(folds.size());
  }
};

inline std::string phase_name(std::size_t outer, const std::string& stage) {
  return "outer" + std::to_string(outer) + ":" + stage;
}

namespace detail {

/// Rethrows a library error with `context` prefixed; numeric failures become
/// training errors.
[[noreturn]] inline void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const TrainingError& e) {
    throw TrainingError(context + e.what());
  } catch (const NumericError& e) {
    throw TrainingError(context + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(context + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(context + e.what());
  } catch (const ContractError& e) {
    throw ContractError(context + e.what());
  } catch (const LookupError& e) {
    throw LookupError(context + e.what());
  } catch (const UndefinedMetricError& e) {
    throw UndefinedMetricError(context + e.what());
  }
}

inline FoldReport refit_and_test(ModelKind kind, const Assignment& a, double mean_best_epoch,
                                 const WindowedDataset& ds, const data::OuterFold& fold, std::size_t o,
                                 const std::optional<data::ScalerParams>& global_scaler, const SearchOptions& opt,
                                 data::AccessAudit* audit) {
  FoldReport rep;
  rep.fold = o;
  rep.assignment = a;
  WindowedDataset train = data::subset(ds, fold.train, audit, phase_name(o, "refit"));
  const data::ScalerParams sc = global_scaler ? *global_scaler : data::scaler_fit(ds, fold.train);
  train = data::scaler_apply(sc, std::move(train));
  const std::size_t feats = train.feature_count();
  rep.refit_epochs = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(mean_best_epoch)));
  std::unique_ptr<Regressor> model;
  for (std::size_t attempt = 0;; ++attempt) {
    model = make_regressor(kind, a, feats, opt.train, mix_seed(opt.seed, 1000 + o + 100 * attempt));
    const FitReport fit = model->fit(train, nullptr, rep.refit_epochs);
    rep.refit_attempts = attempt + 1;
    if (!(fit.diverged && fit.best_epoch == 0)) break;
    if (attempt + 1 >= std::max<std::size_t>(1, opt.train.refit_attempts)) {
      throw TrainingError("refit diverged in the first epoch on " + std::to_string(rep.refit_attempts) +
                          " initialisations");
    }
  }

  // outer-test rows are read only from here on
  WindowedDataset test = data::scaler_apply(sc, data::subset(ds, fold.test, audit, phase_name(o, "test")));
  rep.test_index = fold.test;
  rep.dates = test.target_dates;
  rep.observed = test.targets;
  rep.predicted = model->predict(test);
  rep.metrics = metrics::evaluate_all_or_nan(rep.observed, rep.predicted);
  if (opt.bench_repeats > 0) rep.inference_seconds = benchmark_inference(*model, test, opt.bench_repeats);
  if (opt.keep_models) {
    rep.model_state = model->state();
    rep.scaler = data::scaler_to_json(sc);
  }
  return rep;
}

}  // namespace detail

/// Nested cross-validation: per outer fold, search on that fold's inner splits,
/// refit the winner on the full outer-training set for the winner's mean best
/// epoch count, then score on the outer test set. Reduction is by fold index.
inline NestedCvResult run_nested_cv(ModelKind kind, const WindowedDataset& ds, const data::FoldPlan& plan,
                                    const SearchSpace& space, const SearchOptions& opt,
                                    data::AccessAudit* audit = nullptr, const std::string& feature_set = "") {
  if (plan.n_samples != ds.size()) {
    throw ContractError("run_nested_cv: plan covers " + std::to_string(plan.n_samples) + " samples but dataset has " +
                        std::to_string(ds.size()));
  }
  if (plan.outer.empty()) throw ParameterError("run_nested_cv: plan has no outer folds");
  NestedCvResult res;
  res.model = kind;
  res.feature_set = feature_set;
  std::optional<data::ScalerParams> global_scaler;
  if (opt.scaling == data::ScalingMode::global) {
    std::vector<std::size_t> all(ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    global_scaler = data::scaler_fit(ds, all);
  }
  const bool searched = !space.params.empty();
  std::vector<SearchResult> searches(plan.outer.size());

  for (std::size_t o = 0; o < plan.outer.size(); ++o) {
    const data::OuterFold& fold = plan.outer[o];
    const std::string context = to_string(kind) + (feature_set.empty() ? "" : " " + feature_set) + ", outer fold " +
                                std::to_string(o + 1) + ": ";
    try {
      Assignment chosen = Assignment::object();
      double epochs = static_cast<double>(opt.train.epochs);
      if (searched) {
        std::vector<PreparedSplit> inner;
        for (const auto& s : fold.inner) inner.push_back(prepare_split(ds, s, global_scaler, audit, phase_name(o, "search")));
        const std::uint64_t search_seed = mix_seed(opt.seed, 100 + o);
        searches[o] = space.discrete() ? grid_search(kind, space, inner, opt.train, search_seed, o)
                                       : random_search(kind, space, opt.budget, search_seed, inner, opt.train, o);
        chosen = searches[o].best_trial().assignment;
        epochs = searches[o].best_trial().mean_best_epoch();
      }
      res.folds.push_back(detail::refit_and_test(kind, chosen, epochs, ds, fold, o, global_scaler, opt, audit));
    } catch (const Error&) {
      detail::rethrow_with_context(context);
    }
  }
  for (const auto& s : searches) res.trials.insert(res.trials.end(), s.trials.begin(), s.trials.end());
  res.average = average_metrics(res.folds);

  if (searched && opt.selection == Selection::global_best) {
    std::size_t best_fold = 0;
    for (std::size_t o = 1; o < searches.size(); ++o) {
      if (detail::score_or_inf(searches[o].best_trial().mean_rmse) <
          detail::score_or_inf(searches[best_fold].best_trial().mean_rmse)) {
        best_fold = o;
      }
    }
    const TrialRecord& w = searches[best_fold].best_trial();
    res.global_assignment = w.assignment;
    for (std::size_t o = 0; o < plan.outer.size(); ++o) {
      try {
        res.global_folds.push_back(detail::refit_and_test(kind, w.assignment, w.mean_best_epoch(), ds, plan.outer[o],
                                                          o, global_scaler, opt, nullptr));
      } catch (const Error&) {
        detail::rethrow_with_context(to_string(kind) + " global-best, outer fold " + std::to_string(o + 1) + ": ");
      }
    }
    res.global_average = average_metrics(res.global_folds);
  }
  return res;
}

inline nlohmann::json trial_to_json(const TrialRecord& t, ModelKind kind, const std::string& feature_set) {
  nlohmann::json inner = nlohmann::json::array();
  for (double v : t.inner_rmse) inner.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  return {{"model", to_string(kind)},
          {"feature_set", feature_set},
          {"fold", t.outer_fold + 1},
          {"trial", t.trial},
          {"assignment", t.assignment},
          {"inner_rmse", inner},
          {"mean_rmse", std::isfinite(t.mean_rmse) ? nlohmann::json(t.mean_rmse) : nlohmann::json(nullptr)},
          {"best_epochs", t.best_epochs},
          {"rank", t.rank},
          {"seed", t.seed}};
}

/// Appends one JSON object per trial to `path`.
inline void append_trial_log(const std::filesystem::path& path, const std::vector<TrialRecord>& trials,
                             ModelKind kind, const std::string& feature_set) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to trial log " + path.string());
  for (const auto& t : trials) out << trial_to_json(t, kind, feature_set).dump() << '\n';
}

}  // namespace snowcast::search
