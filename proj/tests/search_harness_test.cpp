#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "snowcast/data/synthetic.hpp"
#include "snowcast/search/nested_cv.hpp"

using namespace snowcast;
using search::Assignment;
using search::ModelKind;

namespace {

data::WindowedDataset synthetic_windows(std::size_t days, data::FeatureSet set = data::FeatureSet::M1) {
  data::SyntheticConfig cfg;
  cfg.days = days;
  return data::make_windows(data::generate_synthetic(cfg).daily, set);
}

std::vector<search::PreparedSplit> prepared_inner(const data::WindowedDataset& ds, const data::FoldPlan& plan,
                                                  std::size_t outer) {
  std::vector<search::PreparedSplit> out;
  for (const auto& s : plan.outer[outer].inner) out.push_back(search::prepare_split(ds, s, std::nullopt, nullptr, ""));
  return out;
}

search::TrainConfig quick_train() {
  search::TrainConfig t;
  t.epochs = 20;
  t.patience = 4;
  t.batch_size = 32;
  return t;
}

}  // namespace

TEST(SearchSpace, SvrGridHasEighteenPoints) {
  const auto space = search::default_space(ModelKind::svr);
  ASSERT_TRUE(space.discrete());
  const auto grid = space.grid();
  EXPECT_EQ(grid.size(), 18u);
  std::set<std::string> distinct;
  for (const auto& a : grid) {
    EXPECT_TRUE(space.contains(a)) << a.dump();
    distinct.insert(a.dump());
  }
  EXPECT_EQ(distinct.size(), 18u);
}

TEST(SearchSpace, ThousandDrawsStayInsideDeclaredDomains) {
  Rng rng(2024);
  for (ModelKind k : {ModelKind::svr, ModelKind::lstm, ModelKind::transformer, ModelKind::tcn}) {
    const auto space = search::default_space(k);
    for (int i = 0; i < 1000; ++i) {
      const Assignment a = space.sample(rng);
      ASSERT_TRUE(space.contains(a)) << to_string(k) << " " << a.dump();
      if (a.contains("learning_rate")) {
        const double lr = a["learning_rate"].get<double>();
        ASSERT_GE(lr, 1e-4);
        ASSERT_LE(lr, 1e-1);
      }
    }
  }
  // spot-check the hand-written bounds
  Rng r2(7);
  const auto tr = search::default_space(ModelKind::transformer);
  for (int i = 0; i < 1000; ++i) {
    const Assignment a = tr.sample(r2);
    const long hs = a["head_size"].get<long>(), heads = a["heads"].get<long>(), ff = a["ff_dim"].get<long>();
    ASSERT_TRUE(hs >= 8 && hs <= 256 && hs % 8 == 0);
    ASSERT_TRUE(heads >= 2 && heads <= 16 && heads % 2 == 0);
    ASSERT_TRUE(ff >= 4 && ff <= 64 && ff % 4 == 0);
    ASSERT_EQ(a["mlp_units"].size(), a["mlp_layers"].get<std::size_t>());
    const double d = a["dropout"].get<double>();
    ASSERT_TRUE(d >= 0.1 && d <= 0.6);
  }
}

TEST(SearchSpace, LearningRateIsLogUniform) {
  // median of log-uniform [1e-4, 1e-1] is 10^-2.5; each decade holds a third
  const auto space = search::default_space(ModelKind::tcn);
  Rng rng(11);
  const int n = 6000;
  int below_median = 0, decade[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) {
    const double lr = space.sample(rng)["learning_rate"].get<double>();
    if (lr < std::pow(10.0, -2.5)) ++below_median;
    decade[std::min(2, static_cast<int>(std::floor(std::log10(lr) + 4.0)))]++;
  }
  EXPECT_NEAR(below_median / double(n), 0.5, 0.03);
  for (int d : decade) EXPECT_NEAR(d / double(n), 1.0 / 3.0, 0.03);
}

TEST(SearchSpace, ContainsRejectsOutsidePoints) {
  const auto space = search::default_space(ModelKind::lstm);
  Rng rng(3);
  Assignment a = space.sample(rng);
  ASSERT_TRUE(space.contains(a));
  Assignment b = a;
  b["units"] = 129;
  EXPECT_FALSE(space.contains(b));
  b = a;
  b["learning_rate"] = 0.5;
  EXPECT_FALSE(space.contains(b));
  b = a;
  b["optimizer"] = "Adagrad";
  EXPECT_FALSE(space.contains(b));
  b = a;
  b.erase("dropout");
  EXPECT_FALSE(space.contains(b));
  EXPECT_THROW(space.grid(), ParameterError);
}

TEST(SearchSpace, ModelNamesParse) {
  EXPECT_EQ(search::parse_model("TCN"), ModelKind::tcn);
  EXPECT_EQ(search::parse_model("transformer"), ModelKind::transformer);
  EXPECT_EQ(search::parse_model("Persistence"), ModelKind::persistence);
  EXPECT_THROW(search::parse_model("gru"), ParameterError);
}

TEST(Ranking, FollowsMeanScoreWithTiesToEarlierTrial) {
  std::vector<search::TrialRecord> t(5);
  const double scores[] = {0.3, 0.1, 0.2, 0.1, std::nan("")};
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i].trial = i;
    t[i].mean_rmse = scores[i];
  }
  EXPECT_EQ(search::detail::rank_trials(t), 1u);
  EXPECT_EQ(t[1].rank, 1u);
  EXPECT_EQ(t[3].rank, 2u);
  EXPECT_EQ(t[2].rank, 3u);
  EXPECT_EQ(t[0].rank, 4u);
  EXPECT_EQ(t[4].rank, 5u);
}

class SmallSearch : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ds_ = new data::WindowedDataset(synthetic_windows(400));
    plan_ = new data::FoldPlan(data::plan_nested_cv(ds_->size()));
  }
  static void TearDownTestSuite() {
    delete ds_;
    delete plan_;
  }
  static data::WindowedDataset* ds_;
  static data::FoldPlan* plan_;
};
data::WindowedDataset* SmallSearch::ds_ = nullptr;
data::FoldPlan* SmallSearch::plan_ = nullptr;

TEST_F(SmallSearch, GridSearchScoresEveryCombination) {
  const auto inner = prepared_inner(*ds_, *plan_, 0);
  const auto res = search::grid_search(ModelKind::svr, search::default_space(ModelKind::svr), inner, {}, 5);
  ASSERT_EQ(res.trials.size(), 18u);
  for (const auto& t : res.trials) {
    ASSERT_EQ(t.inner_rmse.size(), 3u);
    double m = 0.0;
    for (double v : t.inner_rmse) m += v;
    EXPECT_DOUBLE_EQ(t.mean_rmse, m / 3.0);
  }
  for (const auto& t : res.trials) EXPECT_GE(t.mean_rmse, res.best_trial().mean_rmse);
  EXPECT_EQ(res.best_trial().rank, 1u);
  // the ranking is a permutation consistent with the scores
  for (const auto& a : res.trials) {
    for (const auto& b : res.trials) {
      if (a.rank < b.rank) {
        EXPECT_TRUE(a.mean_rmse < b.mean_rmse || (a.mean_rmse == b.mean_rmse && a.trial < b.trial));
      }
    }
  }
}

TEST_F(SmallSearch, DegenerateGridReturnsItsOnlyPoint) {
  search::SearchSpace one;
  one.model = ModelKind::svr;
  one.params = {search::ParamDomain::choice("C", {1.0}), search::ParamDomain::choice("epsilon", {0.1}),
                search::ParamDomain::choice("kernel", {"rbf"})};
  const auto inner = prepared_inner(*ds_, *plan_, 0);
  const auto res = search::grid_search(ModelKind::svr, one, inner, {}, 1);
  ASSERT_EQ(res.trials.size(), 1u);
  EXPECT_EQ(res.best_trial().assignment, (Assignment{{"C", 1.0}, {"epsilon", 0.1}, {"kernel", "rbf"}}));
}

TEST_F(SmallSearch, EmptySpaceAndZeroBudgetAreRejected) {
  const auto inner = prepared_inner(*ds_, *plan_, 0);
  search::SearchSpace empty;
  EXPECT_THROW(search::grid_search(ModelKind::svr, empty, inner, {}, 1), ParameterError);
  EXPECT_THROW(search::random_search(ModelKind::tcn, search::default_space(ModelKind::tcn), 0, 1, inner, {}),
               ParameterError);
}

TEST_F(SmallSearch, RandomSearchBudgetOneUsesTheFirstDraw) {
  const auto inner = prepared_inner(*ds_, *plan_, 1);
  const auto space = search::default_space(ModelKind::svr);
  auto cfg = quick_train();
  const auto res = search::random_search(ModelKind::svr, space, 1, 99, inner, cfg);
  ASSERT_EQ(res.trials.size(), 1u);
  Rng rng(99);
  EXPECT_EQ(res.best_trial().assignment, space.sample(rng));
}

TEST_F(SmallSearch, RandomSearchIsReproducible) {
  const auto inner = prepared_inner(*ds_, *plan_, 2);
  const auto space = search::default_space(ModelKind::tcn);
  auto cfg = quick_train();
  cfg.epochs = 4;
  const auto a = search::random_search(ModelKind::tcn, space, 3, 17, inner, cfg);
  const auto b = search::random_search(ModelKind::tcn, space, 3, 17, inner, cfg);
  ASSERT_EQ(a.trials.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.trials[i].assignment, b.trials[i].assignment);
    EXPECT_EQ(a.trials[i].inner_rmse, b.trials[i].inner_rmse);
    EXPECT_EQ(a.trials[i].rank, b.trials[i].rank);
    EXPECT_EQ(a.trials[i].seed, b.trials[i].seed);
  }
  EXPECT_EQ(a.best, b.best);
}

TEST(TrainingLoop, ReducesValidationLossAndKeepsTheBestWeights) {
  const auto ds = synthetic_windows(300);
  const auto plan = data::plan_nested_cv(ds.size());
  const auto sp = search::prepare_split(ds, plan.outer[0].inner[0], std::nullopt, nullptr, "");
  const Assignment a{{"layers", 1}, {"filters", 16}, {"kernel", 2}, {"optimizer", "Adam"}, {"learning_rate", 0.01}};
  auto cfg = quick_train();
  cfg.epochs = 40;
  auto before = search::make_regressor(ModelKind::tcn, a, 4, cfg, 5);
  const double initial = metrics::rmse(sp.val.targets, before->predict(sp.val));
  auto model = search::make_regressor(ModelKind::tcn, a, 4, cfg, 5);
  const auto rep = model->fit(sp.train, &sp.val);
  const double after = metrics::rmse(sp.val.targets, model->predict(sp.val));
  EXPECT_LT(after, 0.5 * initial);
  EXPECT_GE(rep.best_epoch, 1u);
  EXPECT_LE(rep.best_epoch, rep.epochs_run);
  // restored weights reproduce the best validation loss
  EXPECT_NEAR(after * after, rep.best_val_loss, 1e-12);
  EXPECT_FALSE(rep.diverged);
}

TEST(TrainingLoop, PatienceStopsEarlyAndFixedBudgetRunsExactly) {
  const auto ds = synthetic_windows(200);
  const auto plan = data::plan_nested_cv(ds.size());
  const auto sp = search::prepare_split(ds, plan.outer[0].inner[0], std::nullopt, nullptr, "");
  // validation targets far below anything the model is pushed towards, so the
  // validation loss stops improving almost at once
  data::WindowedDataset val = sp.val;
  for (double& y : val.targets) y = -10.0;
  const Assignment a{{"layers", 1}, {"units", 8}, {"dropout", 0.2}, {"optimizer", "Adam"}, {"learning_rate", 0.01}};
  auto cfg = quick_train();
  cfg.epochs = 200;
  cfg.patience = 3;
  auto m = search::make_regressor(ModelKind::lstm, a, 4, cfg, 1);
  const auto rep = m->fit(sp.train, &val);
  EXPECT_EQ(rep.epochs_run - rep.best_epoch, 3u);
  EXPECT_LT(rep.epochs_run, 200u);

  auto fixed = search::make_regressor(ModelKind::lstm, a, 4, cfg, 1);
  const auto rep2 = fixed->fit(sp.train, nullptr, 7);
  EXPECT_EQ(rep2.epochs_run, 7u);
  EXPECT_GE(rep2.best_epoch, 1u);
  EXPECT_LE(rep2.best_epoch, 7u);
}

TEST(TrainingLoop, DivergenceRestoresFiniteWeights) {
  const auto ds = synthetic_windows(200);
  const auto plan = data::plan_nested_cv(ds.size());
  const auto sp = search::prepare_split(ds, plan.outer[0].inner[0], std::nullopt, nullptr, "");
  // raw (unscaled) targets and a huge step make SGD blow up
  data::WindowedDataset raw = data::subset(ds, plan.outer[0].inner[0].train);
  const Assignment a{{"layers", 1}, {"filters", 16}, {"kernel", 2}, {"optimizer", "SGD"}, {"learning_rate", 0.1}};
  search::TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 0;
  for (double& y : raw.targets) y *= 1e6;
  auto m = search::make_regressor(ModelKind::tcn, a, 4, cfg, 2);
  const auto rep = m->fit(raw, nullptr);
  EXPECT_TRUE(rep.diverged);
  for (double v : m->predict(raw)) ASSERT_TRUE(std::isfinite(v));
}

TEST(Regressors, PersistenceRepeatsYesterdaysTarget) {
  const auto ds = synthetic_windows(60);
  search::PersistenceRegressor p;
  const auto pred = p.predict(ds);
  for (std::size_t i = 1; i < ds.size(); ++i) EXPECT_EQ(pred[i], ds.targets[i - 1]);
}

TEST(Regressors, BadAssignmentsAreParameterErrors) {
  search::TrainConfig cfg;
  EXPECT_THROW(search::make_regressor(ModelKind::lstm, Assignment{{"layers", 1}}, 4, cfg, 1), ParameterError);
  EXPECT_THROW(search::make_regressor(ModelKind::svr, Assignment{{"C", -1.0}, {"epsilon", 0.1}, {"kernel", "rbf"}}, 4,
                                      cfg, 1),
               ParameterError);
  EXPECT_THROW(search::make_regressor(ModelKind::tcn,
                                      Assignment{{"layers", 1}, {"filters", 8}, {"kernel", 2}, {"optimizer", "SGD"},
                                                 {"learning_rate", 0.0}},
                                      4, cfg, 1),
               ParameterError);
}

TEST(Benchmark, MedianTimeIsPositiveAndZeroRepeatsIsAnError) {
  const auto ds = synthetic_windows(200);
  search::PersistenceRegressor p;
  const double t = search::benchmark_inference(p, ds, 5);
  EXPECT_GT(t, 0.0);
  EXPECT_TRUE(std::isfinite(t));
  EXPECT_THROW(search::benchmark_inference(p, ds, 0), ParameterError);
}

class NestedSvr : public SmallSearch {};

TEST_F(NestedSvr, OuterTestRowsAreUntouchedUntilFinalEvaluation) {
  data::AccessAudit audit;
  const auto res = search::run_nested_cv(ModelKind::svr, *ds_, *plan_, search::default_space(ModelKind::svr), {},
                                         &audit, "M1");
  ASSERT_EQ(res.folds.size(), 5u);
  for (std::size_t o = 0; o < 5; ++o) {
    const auto& fold = plan_->outer[o];
    const std::set<std::size_t> test(fold.test.begin(), fold.test.end());
    const std::set<std::size_t> train(fold.train.begin(), fold.train.end());
    for (const char* phase : {"search", "refit"}) {
      const auto touched = audit.touched(search::phase_name(o, phase));
      ASSERT_FALSE(touched.empty());
      for (std::size_t i : touched) {
        ASSERT_EQ(test.count(i), 0u) << "fold " << o << " phase " << phase << " read test sample " << i;
        ASSERT_EQ(train.count(i), 1u);
      }
    }
    const auto tested = audit.touched(search::phase_name(o, "test"));
    EXPECT_EQ(std::set<std::size_t>(tested.begin(), tested.end()), test);
    EXPECT_EQ(res.folds[o].test_index, fold.test);
    EXPECT_EQ(res.folds[o].observed.size(), fold.test.size());
  }
  EXPECT_EQ(res.trials.size(), 5u * 18u);
}

TEST_F(NestedSvr, AverageRowIsTheMeanOfTheFoldRows) {
  const auto res = search::run_nested_cv(ModelKind::svr, *ds_, *plan_, search::default_space(ModelKind::svr), {});
  double mae = 0, rmse = 0, r2 = 0, kge = 0, nse = 0;
  for (const auto& f : res.folds) {
    mae += f.metrics.mae;
    rmse += f.metrics.rmse;
    r2 += f.metrics.r2;
    kge += f.metrics.kge;
    nse += f.metrics.nse;
  }
  EXPECT_NEAR(res.average.mae, mae / 5, 1e-12);
  EXPECT_NEAR(res.average.rmse, rmse / 5, 1e-12);
  EXPECT_NEAR(res.average.r2, r2 / 5, 1e-12);
  EXPECT_NEAR(res.average.kge, kge / 5, 1e-12);
  EXPECT_NEAR(res.average.nse, nse / 5, 1e-12);
  for (const auto& f : res.folds) {
    const auto m = metrics::evaluate_all(f.observed, f.predicted);
    EXPECT_EQ(m.rmse, f.metrics.rmse);
    EXPECT_EQ(m.nse, f.metrics.nse);
  }
}

TEST_F(NestedSvr, RunIsBitReproducible) {
  const auto space = search::default_space(ModelKind::svr);
  const auto a = search::run_nested_cv(ModelKind::svr, *ds_, *plan_, space, {});
  const auto b = search::run_nested_cv(ModelKind::svr, *ds_, *plan_, space, {});
  for (std::size_t o = 0; o < 5; ++o) {
    EXPECT_EQ(a.folds[o].predicted, b.folds[o].predicted);
    EXPECT_EQ(a.folds[o].assignment, b.folds[o].assignment);
  }
  for (std::size_t i = 0; i < a.trials.size(); ++i) EXPECT_EQ(a.trials[i].inner_rmse, b.trials[i].inner_rmse);
}

TEST_F(NestedSvr, GlobalBestModeRefitsEveryFoldWithOneAssignment) {
  search::SearchOptions opt;
  opt.selection = search::Selection::global_best;
  const auto res = search::run_nested_cv(ModelKind::svr, *ds_, *plan_, search::default_space(ModelKind::svr), opt);
  ASSERT_TRUE(res.global_assignment.has_value());
  ASSERT_EQ(res.global_folds.size(), 5u);
  for (const auto& f : res.global_folds) EXPECT_EQ(f.assignment, *res.global_assignment);
  bool found = false;
  for (const auto& f : res.folds) found = found || f.assignment == *res.global_assignment;
  EXPECT_TRUE(found);
}

TEST_F(NestedSvr, GlobalScalingFitsOnceOnAllSamples) {
  search::SearchOptions opt;
  opt.scaling = data::ScalingMode::global;
  const auto res = search::run_nested_cv(ModelKind::persistence, *ds_, *plan_, {}, opt);
  std::vector<std::size_t> all(ds_->size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto sc = data::scaler_fit(*ds_, all);
  for (const auto& f : res.folds) {
    for (std::size_t k = 0; k < f.test_index.size(); ++k) {
      EXPECT_EQ(f.observed[k], sc.apply("Q", ds_->targets[f.test_index[k]]));
    }
  }
}

TEST_F(SmallSearch, ConstantStubScoresNseNearZeroOnEveryFold) {
  const auto res = search::run_nested_cv(ModelKind::constant, *ds_, *plan_, {}, {});
  ASSERT_EQ(res.folds.size(), 5u);
  for (const auto& f : res.folds) {
    EXPECT_NEAR(f.metrics.nse, 0.0, 0.05);
    EXPECT_TRUE(std::isnan(f.metrics.r2));  // constant predictions have no correlation
  }
}

TEST_F(SmallSearch, ErrorsCarryFoldContext) {
  data::WindowedDataset ds = *ds_;
  ds.features[1] = "Q_lag";  // persistence can no longer find the target among the inputs
  try {
    search::run_nested_cv(ModelKind::persistence, ds, *plan_, {}, {});
    FAIL() << "expected an error";
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("outer fold 1"), std::string::npos) << e.what();
  }
  data::FoldPlan other = data::plan_nested_cv(ds_->size() - 1);
  EXPECT_THROW(search::run_nested_cv(ModelKind::constant, *ds_, other, {}, {}), ContractError);
}

TEST(NestedTcn, BeatsPersistenceOnSyntheticSeries) {
  const auto ds = synthetic_windows(700);
  const auto plan = data::plan_nested_cv(ds.size());
  search::SearchOptions opt;
  opt.budget = 2;
  opt.train = quick_train();
  const auto tcn = search::run_nested_cv(ModelKind::tcn, ds, plan, search::default_space(ModelKind::tcn), opt);
  const auto pers = search::run_nested_cv(ModelKind::persistence, ds, plan, {}, opt);
  EXPECT_GT(tcn.average.nse, pers.average.nse);
  for (const auto& f : tcn.folds) EXPECT_GE(f.refit_epochs, 1u);
}

TEST(TrialLog, AppendsOneParseableRecordPerTrial) {
  const auto path = std::filesystem::temp_directory_path() / "snowcast_trials_test.jsonl";
  std::filesystem::remove(path);
  std::vector<search::TrialRecord> t(3);
  for (std::size_t i = 0; i < 3; ++i) {
    t[i].outer_fold = 2;
    t[i].trial = i;
    t[i].assignment = {{"C", 1.0}};
    t[i].inner_rmse = {0.1, 0.2, 0.3};
    t[i].mean_rmse = 0.2;
    t[i].rank = i + 1;
    t[i].seed = 40 + i;
  }
  search::append_trial_log(path, t, ModelKind::svr, "M2");
  search::append_trial_log(path, {t[0]}, ModelKind::svr, "M2");
  std::ifstream in(path);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1]["model"], "SVR");
  EXPECT_EQ(rows[1]["feature_set"], "M2");
  EXPECT_EQ(rows[1]["fold"], 3);
  EXPECT_EQ(rows[1]["trial"], 1);
  EXPECT_EQ(rows[1]["seed"], 41);
  EXPECT_EQ(rows[1]["inner_rmse"].size(), 3u);
  EXPECT_EQ(rows[3], rows[0]);
  std::filesystem::remove(path);
}
