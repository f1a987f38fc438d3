#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/graph.hpp"
#include "snowcast/core/ops.hpp"
#include "snowcast/core/rng.hpp"
#include "snowcast/data/windows.hpp"
#include "snowcast/nn/lstm.hpp"
#include "snowcast/nn/params_io.hpp"
#include "snowcast/nn/tcn.hpp"
#include "snowcast/nn/transformer.hpp"
#include "snowcast/optim/optimizer.hpp"
#include "snowcast/search/space.hpp"
#include "snowcast/svr/svr.hpp"

namespace snowcast::search {

using ad::Graph;
using ad::Var;
using data::WindowedDataset;

/// Training loop knobs plus the architecture settings that are not searched.
struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t patience = 20;      // epochs without validation improvement before stopping
  std::size_t batch_size = 0;     // 0 = full batch
  std::size_t predict_batch = 1024;
  std::size_t transformer_width = 16;
  double pe_base = 10000.0;
  double tcn_dropout = 0.0;
  bool tcn_skip_connections = true;
  std::size_t refit_attempts = 3;  // fresh initialisations tried when a refit diverges before its first epoch
};

struct FitReport {
  std::size_t best_epoch = 0;  // 0 when no epoch beat the initial weights
  std::size_t epochs_run = 0;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
};

class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual ModelKind kind() const = 0;
  /// With `val`, trains with early stopping and keeps the best-validation
  /// weights. Without it, trains for exactly `epochs` epochs (0 = configured
  /// budget) and keeps the epoch with the lowest training loss.
  virtual FitReport fit(const WindowedDataset& train, const WindowedDataset* val, std::size_t epochs = 0) = 0;
  virtual std::vector<double> predict(const WindowedDataset& ds) = 0;
  /// Trained state; load_state on a model built from the same assignment
  /// restores identical predictions.
  virtual nlohmann::json state() = 0;
  virtual void load_state(const nlohmann::json& j) = 0;
};

/// y'_t = last observed value of the target column inside the window.
class PersistenceRegressor final : public Regressor {
 public:
  ModelKind kind() const override { return ModelKind::persistence; }
  FitReport fit(const WindowedDataset&, const WindowedDataset*, std::size_t) override { return {}; }
  std::vector<double> predict(const WindowedDataset& ds) override {
    std::size_t col = ds.features.size();
    for (std::size_t f = 0; f < ds.features.size(); ++f) {
      if (ds.features[f] == ds.target) col = f;
    }
    if (col == ds.features.size()) throw ParameterError("persistence: target " + ds.target + " is not an input feature");
    std::vector<double> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) out[i] = ds.inputs.at(i, ds.window - 1, col);
    return out;
  }
  nlohmann::json state() override { return nlohmann::json::object(); }
  void load_state(const nlohmann::json&) override {}
};

/// Predicts the training-target mean everywhere.
class ConstantRegressor final : public Regressor {
 public:
  ModelKind kind() const override { return ModelKind::constant; }
  FitReport fit(const WindowedDataset& train, const WindowedDataset*, std::size_t) override {
    mean_ = std::accumulate(train.targets.begin(), train.targets.end(), 0.0) / static_cast<double>(train.size());
    return {};
  }
  std::vector<double> predict(const WindowedDataset& ds) override { return std::vector<double>(ds.size(), mean_); }
  nlohmann::json state() override { return {{"mean", mean_}}; }
  void load_state(const nlohmann::json& j) override { mean_ = j.at("mean").get<double>(); }

 private:
  double mean_ = 0.0;
};

class SvrRegressor final : public Regressor {
 public:
  explicit SvrRegressor(svr::SvrSpec spec, svr::SvrOptions opt = {}) : spec_(spec), opt_(opt) {
    svr::SvrSpec probe = spec_;
    if (probe.sigma <= 0.0) probe.sigma = 1.0;  // resolved from the data in fit
    probe.validate();
  }
  ModelKind kind() const override { return ModelKind::svr; }
  FitReport fit(const WindowedDataset& train, const WindowedDataset*, std::size_t) override {
    model_ = svr::svr_fit(data::flatten_inputs(train), train.targets, spec_, opt_);
    return {};
  }
  std::vector<double> predict(const WindowedDataset& ds) override {
    if (!model_) throw ContractError("SVR: predict before fit");
    return svr::svr_predict(*model_, data::flatten_inputs(ds));
  }
  const svr::SvrModel& model() const { return *model_; }
  nlohmann::json state() override {
    if (!model_) throw ContractError("SVR: state before fit");
    return svr::svr_to_json(*model_);
  }
  void load_state(const nlohmann::json& j) override { model_ = svr::svr_from_json(j); }

 private:
  svr::SvrSpec spec_;
  svr::SvrOptions opt_;
  std::optional<svr::SvrModel> model_;
};

namespace detail {

inline Tensor gather_inputs(const WindowedDataset& ds, const std::vector<std::size_t>& order, std::size_t start,
                            std::size_t len) {
  const std::size_t per = ds.window * ds.features.size();
  std::vector<double> buf;
  buf.reserve(len * per);
  const auto src = ds.inputs.data();
  for (std::size_t k = start; k < start + len; ++k) {
    const auto row = src.subspan(order[k] * per, per);
    buf.insert(buf.end(), row.begin(), row.end());
  }
  return Tensor({len, ds.window, ds.features.size()}, std::move(buf));
}

inline Tensor gather_targets(const WindowedDataset& ds, const std::vector<std::size_t>& order, std::size_t start,
                             std::size_t len) {
  std::vector<double> buf;
  buf.reserve(len);
  for (std::size_t k = start; k < start + len; ++k) buf.push_back(ds.targets[order[k]]);
  return Tensor({len, 1}, std::move(buf));
}

inline std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

inline void restore(const std::vector<Parameter*>& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace detail

/// Gradient-trained network. `Forward` is one of the nn::*_forward functions.
template <class Net, Var (*Forward)(Graph&, Var, Net&, const nn::ForwardMode&)>
class NetRegressor final : public Regressor {
 public:
  NetRegressor(ModelKind kind, Net net, optim::OptimizerKind opt, double lr, TrainConfig cfg, std::uint64_t seed)
      : kind_(kind), net_(std::move(net)), opt_(opt), lr_(lr), cfg_(cfg), rng_(seed) {
    if (!(lr > 0.0)) throw ParameterError(to_string(kind) + ": learning rate must be positive");
  }

  ModelKind kind() const override { return kind_; }
  Net& net() { return net_; }
  nlohmann::json state() override { return nn::params_to_json(net_.parameters()); }
  void load_state(const nlohmann::json& j) override { nn::params_from_json(j, net_.parameters()); }

  FitReport fit(const WindowedDataset& train, const WindowedDataset* val, std::size_t epochs) override {
    if (train.size() == 0) throw ParameterError(to_string(kind_) + ": empty training set");
    const std::size_t budget = epochs > 0 ? epochs : cfg_.epochs;
    const auto params = net_.parameters();
    optim::Optimizer optimizer(opt_, lr_, params);
    FitReport rep;
    std::vector<Tensor> best = detail::snapshot(params);
    double best_loss = val ? loss_on(*val) : std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = cfg_.batch_size == 0 ? train.size() : std::min(cfg_.batch_size, train.size());

    for (std::size_t e = 1; e <= budget; ++e) {
      try {
        if (cfg_.batch_size > 0) rng_.shuffle(order);
        for (std::size_t start = 0; start < train.size(); start += batch) {
          const std::size_t len = std::min(batch, train.size() - start);
          optimizer.zero_grad();
          Graph g;
          Var x = g.constant(detail::gather_inputs(train, order, start, len));
          Var loss = ad::mse_loss(Forward(g, x, net_, nn::ForwardMode::train(rng_)),
                                  detail::gather_targets(train, order, start, len));
          g.backward(loss);
          optimizer.step();
        }
        for (const Parameter* p : params) {
          if (!p->value.all_finite()) throw NumericError(p->name + " is no longer finite");
        }
        rep.epochs_run = e;
        if (val) {
          const double v = loss_on(*val);
          if (!std::isfinite(v)) throw NumericError("validation loss is not finite");
          if (v < best_loss) {
            best_loss = v;
            rep.best_epoch = e;
            best = detail::snapshot(params);
          } else if (e - rep.best_epoch >= cfg_.patience) {
            break;
          }
        } else {
          // keep the epoch with the lowest full-pass training loss; finite
          // weights can still overflow here
          const double t = loss_on(train);
          if (!std::isfinite(t)) throw NumericError("training loss is not finite");
          if (t < best_loss) {
            best_loss = t;
            rep.best_epoch = e;
            best = detail::snapshot(params);
          }
        }
      } catch (const NumericError&) {
        rep.diverged = true;
        break;
      }
    }
    detail::restore(params, best);
    rep.best_val_loss = val ? best_loss : std::numeric_limits<double>::quiet_NaN();
    return rep;
  }

  std::vector<double> predict(const WindowedDataset& ds) override {
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> out;
    out.reserve(ds.size());
    const std::size_t step = std::max<std::size_t>(1, cfg_.predict_batch);
    for (std::size_t start = 0; start < ds.size(); start += step) {
      const std::size_t len = std::min(step, ds.size() - start);
      Graph g;
      Var y = Forward(g, g.constant(detail::gather_inputs(ds, order, start, len)), net_, nn::ForwardMode::eval());
      const auto v = y.value().data();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

 private:
  double loss_on(const WindowedDataset& ds) {
    const std::vector<double> p = predict(ds);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - ds.targets[i]) * (p[i] - ds.targets[i]);
    return s / static_cast<double>(p.size());
  }

  ModelKind kind_;
  Net net_;
  optim::OptimizerKind opt_;
  double lr_;
  TrainConfig cfg_;
  Rng rng_;  // dropout masks and batch order
};

using LstmRegressor = NetRegressor<nn::Lstm, &nn::lstm_forward>;
using TcnRegressor = NetRegressor<nn::Tcn, &nn::tcn_forward>;

inline Var transformer_forward_plain(Graph& g, Var x, nn::Transformer& m, const nn::ForwardMode& mode) {
  return nn::transformer_forward(g, x, m, mode);
}
using TransformerRegressor = NetRegressor<nn::Transformer, &transformer_forward_plain>;

/// Builds an untrained model for `assignment`. Weights are drawn from `seed`.
inline std::unique_ptr<Regressor> make_regressor(ModelKind kind, const Assignment& a, std::size_t features,
                                                 const TrainConfig& cfg, std::uint64_t seed) {
  Rng init(mix_seed(seed, 0));
  const std::uint64_t train_seed = mix_seed(seed, 1);
  const auto opt = [&] { return optim::parse_optimizer(a.at("optimizer").get<std::string>()); };
  const auto lr = [&] { return a.at("learning_rate").get<double>(); };
  try {
    switch (kind) {
      case ModelKind::svr: {
        svr::SvrSpec s;
        s.C = a.at("C").get<double>();
        s.epsilon = a.at("epsilon").get<double>();
        s.kernel = svr::parse_kernel(a.at("kernel").get<std::string>());
        return std::make_unique<SvrRegressor>(s);
      }
      case ModelKind::lstm: {
        nn::LstmConfig c;
        c.features = features;
        c.layers = a.at("layers").get<std::size_t>();
        c.hidden = a.at("units").get<std::size_t>();
        c.dropout = a.at("dropout").get<double>();
        return std::make_unique<LstmRegressor>(kind, nn::Lstm(c, init), opt(), lr(), cfg, train_seed);
      }
      case ModelKind::transformer: {
        nn::TransformerConfig c;
        c.features = features;
        c.model_width = cfg.transformer_width;
        c.pe_base = cfg.pe_base;
        c.blocks = a.at("blocks").get<std::size_t>();
        c.head_size = a.at("head_size").get<std::size_t>();
        c.heads = a.at("heads").get<std::size_t>();
        c.ff_dim = a.at("ff_dim").get<std::size_t>();
        c.dropout = a.at("dropout").get<double>();
        c.mlp_units = a.at("mlp_units").get<std::vector<std::size_t>>();
        c.mlp_dropout = a.at("mlp_dropout").get<double>();
        return std::make_unique<TransformerRegressor>(kind, nn::Transformer(c, init), opt(), lr(), cfg, train_seed);
      }
      case ModelKind::tcn: {
        nn::TcnConfig c;
        c.features = features;
        c.levels = a.at("layers").get<std::size_t>();
        c.filters = a.at("filters").get<std::size_t>();
        c.kernel = a.at("kernel").get<std::size_t>();
        c.dropout = cfg.tcn_dropout;
        c.skip_connections = cfg.tcn_skip_connections;
        return std::make_unique<TcnRegressor>(kind, nn::Tcn(c, init), opt(), lr(), cfg, train_seed);
      }
      case ModelKind::persistence: return std::make_unique<PersistenceRegressor>();
      case ModelKind::constant: return std::make_unique<ConstantRegressor>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(to_string(kind) + ": bad hyperparameter assignment " + a.dump() + ": " + e.what());
  }
  throw ParameterError("make_regressor: unknown model kind");
}

}  // namespace snowcast::search
