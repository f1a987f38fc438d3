#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "snowcast/nn/common.hpp"

namespace snowcast::nn {

struct LstmConfig {
  std::size_t features = 1;
  std::size_t hidden = 32;
  std::size_t layers = 1;
  double dropout = 0.0;  // applied to each layer's output sequence
};

/// Gate weights act on the row vector [h_{t-1}, x_t] of width hidden + input.
struct LstmLayer {
  std::size_t input_size = 0;
  std::size_t hidden = 0;
  Parameter w_f, w_i, w_c, w_o;
  Parameter b_f, b_i, b_c, b_o;

  std::vector<Parameter*> parameters() { return {&w_f, &w_i, &w_c, &w_o, &b_f, &b_i, &b_c, &b_o}; }
};

class Lstm {
 public:
  Lstm(const LstmConfig& config, Rng& rng) : config_(config) {
    validate();
    std::size_t in = config.features;
    for (std::size_t l = 0; l < config.layers; ++l) {
      const std::string p = "lstm." + std::to_string(l) + ".";
      LstmLayer layer;
      layer.input_size = in;
      layer.hidden = config.hidden;
      const std::size_t rows = config.hidden + in;
      auto weight = [&](const char* n) {
        return Parameter(p + n, glorot_uniform(rng, {rows, config.hidden}, rows, config.hidden));
      };
      layer.w_f = weight("w_f");
      layer.w_i = weight("w_i");
      layer.w_c = weight("w_c");
      layer.w_o = weight("w_o");
      // forget-gate bias starts at 1 so early training keeps the cell state
      layer.b_f = Parameter(p + "b_f", Tensor({config.hidden}, 1.0));
      layer.b_i = Parameter(p + "b_i", Tensor({config.hidden}));
      layer.b_c = Parameter(p + "b_c", Tensor({config.hidden}));
      layer.b_o = Parameter(p + "b_o", Tensor({config.hidden}));
      layers_.push_back(std::move(layer));
      in = config.hidden;
    }
    head_w_ = Parameter("head.w", glorot_uniform(rng, {config.hidden, 1}, config.hidden, 1));
    head_b_ = Parameter("head.b", Tensor({1}));
  }

  const LstmConfig& config() const { return config_; }
  std::vector<LstmLayer>& layers() { return layers_; }
  Parameter& head_w() { return head_w_; }
  Parameter& head_b() { return head_b_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      for (Parameter* p : l.parameters()) out.push_back(p);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

 private:
  void validate() const {
    if (config_.features == 0 || config_.hidden == 0 || config_.layers == 0) {
      throw ParameterError("Lstm: features, hidden and layers must be positive");
    }
    if (!(config_.dropout >= 0.0 && config_.dropout < 1.0)) throw ParameterError("Lstm: dropout must be in [0, 1)");
  }

  LstmConfig config_;
  std::vector<LstmLayer> layers_;
  Parameter head_w_, head_b_;
};

struct LstmState {
  Var h;
  Var c;
};

/// One step of the cell for a batch: x_t [batch x input], h/c [batch x hidden].
///   f = sig([h,x] W_f + b_f), i = sig([h,x] W_i + b_i), c^ = tanh([h,x] W_c + b_c)
///   c_t = f * c_prev + i * c^, o = sig([h,x] W_o + b_o), h_t = o * tanh(c_t)
inline LstmState lstm_cell_forward(Graph& g, Var x_t, Var h_prev, Var c_prev, LstmLayer& p) {
  if (x_t.shape().size() != 2 || x_t.shape()[1] != p.input_size) {
    throw DimensionError("lstm_cell_forward: input " + shape_str(x_t.shape()) + " but layer expects width " +
                         std::to_string(p.input_size));
  }
  if (h_prev.shape() != c_prev.shape() || h_prev.shape() != Shape{x_t.shape()[0], p.hidden}) {
    throw DimensionError("lstm_cell_forward: state shapes " + shape_str(h_prev.shape()) + "/" +
                         shape_str(c_prev.shape()) + " do not match hidden size " + std::to_string(p.hidden));
  }
  Var hx = ad::concat_cols(h_prev, x_t);
  Var f = ad::sigmoid(dense(g, hx, p.w_f, p.b_f));
  Var i = ad::sigmoid(dense(g, hx, p.w_i, p.b_i));
  Var c_hat = ad::tanh(dense(g, hx, p.w_c, p.b_c));
  Var c = ad::add(ad::mul(f, c_prev), ad::mul(i, c_hat));
  Var o = ad::sigmoid(dense(g, hx, p.w_o, p.b_o));
  Var h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

/// Unrolls every layer over the window and regresses from the last hidden state.
/// Input [window x features] or [batch x window x features]; output [batch x 1].
inline Var lstm_forward(Graph& g, Var x, Lstm& model, const ForwardMode& mode = ForwardMode::eval()) {
  const LstmConfig& cfg = model.config();
  x = as_batched_sequence(x, cfg.features, "lstm_forward");
  const std::size_t batch = x.shape()[0], window = x.shape()[1];
  std::vector<Var> seq;
  seq.reserve(window);
  for (std::size_t t = 0; t < window; ++t) seq.push_back(ad::time_step(x, t));
  for (LstmLayer& layer : model.layers()) {
    Var h = g.constant(Tensor({batch, layer.hidden}));
    Var c = h;
    for (std::size_t t = 0; t < window; ++t) {
      LstmState s = lstm_cell_forward(g, seq[t], h, c, layer);
      h = s.h;
      c = s.c;
      seq[t] = maybe_dropout(h, cfg.dropout, mode);
    }
  }
  return dense(g, seq.back(), model.head_w(), model.head_b());
}

}  // namespace snowcast::nn
