#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "snowcast/nn/common.hpp"

namespace snowcast::nn {

/// Encoder-only regressor.
///
/// `model_width` is the width of the residual stream after the input
/// projection. Each block projects it to `heads * head_size` for attention
/// and back through W_o, so any (heads, head_size) pair is valid.
struct TransformerConfig {
  std::size_t features = 1;
  std::size_t model_width = 16;
  std::size_t blocks = 2;
  std::size_t heads = 2;
  std::size_t head_size = 8;
  std::size_t ff_dim = 16;
  double dropout = 0.1;
  std::vector<std::size_t> mlp_units{32};
  double mlp_dropout = 0.1;
  double pe_base = 10000.0;
};

/// PE(pos, 2i) = sin(pos / base^(2i/d)), PE(pos, 2i+1) = cos(pos / base^(2i/d)).
inline Tensor positional_encoding(std::size_t window, std::size_t d_model, double base = 10000.0) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ParameterError("positional_encoding: d_model must be a positive even number, got " + std::to_string(d_model));
  }
  if (window == 0) throw ParameterError("positional_encoding: window must be positive");
  if (!(base > 0.0)) throw ParameterError("positional_encoding: base must be positive");
  Tensor pe({window, d_model});
  for (std::size_t pos = 0; pos < window; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(base, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe.at(pos, 2 * i) = std::sin(angle);
      pe.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

struct AttentionParams {
  std::size_t heads = 1;
  std::size_t head_size = 1;
  Parameter w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;

  std::vector<Parameter*> parameters() { return {&w_q, &b_q, &w_k, &b_k, &w_v, &b_v, &w_o, &b_o}; }
};

struct EncoderBlock {
  AttentionParams attention;
  Parameter norm1_gain, norm1_shift;
  Parameter ff_w1, ff_b1, ff_w2, ff_b2;
  Parameter norm2_gain, norm2_shift;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out = attention.parameters();
    for (Parameter* p : {&norm1_gain, &norm1_shift, &ff_w1, &ff_b1, &ff_w2, &ff_b2, &norm2_gain, &norm2_shift})
      out.push_back(p);
    return out;
  }
};

inline AttentionParams make_attention(Rng& rng, const std::string& prefix, std::size_t width, std::size_t heads,
                                      std::size_t head_size) {
  const std::size_t inner = heads * head_size;
  AttentionParams a;
  a.heads = heads;
  a.head_size = head_size;
  a.w_q = Parameter(prefix + "w_q", glorot_uniform(rng, {width, inner}, width, inner));
  a.b_q = Parameter(prefix + "b_q", Tensor({inner}));
  a.w_k = Parameter(prefix + "w_k", glorot_uniform(rng, {width, inner}, width, inner));
  a.b_k = Parameter(prefix + "b_k", Tensor({inner}));
  a.w_v = Parameter(prefix + "w_v", glorot_uniform(rng, {width, inner}, width, inner));
  a.b_v = Parameter(prefix + "b_v", Tensor({inner}));
  a.w_o = Parameter(prefix + "w_o", glorot_uniform(rng, {inner, width}, inner, width));
  a.b_o = Parameter(prefix + "b_o", Tensor({width}));
  return a;
}

class Transformer {
 public:
  Transformer(const TransformerConfig& config, Rng& rng) : config_(config) {
    validate();
    const std::size_t d = config.model_width;
    in_w_ = Parameter("input.w", glorot_uniform(rng, {config.features, d}, config.features, d));
    in_b_ = Parameter("input.b", Tensor({d}));
    for (std::size_t b = 0; b < config.blocks; ++b) {
      const std::string p = "block." + std::to_string(b) + ".";
      EncoderBlock blk;
      blk.attention = make_attention(rng, p + "attn.", d, config.heads, config.head_size);
      blk.norm1_gain = Parameter(p + "norm1.gain", Tensor({d}, 1.0));
      blk.norm1_shift = Parameter(p + "norm1.shift", Tensor({d}));
      blk.ff_w1 = Parameter(p + "ff.w1", glorot_uniform(rng, {d, config.ff_dim}, d, config.ff_dim));
      blk.ff_b1 = Parameter(p + "ff.b1", Tensor({config.ff_dim}));
      blk.ff_w2 = Parameter(p + "ff.w2", glorot_uniform(rng, {config.ff_dim, d}, config.ff_dim, d));
      blk.ff_b2 = Parameter(p + "ff.b2", Tensor({d}));
      blk.norm2_gain = Parameter(p + "norm2.gain", Tensor({d}, 1.0));
      blk.norm2_shift = Parameter(p + "norm2.shift", Tensor({d}));
      blocks_.push_back(std::move(blk));
    }
    std::size_t in = d;
    for (std::size_t l = 0; l < config.mlp_units.size(); ++l) {
      const std::size_t out = config.mlp_units[l];
      const std::string p = "mlp." + std::to_string(l) + ".";
      mlp_w_.emplace_back(p + "w", glorot_uniform(rng, {in, out}, in, out));
      mlp_b_.emplace_back(p + "b", Tensor({out}));
      in = out;
    }
    head_w_ = Parameter("head.w", glorot_uniform(rng, {in, 1}, in, 1));
    head_b_ = Parameter("head.b", Tensor({1}));
  }

  const TransformerConfig& config() const { return config_; }
  Parameter& input_w() { return in_w_; }
  Parameter& input_b() { return in_b_; }
  std::vector<EncoderBlock>& blocks() { return blocks_; }
  std::vector<Parameter>& mlp_w() { return mlp_w_; }
  std::vector<Parameter>& mlp_b() { return mlp_b_; }
  Parameter& head_w() { return head_w_; }
  Parameter& head_b() { return head_b_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&in_w_, &in_b_};
    for (auto& b : blocks_) {
      for (Parameter* p : b.parameters()) out.push_back(p);
    }
    for (std::size_t l = 0; l < mlp_w_.size(); ++l) {
      out.push_back(&mlp_w_[l]);
      out.push_back(&mlp_b_[l]);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

 private:
  void validate() const {
    const auto& c = config_;
    if (c.features == 0 || c.blocks == 0 || c.heads == 0 || c.head_size == 0 || c.ff_dim == 0) {
      throw ParameterError("Transformer: features, blocks, heads, head_size and ff_dim must be positive");
    }
    if (c.model_width == 0 || c.model_width % 2 != 0) {
      throw ParameterError("Transformer: model_width must be a positive even number");
    }
    for (std::size_t u : c.mlp_units) {
      if (u == 0) throw ParameterError("Transformer: MLP units must be positive");
    }
    for (double r : {c.dropout, c.mlp_dropout}) {
      if (!(r >= 0.0 && r < 1.0)) throw ParameterError("Transformer: dropout must be in [0, 1)");
    }
  }

  TransformerConfig config_;
  Parameter in_w_, in_b_;
  std::vector<EncoderBlock> blocks_;
  std::vector<Parameter> mlp_w_, mlp_b_;
  Parameter head_w_, head_b_;
};

/// Self-attention over x [(batch*time) x width]:
///   Concat(head_1..head_n) W_o, head_j = softmax(Q_j K_j^T / sqrt(d_k)) V_j
/// `weights`, when given, receives the per-(batch, head) probability matrices.
inline Var multi_head_attention(Graph& g, Var x, std::size_t batch, std::size_t time, AttentionParams& p,
                                std::vector<Tensor>* weights = nullptr) {
  if (x.shape().size() != 2 || x.shape()[0] != batch * time) {
    throw DimensionError("multi_head_attention: expected [(batch*time) x width], got " + shape_str(x.shape()));
  }
  if (p.w_q.value.dim(0) != x.shape()[1]) {
    throw DimensionError("multi_head_attention: width " + std::to_string(x.shape()[1]) + " but projections expect " +
                         std::to_string(p.w_q.value.dim(0)));
  }
  if (p.w_q.value.dim(1) != p.heads * p.head_size) {
    throw ParameterError("multi_head_attention: projection width " + std::to_string(p.w_q.value.dim(1)) +
                         " is not heads x head_size");
  }
  Var q = dense(g, x, p.w_q, p.b_q);
  Var k = dense(g, x, p.w_k, p.b_k);
  Var v = dense(g, x, p.w_v, p.b_v);
  Var heads = ad::scaled_dot_attention(q, k, v, batch, time, p.heads, weights);
  return dense(g, heads, p.w_o, p.b_o);
}

/// Post-norm encoder block: Add&Norm after attention and after the feed-forward.
inline Var encoder_block(Graph& g, Var x, std::size_t batch, std::size_t time, EncoderBlock& blk, double dropout,
                         const ForwardMode& mode, std::vector<Tensor>* weights = nullptr) {
  Var a = maybe_dropout(multi_head_attention(g, x, batch, time, blk.attention, weights), dropout, mode);
  x = ad::layer_norm(ad::add(x, a), g.param(blk.norm1_gain), g.param(blk.norm1_shift));
  Var f = ad::relu(dense(g, x, blk.ff_w1, blk.ff_b1));
  f = maybe_dropout(dense(g, f, blk.ff_w2, blk.ff_b2), dropout, mode);
  return ad::layer_norm(ad::add(x, f), g.param(blk.norm2_gain), g.param(blk.norm2_shift));
}

/// Input projection + positional encoding -> encoder blocks -> last time step
/// -> MLP head. Input [window x features] or [batch x window x features];
/// output [batch x 1].
inline Var transformer_forward(Graph& g, Var x, Transformer& model, const ForwardMode& mode = ForwardMode::eval(),
                               std::vector<std::vector<Tensor>>* attention_weights = nullptr) {
  const TransformerConfig& cfg = model.config();
  x = as_batched_sequence(x, cfg.features, "transformer_forward");
  const std::size_t batch = x.shape()[0], time = x.shape()[1], d = cfg.model_width;
  Var h = dense(g, ad::reshape(x, {batch * time, cfg.features}), model.input_w(), model.input_b());
  h = ad::add_tiled(h, g.constant(positional_encoding(time, d, cfg.pe_base)));
  if (attention_weights) attention_weights->assign(model.blocks().size(), {});
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    h = encoder_block(g, h, batch, time, model.blocks()[b], cfg.dropout, mode,
                      attention_weights ? &(*attention_weights)[b] : nullptr);
  }
  h = ad::time_step(ad::reshape(h, {batch, time, d}), time - 1);
  for (std::size_t l = 0; l < model.mlp_w().size(); ++l) {
    h = maybe_dropout(ad::relu(dense(g, h, model.mlp_w()[l], model.mlp_b()[l])), cfg.mlp_dropout, mode);
  }
  return dense(g, h, model.head_w(), model.head_b());
}

}  // namespace snowcast::nn
