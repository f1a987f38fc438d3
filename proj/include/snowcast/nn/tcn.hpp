#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "snowcast/nn/common.hpp"

namespace snowcast::nn {

struct TcnConfig {
  std::size_t features = 1;
  std::size_t levels = 1;   // residual blocks; block l uses dilation 2^l
  std::size_t filters = 32;
  std::size_t kernel = 3;
  double dropout = 0.0;
  bool skip_connections = true;  // head reads the sum of all block outputs
};

struct TcnBlock {
  std::size_t in_channels = 0;
  std::size_t filters = 0;
  std::size_t dilation = 1;
  Parameter conv1_w, conv1_b, conv2_w, conv2_b;
  bool projected = false;  // 1x1 convolution on the residual path
  Parameter proj_w, proj_b;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&conv1_w, &conv1_b, &conv2_w, &conv2_b};
    if (projected) {
      out.push_back(&proj_w);
      out.push_back(&proj_b);
    }
    return out;
  }
};

/// Number of past steps (including the current one) a stack of `levels`
/// blocks can see: 1 + 2 (k - 1)(2^L - 1).
inline std::size_t tcn_receptive_field(std::size_t kernel, std::size_t levels) {
  return 1 + 2 * (kernel - 1) * ((std::size_t{1} << levels) - 1);
}

class Tcn {
 public:
  Tcn(const TcnConfig& config, Rng& rng) : config_(config) {
    if (config.features == 0 || config.levels == 0 || config.filters == 0 || config.kernel == 0) {
      throw ParameterError("Tcn: features, levels, filters and kernel must be positive");
    }
    if (config.levels > 16) throw ParameterError("Tcn: too many levels");
    if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw ParameterError("Tcn: dropout must be in [0, 1)");
    std::size_t in = config.features;
    const std::size_t k = config.kernel, f = config.filters;
    for (std::size_t l = 0; l < config.levels; ++l) {
      const std::string p = "tcn." + std::to_string(l) + ".";
      TcnBlock b;
      b.in_channels = in;
      b.filters = f;
      b.dilation = std::size_t{1} << l;
      b.conv1_w = Parameter(p + "conv1.w", glorot_uniform(rng, {k, in, f}, k * in, k * f));
      b.conv1_b = Parameter(p + "conv1.b", Tensor({f}));
      b.conv2_w = Parameter(p + "conv2.w", glorot_uniform(rng, {k, f, f}, k * f, k * f));
      b.conv2_b = Parameter(p + "conv2.b", Tensor({f}));
      if (in != f) {
        b.projected = true;
        b.proj_w = Parameter(p + "proj.w", glorot_uniform(rng, {1, in, f}, in, f));
        b.proj_b = Parameter(p + "proj.b", Tensor({f}));
      }
      blocks_.push_back(std::move(b));
      in = f;
    }
    head_w_ = Parameter("head.w", glorot_uniform(rng, {f, 1}, f, 1));
    head_b_ = Parameter("head.b", Tensor({1}));
  }

  const TcnConfig& config() const { return config_; }
  std::vector<TcnBlock>& blocks() { return blocks_; }
  Parameter& head_w() { return head_w_; }
  Parameter& head_b() { return head_b_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& b : blocks_) {
      for (Parameter* p : b.parameters()) out.push_back(p);
    }
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

 private:
  TcnConfig config_;
  std::vector<TcnBlock> blocks_;
  Parameter head_w_, head_b_;
};

/// conv -> relu -> dropout -> conv -> relu -> dropout, plus the (projected)
/// input. x is [batch x time x channels]; output [batch x time x filters].
inline Var tcn_residual_block(Graph& g, Var x, TcnBlock& b, double dropout = 0.0,
                              const ForwardMode& mode = ForwardMode::eval()) {
  if (x.shape().size() != 3 || x.shape()[2] != b.in_channels) {
    throw DimensionError("tcn_residual_block: expected [batch x time x " + std::to_string(b.in_channels) + "], got " +
                         shape_str(x.shape()));
  }
  Var h = ad::conv1d_causal_dilated(x, g.param(b.conv1_w), b.dilation);
  h = maybe_dropout(ad::relu(ad::add_bias(h, g.param(b.conv1_b))), dropout, mode);
  h = ad::conv1d_causal_dilated(h, g.param(b.conv2_w), b.dilation);
  h = maybe_dropout(ad::relu(ad::add_bias(h, g.param(b.conv2_b))), dropout, mode);
  Var residual = x;
  if (b.projected) residual = ad::add_bias(ad::conv1d_causal_dilated(x, g.param(b.proj_w), 1), g.param(b.proj_b));
  return ad::add(h, residual);
}

/// Full temporal stack, sequence output [batch x time x filters].
inline Var tcn_sequence(Graph& g, Var x, Tcn& model, const ForwardMode& mode = ForwardMode::eval()) {
  const TcnConfig& cfg = model.config();
  x = as_batched_sequence(x, cfg.features, "tcn_forward");
  Var skip;
  for (TcnBlock& b : model.blocks()) {
    x = tcn_residual_block(g, x, b, cfg.dropout, mode);
    if (cfg.skip_connections) skip = skip.valid() ? ad::add(skip, x) : x;
  }
  return cfg.skip_connections ? skip : x;
}

/// Linear head on the last time step; output [batch x 1].
inline Var tcn_forward(Graph& g, Var x, Tcn& model, const ForwardMode& mode = ForwardMode::eval()) {
  Var seq = tcn_sequence(g, x, model, mode);
  Var last = ad::time_step(seq, seq.shape()[1] - 1);
  return dense(g, last, model.head_w(), model.head_b());
}

}  // namespace snowcast::nn
