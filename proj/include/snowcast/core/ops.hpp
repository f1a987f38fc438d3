#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/graph.hpp"
#include "snowcast/core/rng.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::ad {

enum class Activation { sigmoid, tanh, relu };

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

inline ConstMatMap view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MatMap view(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Graph& same_graph(const Var& a, const Var& b, const char* op) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph()) {
    throw ContractError(std::string(op) + ": operands belong to different graphs");
  }
  return a.graph();
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// [m x k] * [k x n]. Backward: dA += dC B^T, dB += A^T dC.
inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(A.shape()) + " by " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  detail::view(C, m, n).noalias() = detail::view(A, m, k) * detail::view(B, k, n);
  return g.record("matmul", std::move(C), {a.id(), b.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& dC = gr.grad(self);
    auto dc = detail::view(dC, m, n);
    if (gr.requires_grad(a.id())) {
      detail::view(gr.grad(a.id()), m, k).noalias() += dc * detail::view(gr.value(b.id()), k, n).transpose();
    }
    if (gr.requires_grad(b.id())) {
      detail::view(gr.grad(b.id()), k, n).noalias() += detail::view(gr.value(a.id()), m, k).transpose() * dc;
    }
  });
}

inline Var add(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "add");
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return g.record("add", std::move(out), {a.id(), b.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    for (std::size_t in : {a.id(), b.id()}) {
      if (!gr.requires_grad(in)) continue;
      Tensor& gi = gr.grad(in);
      for (std::size_t i = 0; i < d.size(); ++i) gi[i] += d[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "sub");
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return g.record("sub", std::move(out), {a.id(), b.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    if (gr.requires_grad(a.id())) {
      Tensor& ga = gr.grad(a.id());
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i];
    }
    if (gr.requires_grad(b.id())) {
      Tensor& gb = gr.grad(b.id());
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] -= d[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return g.record("mul", std::move(out), {a.id(), b.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    if (gr.requires_grad(a.id())) {
      Tensor& ga = gr.grad(a.id());
      const Tensor& vb = gr.value(b.id());
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * vb[i];
    }
    if (gr.requires_grad(b.id())) {
      Tensor& gb = gr.grad(b.id());
      const Tensor& va = gr.value(a.id());
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * va[i];
    }
  });
}

inline Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  return x.graph().record("scale", std::move(out), {x.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    Tensor& gx = gr.grad(x.id());
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += factor * d[i];
  });
}

/// Adds a bias vector along the last axis (broadcast over all leading axes).
inline Var add_bias(Var x, Var bias) {
  Graph& g = detail::same_graph(x, bias, "add_bias");
  const Tensor& X = x.value();
  const std::size_t n = X.shape().back();
  if (bias.value().size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(X.shape()));
  }
  const std::size_t rows = X.size() / n;
  Tensor out = X;
  const Tensor& b = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
  }
  return g.record("add_bias", std::move(out), {x.id(), bias.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    if (gr.requires_grad(x.id())) {
      Tensor& gx = gr.grad(x.id());
      for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
    }
    if (gr.requires_grad(bias.id())) {
      Tensor& gb = gr.grad(bias.id());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) gb[c] += d[r * n + c];
      }
    }
  });
}

inline Var activation(Var x, Activation kind) {
  Tensor out = x.value();
  switch (kind) {
    case Activation::sigmoid:
      for (double& v : out.values()) v = detail::sigmoid(v);
      break;
    case Activation::tanh:
      for (double& v : out.values()) v = std::tanh(v);
      break;
    case Activation::relu:
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      break;
  }
  static constexpr const char* names[] = {"sigmoid", "tanh", "relu"};
  return x.graph().record(names[static_cast<int>(kind)], std::move(out), {x.id()},
                          [=](Graph& gr, std::size_t self) {
                            const Tensor& d = gr.grad(self);
                            const Tensor& y = gr.value(self);
                            Tensor& gx = gr.grad(x.id());
                            switch (kind) {
                              case Activation::sigmoid:
                                for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * y[i] * (1.0 - y[i]);
                                break;
                              case Activation::tanh:
                                for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * (1.0 - y[i] * y[i]);
                                break;
                              case Activation::relu:
                                for (std::size_t i = 0; i < d.size(); ++i) gx[i] += y[i] > 0.0 ? d[i] : 0.0;
                                break;
                            }
                          });
}

inline Var sigmoid(Var x) { return activation(x, Activation::sigmoid); }
inline Var tanh(Var x) { return activation(x, Activation::tanh); }
inline Var relu(Var x) { return activation(x, Activation::relu); }

namespace detail {

// Row-wise softmax with max subtraction; rows of `in` and `out` may alias.
inline void softmax_rows_inplace(double* data, std::size_t rows, std::size_t cols, std::size_t stride) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = data + r * stride;
    double peak = row[0];
    for (std::size_t c = 1; c < cols; ++c) peak = std::max(peak, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - peak);
      total += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
  }
}

}  // namespace detail

inline Var softmax_rows(Var x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out = x.value();
  detail::softmax_rows_inplace(out.data().data(), r, c, c);
  return x.graph().record("softmax_rows", std::move(out), {x.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    const Tensor& y = gr.value(self);
    Tensor& gx = gr.grad(x.id());
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += d[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (d[i * c + j] - dot);
    }
  });
}

/// [m x p] ++ [m x q] -> [m x (p+q)].
inline Var concat_cols(Var a, Var b) {
  Graph& g = detail::same_graph(a, b, "concat_cols");
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  const std::size_t m = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != m) {
    throw DimensionError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out({m, p + q});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(&A[r * p], p, &out[r * (p + q)]);
    std::copy_n(&B[r * q], q, &out[r * (p + q) + p]);
  }
  return g.record("concat_cols", std::move(out), {a.id(), b.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    if (gr.requires_grad(a.id())) {
      Tensor& ga = gr.grad(a.id());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += d[r * (p + q) + c];
    }
    if (gr.requires_grad(b.id())) {
      Tensor& gb = gr.grad(b.id());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += d[r * (p + q) + p + c];
    }
  });
}

/// Same values under new extents (element count preserved).
inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return x.graph().record("reshape", x.value().reshaped(std::move(shape)), {x.id()},
                          [=](Graph& gr, std::size_t self) {
                            const Tensor& d = gr.grad(self);
                            Tensor& gx = gr.grad(x.id());
                            for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
                          });
}

/// Slice time step `t` of a [batch x time x channels] tensor -> [batch x channels].
inline Var time_step(Var x, std::size_t t) {
  detail::require_rank(x, 3, "time_step");
  const std::size_t B = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  if (t >= T) throw DimensionError("time_step: step " + std::to_string(t) + " outside " + shape_str(x.shape()));
  Tensor out({B, C});
  const Tensor& X = x.value();
  for (std::size_t b = 0; b < B; ++b) std::copy_n(&X[(b * T + t) * C], C, &out[b * C]);
  return x.graph().record("time_step", std::move(out), {x.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& d = gr.grad(self);
    Tensor& gx = gr.grad(x.id());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) gx[(b * T + t) * C + c] += d[b * C + c];
  });
}

/// x: [(batch*time) x d], table: [time x d]; row b*time+t gets table row t added.
inline Var add_tiled(Var x, Var table) {
  Graph& g = detail::same_graph(x, table, "add_tiled");
  detail::require_rank(x, 2, "add_tiled");
  detail::require_rank(table, 2, "add_tiled");
  const std::size_t rows = x.shape()[0], d = x.shape()[1], T = table.shape()[0];
  if (table.shape()[1] != d || rows % T != 0) {
    throw DimensionError("add_tiled: cannot tile " + shape_str(table.shape()) + " over " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const Tensor& P = table.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += P[(r % T) * d + c];
  return g.record("add_tiled", std::move(out), {x.id(), table.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& dy = gr.grad(self);
    if (gr.requires_grad(x.id())) {
      Tensor& gx = gr.grad(x.id());
      for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
    }
    if (gr.requires_grad(table.id())) {
      Tensor& gp = gr.grad(table.id());
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gp[(r % T) * d + c] += dy[r * d + c];
    }
  });
}

/// Causal dilated 1-D convolution.
///
/// x is [time x channels] or [batch x time x channels]; w is
/// [taps x channels x filters]. Output step t is
///   y[t] = sum_i x[t - dilation*i] * w[i]
/// with implicit zeros before t = 0, so output length equals input length and
/// y[t] never reads x beyond t.
inline Var conv1d_causal_dilated(Var x, Var w, std::size_t dilation) {
  Graph& g = detail::same_graph(x, w, "conv1d_causal_dilated");
  if (dilation < 1) throw ParameterError("conv1d_causal_dilated: dilation must be >= 1");
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (X.rank() != 2 && X.rank() != 3) {
    throw DimensionError("conv1d_causal_dilated: input must be [time x channels] or [batch x time x channels], got " +
                         shape_str(X.shape()));
  }
  const bool batched = X.rank() == 3;
  const std::size_t B = batched ? X.dim(0) : 1;
  const std::size_t T = X.dim(batched ? 1 : 0);
  const std::size_t C = X.dim(batched ? 2 : 1);
  if (W.rank() != 3 || W.dim(1) != C) {
    throw DimensionError("conv1d_causal_dilated: kernel " + shape_str(W.shape()) + " incompatible with input " +
                         shape_str(X.shape()));
  }
  const std::size_t K = W.dim(0), F = W.dim(2);
  Tensor Y(batched ? Shape{B, T, F} : Shape{T, F});
  using detail::ConstStridedMap;
  using detail::StridedMap;
  const auto eB = static_cast<Eigen::Index>(B);
  const auto eC = static_cast<Eigen::Index>(C);
  const auto eF = static_cast<Eigen::Index>(F);
  for (std::size_t i = 0; i < K; ++i) {
    const std::size_t shift = dilation * i;
    if (shift >= T) break;
    detail::ConstMatMap Wi(&W[i * C * F], eC, eF);
    for (std::size_t t = shift; t < T; ++t) {
      StridedMap yt(&Y[t * F], eB, eF, Eigen::OuterStride<>(static_cast<Eigen::Index>(T * F)));
      ConstStridedMap xs(&X[(t - shift) * C], eB, eC, Eigen::OuterStride<>(static_cast<Eigen::Index>(T * C)));
      yt.noalias() += xs * Wi;
    }
  }
  return g.record("conv1d_causal_dilated", std::move(Y), {x.id(), w.id()}, [=](Graph& gr, std::size_t self) {
    const Tensor& dY = gr.grad(self);
    const Tensor& Xv = gr.value(x.id());
    const Tensor& Wv = gr.value(w.id());
    const bool want_x = gr.requires_grad(x.id());
    const bool want_w = gr.requires_grad(w.id());
    Tensor* dX = want_x ? &gr.grad(x.id()) : nullptr;
    Tensor* dW = want_w ? &gr.grad(w.id()) : nullptr;
    for (std::size_t i = 0; i < K; ++i) {
      const std::size_t shift = dilation * i;
      if (shift >= T) break;
      detail::ConstMatMap Wi(&Wv[i * C * F], eC, eF);
      for (std::size_t t = shift; t < T; ++t) {
        ConstStridedMap dyt(&dY[t * F], eB, eF, Eigen::OuterStride<>(static_cast<Eigen::Index>(T * F)));
        if (dX) {
          StridedMap dxs(&(*dX)[(t - shift) * C], eB, eC, Eigen::OuterStride<>(static_cast<Eigen::Index>(T * C)));
          dxs.noalias() += dyt * Wi.transpose();
        }
        if (dW) {
          ConstStridedMap xs(&Xv[(t - shift) * C], eB, eC, Eigen::OuterStride<>(static_cast<Eigen::Index>(T * C)));
          detail::MatMap dWi(&(*dW)[i * C * F], eC, eF);
          dWi.noalias() += xs.transpose() * dyt;
        }
      }
    }
  });
}

/// Inverted dropout: scale survivors by 1/(1-rate) in training, identity otherwise.
inline Var dropout(Var x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  for (double& m : mask.values()) m = rng.uniform() >= rate ? keep : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.graph().record("dropout", std::move(out), {x.id()},
                          [=, mask = std::move(mask)](Graph& gr, std::size_t self) {
                            const Tensor& d = gr.grad(self);
                            Tensor& gx = gr.grad(x.id());
                            for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * mask[i];
                          });
}

/// Per-row normalization over the last axis, then gain and shift.
inline Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-6) {
  Graph& g = detail::same_graph(x, gain, "layer_norm");
  detail::require_rank(x, 2, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gain.value().size() != n || shift.value().size() != n) {
    throw DimensionError("layer_norm: gain/shift must have " + std::to_string(n) + " entries");
  }
  const Tensor& X = x.value();
  const Tensor& G = gain.value();
  const Tensor& S = shift.value();
  Tensor out({m, n});
  std::vector<double> xhat(m * n), inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += X[r * n + c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (X[r * n + c] - mean) * (X[r * n + c] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (X[r * n + c] - mean) * inv_std[r];
      out[r * n + c] = G[c] * xhat[r * n + c] + S[c];
    }
  }
  return g.record("layer_norm", std::move(out), {x.id(), gain.id(), shift.id()},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                    const Tensor& d = gr.grad(self);
                    const Tensor& Gv = gr.value(gain.id());
                    if (gr.requires_grad(gain.id())) {
                      Tensor& gg = gr.grad(gain.id());
                      for (std::size_t i = 0; i < m * n; ++i) gg[i % n] += d[i] * xhat[i];
                    }
                    if (gr.requires_grad(shift.id())) {
                      Tensor& gs = gr.grad(shift.id());
                      for (std::size_t i = 0; i < m * n; ++i) gs[i % n] += d[i];
                    }
                    if (gr.requires_grad(x.id())) {
                      Tensor& gx = gr.grad(x.id());
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t r = 0; r < m; ++r) {
                        double mean_d = 0.0, mean_dx = 0.0;
                        for (std::size_t c = 0; c < n; ++c) {
                          const double dh = d[r * n + c] * Gv[c];
                          mean_d += dh;
                          mean_dx += dh * xhat[r * n + c];
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for (std::size_t c = 0; c < n; ++c) {
                          const double dh = d[r * n + c] * Gv[c];
                          gx[r * n + c] += inv_std[r] * (dh - mean_d - xhat[r * n + c] * mean_dx);
                        }
                      }
                    }
                  });
}

/// Multi-head scaled dot-product attention over packed projections.
///
/// q, k, v are [(batch*time) x (heads*head_size)]; head h owns columns
/// [h*head_size, (h+1)*head_size). Per (batch, head):
///   out = softmax(Q K^T / sqrt(head_size)) V
/// When `weights` is non-null it receives the batch*heads probability
/// matrices ([time x time], batch-major).
inline Var scaled_dot_attention(Var q, Var k, Var v, std::size_t batch, std::size_t time, std::size_t heads,
                                std::vector<Tensor>* weights = nullptr) {
  Graph& g = detail::same_graph(q, k, "attention");
  detail::same_graph(q, v, "attention");
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  detail::require_rank(q, 2, "attention");
  const std::size_t width = q.shape()[1];
  if (heads == 0 || width % heads != 0) {
    throw ParameterError("attention: width " + std::to_string(width) + " not divisible into " +
                         std::to_string(heads) + " heads");
  }
  if (batch * time != q.shape()[0]) {
    throw DimensionError("attention: " + shape_str(q.shape()) + " is not (batch*time) rows");
  }
  const std::size_t dk = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  // Time is a window length (a handful of steps), so the per-(batch, head)
  // products are written as plain loops rather than small GEMM calls.
  Tensor out({batch * time, width});
  std::vector<double> probs(batch * heads * time * time);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * time * width + h * dk;
      double* p = &probs[(b * heads + h) * time * time];
      for (std::size_t r = 0; r < time; ++r) {
        const double* qr = &Q[off + r * width];
        for (std::size_t c = 0; c < time; ++c) {
          const double* kc = &K[off + c * width];
          double dot = 0.0;
          for (std::size_t d = 0; d < dk; ++d) dot += qr[d] * kc[d];
          p[r * time + c] = dot * inv_sqrt;
        }
      }
      detail::softmax_rows_inplace(p, time, time, time);
      for (std::size_t r = 0; r < time; ++r) {
        double* orow = &out[off + r * width];
        for (std::size_t c = 0; c < time; ++c) {
          const double w = p[r * time + c];
          const double* vc = &V[off + c * width];
          for (std::size_t d = 0; d < dk; ++d) orow[d] += w * vc[d];
        }
      }
    }
  }
  if (weights) {
    weights->clear();
    for (std::size_t i = 0; i < batch * heads; ++i) {
      weights->emplace_back(Shape{time, time},
                            std::vector<double>(probs.begin() + static_cast<std::ptrdiff_t>(i * time * time),
                                                probs.begin() + static_cast<std::ptrdiff_t>((i + 1) * time * time)));
    }
  }
  return g.record(
      "attention", std::move(out), {q.id(), k.id(), v.id()},
      [=, probs = std::move(probs)](Graph& gr, std::size_t self) {
        const Tensor& dO = gr.grad(self);
        const Tensor& Qv = gr.value(q.id());
        const Tensor& Kv = gr.value(k.id());
        const Tensor& Vv = gr.value(v.id());
        Tensor* dQ = gr.requires_grad(q.id()) ? &gr.grad(q.id()) : nullptr;
        Tensor* dK = gr.requires_grad(k.id()) ? &gr.grad(k.id()) : nullptr;
        Tensor* dV = gr.requires_grad(v.id()) ? &gr.grad(v.id()) : nullptr;
        std::vector<double> dP(time * time), dS(time * time);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * time * width + h * dk;
            const double* p = &probs[(b * heads + h) * time * time];
            if (dV) {
              for (std::size_t r = 0; r < time; ++r) {
                const double* dor = &dO[off + r * width];
                for (std::size_t c = 0; c < time; ++c) {
                  const double w = p[r * time + c];
                  double* dvc = &(*dV)[off + c * width];
                  for (std::size_t d = 0; d < dk; ++d) dvc[d] += w * dor[d];
                }
              }
            }
            if (!dQ && !dK) continue;
            for (std::size_t r = 0; r < time; ++r) {
              const double* dor = &dO[off + r * width];
              double dot = 0.0;
              for (std::size_t c = 0; c < time; ++c) {
                const double* vc = &Vv[off + c * width];
                double acc = 0.0;
                for (std::size_t d = 0; d < dk; ++d) acc += dor[d] * vc[d];
                dP[r * time + c] = acc;
                dot += acc * p[r * time + c];
              }
              for (std::size_t c = 0; c < time; ++c) {
                dS[r * time + c] = p[r * time + c] * (dP[r * time + c] - dot) * inv_sqrt;
              }
            }
            for (std::size_t r = 0; r < time; ++r) {
              for (std::size_t c = 0; c < time; ++c) {
                const double w = dS[r * time + c];
                if (dQ) {
                  double* dqr = &(*dQ)[off + r * width];
                  const double* kc = &Kv[off + c * width];
                  for (std::size_t d = 0; d < dk; ++d) dqr[d] += w * kc[d];
                }
                if (dK) {
                  double* dkc = &(*dK)[off + c * width];
                  const double* qr = &Qv[off + r * width];
                  for (std::size_t d = 0; d < dk; ++d) dkc[d] += w * qr[d];
                }
              }
            }
          }
        }
      });
}

inline Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return x.graph().record("sum", Tensor::scalar(total), {x.id()}, [=](Graph& gr, std::size_t self) {
    const double d = gr.grad(self)[0];
    Tensor& gx = gr.grad(x.id());
    for (double& v : gx.values()) v += d;
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Mean squared error against fixed targets (same element count as pred).
inline Var mse_loss(Var pred, const Tensor& target) {
  const Tensor& P = pred.value();
  if (P.size() != target.size()) {
    throw DimensionError("mse_loss: " + shape_str(P.shape()) + " vs targets " + shape_str(target.shape()));
  }
  const double n = static_cast<double>(P.size());
  double total = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) total += (P[i] - target[i]) * (P[i] - target[i]);
  return pred.graph().record("mse", Tensor::scalar(total / n), {pred.id()},
                             [=, target = target](Graph& gr, std::size_t self) {
                               const double d = gr.grad(self)[0];
                               const Tensor& Pv = gr.value(pred.id());
                               Tensor& gp = gr.grad(pred.id());
                               for (std::size_t i = 0; i < Pv.size(); ++i)
                                 gp[i] += d * 2.0 * (Pv[i] - target[i]) / n;
                             });
}

}  // namespace snowcast::ad
