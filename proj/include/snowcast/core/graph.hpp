#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "snowcast/core/errors.hpp"
#include "snowcast/core/tensor.hpp"

namespace snowcast::ad {

class Graph;

/// Handle to one node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient after Graph::backward; zeros if the loss does not depend on this node.
  Tensor grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of op records. Forward ops append; backward replays the tape in reverse.
///
/// Records are appended in evaluation order, so every input id is smaller
/// than the id of its consumer and a single reverse sweep visits each
/// record exactly once.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf holding data. No gradient is propagated into it.
  Var constant(Tensor value) { return push_leaf("constant", std::move(value), nullptr, false); }

  /// Leaf whose gradient is tracked (used by gradient checks on inputs).
  Var input(Tensor value) { return push_leaf("input", std::move(value), nullptr, true); }

  /// Leaf bound to a trainable parameter. Binding the same parameter twice
  /// returns the same node, and backward accumulates into `p.grad`.
  Var param(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
    Var v = push_leaf("param", Tensor{}, &p, true);
    bound_.emplace(&p, v.id());
    return v;
  }

  /// Appends an op record. Throws NumericError if `value` holds NaN/Inf.
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
      throw NumericError(op + ": non-finite value in forward output " + shape_str(value.shape()));
    }
    bool needs = false;
    for (std::size_t in : inputs) {
      if (in >= records_.size()) throw ContractError(op + ": input id from the future");
      needs = needs || records_[in].requires_grad;
    }
    Record r;
    r.op = std::move(op);
    r.value = std::move(value);
    r.inputs = std::move(inputs);
    r.backward = std::move(backward);
    r.requires_grad = needs;
    records_.push_back(std::move(r));
    return Var(this, records_.size() - 1);
  }

  const Tensor& value(std::size_t id) const {
    const Record& r = records_.at(id);
    return r.param ? r.param->value : r.value;
  }

  bool requires_grad(std::size_t id) const { return records_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id) {
    Record& r = records_.at(id);
    if (r.grad.empty()) r.grad = Tensor(value(id).shape());
    return r.grad;
  }

  bool has_grad(std::size_t id) const { return !records_.at(id).grad.empty(); }

  const std::string& op(std::size_t id) const { return records_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return records_.at(id).inputs; }
  std::size_t size() const { return records_.size(); }

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// whatever `Parameter::grad` already holds; call zero_grad between steps.
  void backward(Var loss) {
    if (loss.valid() && &loss.graph() != this) throw ContractError("backward: loss from another graph");
    if (value(loss.id()).size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_str(value(loss.id()).shape()));
    }
    if (backward_done_) throw ContractError("backward: graph already consumed");
    backward_done_ = true;
    grad(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Record& r = records_[id];
      if (r.grad.empty() || !r.requires_grad) continue;
      if (r.backward) r.backward(*this, id);
      if (r.param) {
        Parameter& p = *r.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += r.grad[i];
      }
    }
  }

 private:
  struct Record {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push_leaf(std::string op, Tensor value, Parameter* param, bool requires_grad) {
    const Tensor& v = param ? param->value : value;
    if (v.empty()) throw ContractError(op + ": empty tensor");
    if (!v.all_finite()) throw NumericError(op + ": non-finite leaf value");
    Record r;
    r.op = std::move(op);
    r.value = std::move(value);
    r.param = param;
    r.requires_grad = requires_grad;
    records_.push_back(std::move(r));
    return Var(this, records_.size() - 1);
  }

  std::vector<Record> records_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }

inline Tensor Var::grad() const {
  if (graph_->has_grad(id_)) return graph_->grad(id_);
  return Tensor(value().shape());
}

}  // namespace snowcast::ad
