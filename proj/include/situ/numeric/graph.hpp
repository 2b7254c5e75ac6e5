#pragma once

// Tape-based reverse-mode differentiation. A Graph records every value it
// produces together with a closure that pushes the node's gradient into its
// inputs; backward() replays the tape in reverse.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "situ/numeric/tensor.hpp"

namespace situ::numeric {

template <std::floating_point Real>
struct Parameter {
  std::string name;
  std::string group;
  Tensor<Real> value;
  Tensor<Real> grad;
  // Adam moments.
  Tensor<Real> m;
  Tensor<Real> v;
};

template <std::floating_point Real>
class ParameterStore {
 public:
  std::size_t create(const std::string& name, const std::string& group, Shape shape) {
    if (index_.count(name)) throw NumericError("parameter '" + name + "' already exists");
    Tensor<Real> zero(shape);
    params_.push_back({name, group, zero, zero, zero, zero});
    index_.emplace(name, params_.size() - 1);
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Real>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<Real>& operator[](std::size_t i) const { return params_[i]; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NumericError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Parameter<Real>& at(const std::string& name) { return params_[index(name)]; }
  const Parameter<Real>& at(const std::string& name) const { return params_[index(name)]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(Real(0));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  // Adam timestep.
  std::uint64_t step = 0;

 private:
  std::deque<Parameter<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <std::floating_point Real>
class Graph;

/// Handle to a node on a Graph tape.
template <std::floating_point Real>
struct Var {
  Graph<Real>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<Real>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Real item() const { return value().item(); }
};

template <std::floating_point Real>
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t)>;

  // Inference graph over a read-only store: nothing is recorded for backward.
  explicit Graph(const ParameterStore<Real>* store = nullptr) : store_(store) {}
  // Training graph: backward() accumulates into the store's grad slots.
  explicit Graph(ParameterStore<Real>& store) : store_(&store), mutable_store_(&store), record_(true) {}

  static Graph recording() {
    Graph g;
    g.record_ = true;
    return g;
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;

  bool recording_enabled() const { return record_; }

  Var<Real> constant(Tensor<Real> value) { return push(std::move(value), false); }
  // Leaf whose gradient is kept and readable through grad().
  Var<Real> input(Tensor<Real> value) { return push(std::move(value), record_); }

  Var<Real> param(std::size_t index) {
    if (!store_) throw NumericError("graph has no parameter store");
    if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.ref = &(*store_)[index].value;
    n.needs_grad = mutable_store_ != nullptr;
    n.param = static_cast<std::ptrdiff_t>(index);
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(index, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Appends an op result. `backward` receives the graph and the node id and
  /// must add into the grads of inputs that need them.
  Var<Real> make(Tensor<Real> value, std::initializer_list<Var<Real>> inputs, Backward backward, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    bool needs = false;
    if (record_)
      for (auto in : inputs) needs = needs || nodes_[in.id].needs_grad;
    Var<Real> v = push(std::move(value), needs);
    if (needs) nodes_.back().backward = std::move(backward);
    return v;
  }

  const Tensor<Real>& value(Var<Real> v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.value;
  }
  bool needs_grad(Var<Real> v) const { return nodes_[v.id].needs_grad; }

  // Lazily zero-initialized gradient slot.
  Tensor<Real>& grad(Var<Real> v) { return grad(v.id); }
  Tensor<Real>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<Real>(value(Var<Real>{this, id}).shape());
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  void backward(Var<Real> loss) {
    if (value(loss).size() != 1 || value(loss).rank() > 1)
      throw NumericError("backward: loss must be scalar, got shape " + shape_string(value(loss).shape()));
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss).fill(Real(1));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param >= 0 && mutable_store_) {
        auto& dst = (*mutable_store_)[static_cast<std::size_t>(n.param)].grad;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    const Tensor<Real>* ref = nullptr;
    Tensor<Real> grad;
    Backward backward;
    bool needs_grad = false;
    std::ptrdiff_t param = -1;
  };

  Var<Real> push(Tensor<Real> value, bool needs) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const ParameterStore<Real>* store_ = nullptr;
  ParameterStore<Real>* mutable_store_ = nullptr;
  bool record_ = false;
  std::deque<Node> nodes_;  // stable references across push
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
};

}  // namespace situ::numeric
