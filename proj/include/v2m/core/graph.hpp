#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "v2m/core/tensor.hpp"

namespace v2m {

class Graph;

/// Learnable array plus its accumulated gradient.
struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros_like(value)) {}
  void zero_grad() { grad = Tensor::zeros_like(value); }
};

/// Handle to a node recorded on a Graph tape.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t ndim() const { return value().ndim(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward is a single reverse sweep. Node storage is a
/// deque so references returned by value() survive later records.
///
/// A Graph is single-threaded; separate graphs share no mutable state.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

#ifdef NDEBUG
  static constexpr bool kCheckFiniteDefault = false;
#else
  static constexpr bool kCheckFiniteDefault = true;
#endif

  explicit Graph(bool check_finite = kCheckFiniteDefault) : check_finite_(check_finite) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  /// Leaf that records a gradient.
  Var input(Tensor t);
  /// Leaf bound to a parameter; backward() accumulates into `p.grad`.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient of the last backward() loss with respect to `v`; zeros when
  /// `v` has no path to the loss.
  Tensor grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t last_backward_visits() const noexcept { return last_visits_; }
  bool check_finite() const noexcept { return check_finite_; }

  // Op-author interface.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  bool check_finite_;
  std::size_t last_visits_ = 0;
};

}  // namespace v2m
