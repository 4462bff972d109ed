#include "v2m/core/graph.hpp"

#include "v2m/core/error.hpp"

namespace v2m {

const Tensor& Var::value() const { return graph_->value(*this); }

Var Graph::constant(Tensor t) { return record("constant", std::move(t), {}, nullptr); }

Var Graph::input(Tensor t) {
  Var v = record("input", std::move(t), {}, nullptr);
  nodes_.back().requires_grad = true;
  return v;
}

Var Graph::param(Parameter& p) {
  Var v = record("param", p.value, {}, nullptr);
  nodes_.back().requires_grad = true;
  nodes_.back().param = &p;
  return v;
}

Var Graph::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size()) {
    n.grad = Tensor::zeros_like(n.value);
  }
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape()) return n.grad;
  return Tensor::zeros_like(n.value);
}

void Graph::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;
  last_visits_ = 0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    ++last_visits_;
    if (n.backward) {
      n.backward(*this, i);
      if (check_finite_) {
        for (std::size_t in : nodes_[i].inputs) {
          const Tensor& g = nodes_[in].grad;
          if (!g.empty() && !g.all_finite()) {
            throw NumericError(std::string("non-finite gradient through op '") + nodes_[i].op + "'");
          }
        }
      }
    }
    if (nodes_[i].param != nullptr) {
      Parameter& p = *nodes_[i].param;
      if (p.grad.size() != p.value.size()) p.zero_grad();
      const Tensor& g = nodes_[i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) p.grad[k] += g[k];
    }
  }
}

}  // namespace v2m
