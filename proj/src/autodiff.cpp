#include "misder/autodiff.hpp"

namespace misder {

Var Graph::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(ParamTensor& p) {
  nodes_.push_back(Node{p.values, {}, {}, &p, grad_enabled_ && !p.frozen});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (in.graph != this) throw Error("op input belongs to another graph");
      needs = needs || requires_grad(in.id);
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("loss belongs to another graph");
  if (loss.value().size() != 1) throw Error("backward() requires a scalar loss");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(loss.id)) return;
  grad(loss.id).setConstant(1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, id);
    } else if (n.param != nullptr) {
      n.param->grad += n.grad;
    }
  }
}

void Graph::rewind(std::size_t mark) {
  if (mark > nodes_.size()) throw Error("rewind past end of tape");
  nodes_.resize(mark);
}

}  // namespace misder
