#include "scalegmn/tensor.hpp"

#include <sstream>

namespace scalegmn {

std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << "[" << t.rows() << " x " << t.cols() << "]";
  return os.str();
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

double Var::item() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("item() on non-scalar " + shape_string(v));
  return v(0, 0);
}

Var Tape::constant(Tensor value) {
  if (!value.allFinite()) throw NumericError("non-finite constant recorded on tape");
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  if (!value.allFinite()) throw NumericError("non-finite variable recorded on tape");
  nodes_.push_back(Node{std::move(value), Tensor(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backprop backprop,
                 const char* op) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backprop), op);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backprop backprop,
                 const char* op) {
  if (!value.allFinite()) {
    throw NumericError(std::string("non-finite result in ") + op);
  }
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw Error(std::string("operand from another tape in ") + op);
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs, needs ? std::move(backprop) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var target, const Tensor& delta) {
  Node& n = nodes_[target.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.value()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backprop || n.grad.size() == 0) continue;
    // The closure may append to nothing but can touch other nodes' grads.
    const Tensor g = n.grad;
    n.backprop(*this, g);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Tensor::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace scalegmn
