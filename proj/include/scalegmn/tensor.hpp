#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace scalegmn {

/// Dense row-major 64-bit array. Rank is at most two; higher-rank data
/// (conv kernels, batches of feature maps) is stored flattened.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;
using IndexList = std::vector<Index>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation produces NaN/Inf or would divide by ~0.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kDivisionGuard = 1e-12;

std::string shape_string(const Tensor& t);

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] Index rows() const { return value().rows(); }
  [[nodiscard]] Index cols() const { return value().cols(); }
  [[nodiscard]] Tape* tape() const { return tape_; }
  [[nodiscard]] std::size_t id() const { return id_; }
  [[nodiscard]] bool valid() const { return tape_ != nullptr; }
  /// Scalar value of a 1x1 variable.
  [[nodiscard]] double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// the node vector is already a topological order. Single-threaded.
class Tape {
 public:
  /// Receives the gradient flowing into the node; accumulates into parents.
  using Backprop = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Appends the result of a primitive. `parents` decides whether the result
  /// needs a gradient; `backprop` is dropped when none of them do.
  Var record(Tensor value, std::initializer_list<Var> parents, Backprop backprop,
             const char* op);
  Var record(Tensor value, const std::vector<Var>& parents, Backprop backprop, const char* op);

  /// One reverse sweep from a 1x1 loss. Gradients of all nodes are then
  /// available through grad().
  void backward(Var loss);

  [[nodiscard]] const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient after backward(); zeros when the node was not reached.
  [[nodiscard]] Tensor grad(Var v) const;

  /// Used by backprop closures.
  void accumulate(Var target, const Tensor& delta);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
};

}  // namespace scalegmn
