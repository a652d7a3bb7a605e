#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace misder {

/// Dense row-major matrix used for every value and gradient in the library.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A named, trainable parameter block. Values and gradients share a shape.
struct ParamTensor {
  std::string name;
  Matrix values;
  Matrix grad;
  bool frozen = false;

  ParamTensor() = default;
  ParamTensor(std::string n, Matrix v) : name(std::move(n)), values(std::move(v)) {
    grad = Matrix::Zero(values.rows(), values.cols());
  }

  std::vector<std::size_t> shape() const {
    return {static_cast<std::size_t>(values.rows()), static_cast<std::size_t>(values.cols())};
  }
  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  void zero_grad() { grad.setZero(values.rows(), values.cols()); }
};

class Graph;

/// Handle to a node on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward() walks
/// them in reverse. Parameters enter through param() and receive accumulated
/// gradients in ParamTensor::grad unless frozen.
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  /// With grad_enabled = false the tape records values only.
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var param(ParamTensor& p);

  /// Appends an op node. `inputs` decide whether the node needs a gradient.
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);

  void backward(Var loss);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient of node `id`, lazily zero-initialized.
  Matrix& grad(int id);

  std::size_t size() const { return nodes_.size(); }
  /// Tape position marker; rewind() drops every node appended after it.
  std::size_t mark() const { return nodes_.size(); }
  void rewind(std::size_t mark);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    ParamTensor* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable addresses: value() references survive appends
  bool grad_enabled_ = true;
};

inline const Matrix& Var::value() const { return graph->value(id); }

}  // namespace misder
