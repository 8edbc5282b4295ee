#pragma once

// Reverse-mode automatic differentiation over dense rank-2 real arrays.
//
// A Tensor is a handle to a node of a recorded expression graph. Nodes that
// do not depend on any parameter are plain constants and record nothing.
// Calling backward() on a 1x1 result accumulates d(result)/d(node) into the
// grad of every parameter reachable from it.
//
// Broadcasting follows the rank-2 rule: a dimension of size 1 stretches to
// match the other operand.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace umfsb::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
};

class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value);

  static Tensor constant(Matrix value);
  static Tensor scalar(double v);
  static Tensor zeros(Index rows, Index cols);
  static Tensor full(Index rows, Index cols, double v);
  static Tensor parameter(Matrix value, std::string name);

  // Builds a recorded node. `backward` may be empty when no parent requires
  // a gradient; the node then degrades to a constant.
  static Tensor make(Matrix value, std::vector<Tensor> parents,
                     std::function<void(Node&)> backward);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const;
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::vector<std::size_t> shape() const;
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }
  double item() const;
  double at(Index r, Index c) const { return node_->value(r, c); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  // Same value, cut from the recording.
  Tensor detach() const;

  void backward() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

std::string shape_string(const Tensor& t);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise binary with rank-2 broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double s);
Tensor operator+(double s, const Tensor& a);
Tensor operator-(const Tensor& a, double s);
Tensor operator-(double s, const Tensor& a);
Tensor operator*(const Tensor& a, double s);
Tensor operator*(double s, const Tensor& a);
Tensor operator/(const Tensor& a, double s);
Tensor operator/(double s, const Tensor& a);

// Elementwise unary.
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor pow(const Tensor& a, double p);
// exp(min(a, max_arg)); gradient is zero where the argument was clamped.
// `clamped`, when non-null, is set if any entry hit the bound.
Tensor exp_clamped(const Tensor& a, double max_arg, bool* clamped = nullptr);

// Reductions. Summation runs sequentially over the flat row-major index.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor row_sum(const Tensor& a);  // r x c -> r x 1
Tensor col_sum(const Tensor& a);  // r x c -> 1 x c
// Euclidean norm of each row (r x 1); the gradient at a zero row is zero.
Tensor row_norm(const Tensor& a);

// Structural.
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::span<const Index> rows);
// out(rows[k], :) += a(k, :) for an output with `out_rows` rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const Index> rows, Index out_rows);
Tensor broadcast_to(const Tensor& a, Index rows, Index cols);

}  // namespace umfsb::ad
