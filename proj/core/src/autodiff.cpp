#include "umfsb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "umfsb/error.hpp"

namespace umfsb::ad {

namespace {

void accumulate(Node& parent, const Matrix& g) {
  if (!parent.requires_grad) return;
  if (parent.grad.size() == 0) {
    parent.grad = g;
  } else {
    parent.grad += g;
  }
}

// Sums g (rows x cols) down to the shape (r x c) it was broadcast from.
Matrix reduce_to(const Matrix& g, Index r, Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  Matrix out = Matrix::Zero(r, c);
  for (Index i = 0; i < g.rows(); ++i) {
    const Index oi = r == 1 ? 0 : i;
    for (Index j = 0; j < g.cols(); ++j) {
      out(oi, c == 1 ? 0 : j) += g(i, j);
    }
  }
  return out;
}

Matrix expand(const Matrix& a, Index r, Index c) {
  if (a.rows() == r && a.cols() == c) return a;
  Matrix out(r, c);
  for (Index i = 0; i < r; ++i) {
    const Index ai = a.rows() == 1 ? 0 : i;
    for (Index j = 0; j < c; ++j) out(i, j) = a(ai, a.cols() == 1 ? 0 : j);
  }
  return out;
}

std::pair<Index, Index> broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  auto dim = [&](Index x, Index y) -> Index {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx_from_x_y) {
  Matrix y = a.value().unaryExpr(f);
  if (!a.requires_grad()) return Tensor::constant(std::move(y));
  auto an = a.node();
  Matrix dydx = a.value().binaryExpr(y, dfdx_from_x_y);
  return Tensor::make(std::move(y), {a}, [an, dydx = std::move(dydx)](Node& self) {
    accumulate(*an, self.grad.cwiseProduct(dydx));
  });
}

}  // namespace

Tensor::Tensor() : node_(std::make_shared<Node>()) {}

Tensor::Tensor(Matrix value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }

Tensor Tensor::constant(Matrix value) { return Tensor(std::move(value)); }

Tensor Tensor::scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Tensor Tensor::full(Index rows, Index cols, double v) {
  return Tensor(Matrix::Constant(rows, cols, v));
}

Tensor Tensor::parameter(Matrix value, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Tensor(std::move(node));
}

Tensor Tensor::make(Matrix value, std::vector<Tensor> parents,
                    std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) {
      node->requires_grad = true;
      node->parents.push_back(p.node());
    }
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return Tensor(std::move(node));
}

const Matrix& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

std::vector<std::size_t> Tensor::shape() const {
  return {static_cast<std::size_t>(rows()), static_cast<std::size_t>(cols())};
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_string(*this) + " is not 1x1");
  return node_->value(0, 0);
}

Tensor Tensor::detach() const { return Tensor(node_->value); }

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: root of shape " + shape_string(*this) + " is not 1x1");
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a deterministic topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Intermediate nodes start from a clean gradient on every pass.
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad.resize(0, 0);
  }
  accumulate(*node_, Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << '[' << t.rows() << 'x' << t.cols() << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(a) + " * " +
                     shape_string(b));
  }
  Matrix y = a.value() * b.value();
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make(std::move(y), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) accumulate(*an, self.grad * bn->value.transpose());
    if (bn->requires_grad) accumulate(*bn, an->value.transpose() * self.grad);
  });
}

Tensor transpose(const Tensor& a) {
  Matrix y = a.value().transpose();
  auto an = a.node();
  return Tensor::make(std::move(y), {a},
                      [an](Node& self) { accumulate(*an, self.grad.transpose()); });
}

Tensor add(const Tensor& a, const Tensor& b) {
  auto [r, c] = broadcast_shape("add", a, b);
  Matrix y = expand(a.value(), r, c) + expand(b.value(), r, c);
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make(std::move(y), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) accumulate(*an, reduce_to(self.grad, an->value.rows(), an->value.cols()));
    if (bn->requires_grad) accumulate(*bn, reduce_to(self.grad, bn->value.rows(), bn->value.cols()));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto [r, c] = broadcast_shape("sub", a, b);
  Matrix y = expand(a.value(), r, c) - expand(b.value(), r, c);
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make(std::move(y), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) accumulate(*an, reduce_to(self.grad, an->value.rows(), an->value.cols()));
    if (bn->requires_grad) {
      accumulate(*bn, -reduce_to(self.grad, bn->value.rows(), bn->value.cols()));
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto [r, c] = broadcast_shape("mul", a, b);
  Matrix ae = expand(a.value(), r, c);
  Matrix be = expand(b.value(), r, c);
  Matrix y = ae.cwiseProduct(be);
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make(std::move(y), {a, b},
                      [an, bn, ae = std::move(ae), be = std::move(be)](Node& self) {
                        if (an->requires_grad) {
                          accumulate(*an, reduce_to(self.grad.cwiseProduct(be), an->value.rows(),
                                                    an->value.cols()));
                        }
                        if (bn->requires_grad) {
                          accumulate(*bn, reduce_to(self.grad.cwiseProduct(ae), bn->value.rows(),
                                                    bn->value.cols()));
                        }
                      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto [r, c] = broadcast_shape("div", a, b);
  Matrix ae = expand(a.value(), r, c);
  Matrix be = expand(b.value(), r, c);
  Matrix y = ae.cwiseQuotient(be);
  auto an = a.node();
  auto bn = b.node();
  return Tensor::make(
      std::move(y), {a, b}, [an, bn, ae = std::move(ae), be = std::move(be)](Node& self) {
        if (an->requires_grad) {
          accumulate(*an, reduce_to(self.grad.cwiseQuotient(be), an->value.rows(), an->value.cols()));
        }
        if (bn->requires_grad) {
          Matrix gb = -self.grad.cwiseProduct(ae).cwiseQuotient(be.cwiseProduct(be));
          accumulate(*bn, reduce_to(gb, bn->value.rows(), bn->value.cols()));
        }
      });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor operator-(const Tensor& a) { return a * -1.0; }

Tensor operator+(const Tensor& a, double s) {
  Matrix y = a.value().array() + s;
  auto an = a.node();
  return Tensor::make(std::move(y), {a}, [an](Node& self) { accumulate(*an, self.grad); });
}
Tensor operator+(double s, const Tensor& a) { return a + s; }
Tensor operator-(const Tensor& a, double s) { return a + (-s); }
Tensor operator-(double s, const Tensor& a) { return (a * -1.0) + s; }

Tensor operator*(const Tensor& a, double s) {
  Matrix y = a.value() * s;
  auto an = a.node();
  return Tensor::make(std::move(y), {a}, [an, s](Node& self) { accumulate(*an, self.grad * s); });
}
Tensor operator*(double s, const Tensor& a) { return a * s; }
Tensor operator/(const Tensor& a, double s) { return a * (1.0 / s); }
Tensor operator/(double s, const Tensor& a) {
  return unary(
      a, [s](double x) { return s / x; }, [s](double x, double) { return -s / (x * x); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor pow(const Tensor& a, double p) {
  return unary(
      a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor exp_clamped(const Tensor& a, double max_arg, bool* clamped) {
  bool hit = false;
  for (Index i = 0; i < a.value().size(); ++i) {
    if (a.value().data()[i] > max_arg) hit = true;
  }
  if (clamped != nullptr) *clamped = hit;
  return unary(
      a, [max_arg](double x) { return std::exp(std::min(x, max_arg)); },
      [max_arg](double x, double y) { return x > max_arg ? 0.0 : y; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  const double* p = a.value().data();
  for (Index i = 0; i < a.value().size(); ++i) s += p[i];
  auto an = a.node();
  return Tensor::make(Matrix::Constant(1, 1, s), {a}, [an](Node& self) {
    accumulate(*an, Matrix::Constant(an->value.rows(), an->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return sum(a) * (1.0 / static_cast<double>(a.size()));
}

Tensor row_sum(const Tensor& a) {
  Matrix y(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < a.cols(); ++j) s += a.value()(i, j);
    y(i, 0) = s;
  }
  auto an = a.node();
  return Tensor::make(std::move(y), {a}, [an](Node& self) {
    accumulate(*an, expand(self.grad, an->value.rows(), an->value.cols()));
  });
}

Tensor col_sum(const Tensor& a) {
  Matrix y = Matrix::Zero(1, a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) y(0, j) += a.value()(i, j);
  }
  auto an = a.node();
  return Tensor::make(std::move(y), {a}, [an](Node& self) {
    accumulate(*an, expand(self.grad, an->value.rows(), an->value.cols()));
  });
}

Tensor row_norm(const Tensor& a) {
  Matrix y(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < a.cols(); ++j) s += a.value()(i, j) * a.value()(i, j);
    y(i, 0) = std::sqrt(s);
  }
  auto an = a.node();
  Matrix norms = y;
  return Tensor::make(std::move(y), {a}, [an, norms = std::move(norms)](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    for (Index i = 0; i < g.rows(); ++i) {
      if (norms(i, 0) > 0.0) g.row(i) = an->value.row(i) * (self.grad(i, 0) / norms(i, 0));
    }
    accumulate(*an, g);
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + shape_string(a));
  }
  Matrix y = a.value().middleCols(start, count);
  auto an = a.node();
  return Tensor::make(std::move(y), {a}, [an, start, count](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    g.middleCols(start, count) = self.grad;
    accumulate(*an, g);
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index r = parts[0].rows();
  Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0]) + " vs " +
                       shape_string(p));
    }
    c += p.cols();
  }
  Matrix y(r, c);
  std::vector<std::shared_ptr<Node>> nodes;
  Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    nodes.push_back(p.node());
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make(std::move(y), parents, [nodes](Node& self) {
    Index o = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) accumulate(*n, self.grad.middleCols(o, n->value.cols()));
      o += n->value.cols();
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_cols(std::span<const Tensor>(parts));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index c = parts[0].cols();
  Index r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts[0]) + " vs " +
                       shape_string(p));
    }
    r += p.rows();
  }
  Matrix y(r, c);
  std::vector<std::shared_ptr<Node>> nodes;
  Index off = 0;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    nodes.push_back(p.node());
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return Tensor::make(std::move(y), parents, [nodes](Node& self) {
    Index o = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) accumulate(*n, self.grad.middleRows(o, n->value.rows()));
      o += n->value.rows();
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> rows) {
  Matrix y(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[k]) + " outside " +
                       shape_string(a));
    }
    y.row(static_cast<Index>(k)) = a.value().row(rows[k]);
  }
  auto an = a.node();
  std::vector<Index> idx(rows.begin(), rows.end());
  return Tensor::make(std::move(y), {a}, [an, idx = std::move(idx)](Node& self) {
    Matrix g = Matrix::Zero(an->value.rows(), an->value.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) g.row(idx[k]) += self.grad.row(static_cast<Index>(k));
    accumulate(*an, g);
  });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const Index> rows, Index out_rows) {
  if (static_cast<Index>(rows.size()) != a.rows()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(rows.size()) + " indices for " +
                     shape_string(a));
  }
  Matrix y = Matrix::Zero(out_rows, a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= out_rows) {
      throw ShapeError("scatter_add_rows: index " + std::to_string(rows[k]) + " outside " +
                       std::to_string(out_rows) + " rows");
    }
    y.row(rows[k]) += a.value().row(static_cast<Index>(k));
  }
  auto an = a.node();
  std::vector<Index> idx(rows.begin(), rows.end());
  return Tensor::make(std::move(y), {a}, [an, idx = std::move(idx)](Node& self) {
    Matrix g(static_cast<Index>(idx.size()), an->value.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) g.row(static_cast<Index>(k)) = self.grad.row(idx[k]);
    accumulate(*an, g);
  });
}

Tensor broadcast_to(const Tensor& a, Index rows, Index cols) {
  if ((a.rows() != rows && a.rows() != 1) || (a.cols() != cols && a.cols() != 1)) {
    throw ShapeError("broadcast_to: cannot stretch " + shape_string(a) + " to [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  Matrix y = expand(a.value(), rows, cols);
  auto an = a.node();
  return Tensor::make(std::move(y), {a}, [an](Node& self) {
    accumulate(*an, reduce_to(self.grad, an->value.rows(), an->value.cols()));
  });
}

}  // namespace umfsb::ad
