#include "umfsb/mlp.hpp"

#include <cmath>

#include "umfsb/error.hpp"

namespace umfsb::ad {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kSoftplus:
      return "softplus";
    case Activation::kIdentity:
      return "identity";
  }
  return "tanh";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::kTanh;
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<int> layer_dims, Activation hidden, std::mt19937_64& rng, std::string name)
    : dims_(std::move(layer_dims)), act_(hidden), name_(std::move(name)) {
  if (dims_.size() < 2) throw InvalidArgument("Mlp '" + name_ + "' needs at least two layer dims");
  for (int d : dims_) {
    if (d < 1) throw InvalidArgument("Mlp '" + name_ + "' has a non-positive layer dim");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix w(dims_[l], dims_[l + 1]);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    Matrix b(1, dims_[l + 1]);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = u(rng);
    weights_.push_back(Tensor::parameter(std::move(w), name_ + ".w" + std::to_string(l)));
    biases_.push_back(Tensor::parameter(std::move(b), name_ + ".b" + std::to_string(l)));
  }
}

Mlp::Trace Mlp::trace(const Tensor& x) const {
  if (x.cols() != input_dim()) {
    throw ShapeError("Mlp '" + name_ + "': input " + shape_string(x) + " but layer expects " +
                     std::to_string(input_dim()) + " columns");
  }
  Trace tr;
  Tensor h = x;
  const std::size_t n_layers = weights_.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Tensor pre = matmul(h, weights_[l]) + biases_[l];
    if (l + 1 == n_layers) {
      tr.output = pre;
      break;
    }
    switch (act_) {
      case Activation::kTanh: {
        h = tanh(pre);
        Tensor slope = 1.0 - square(h);
        tr.slope.push_back(slope);
        tr.curvature.push_back(-2.0 * h * slope);
        break;
      }
      case Activation::kSoftplus: {
        h = softplus(pre);
        Tensor s = sigmoid(pre);
        tr.slope.push_back(s);
        tr.curvature.push_back(s * (1.0 - s));
        break;
      }
      case Activation::kIdentity: {
        h = pre;
        tr.slope.push_back(Tensor::full(pre.rows(), pre.cols(), 1.0));
        tr.curvature.push_back(Tensor::zeros(pre.rows(), pre.cols()));
        break;
      }
    }
    tr.hidden.push_back(h);
  }
  return tr;
}

Tensor Mlp::input_gradient(const Trace& tr) const {
  if (output_dim() != 1) {
    throw ShapeError("input_gradient: Mlp '" + name_ + "' has " + std::to_string(output_dim()) +
                     " outputs, expected a scalar");
  }
  const Index n = tr.output.rows();
  // Upstream gradient of the output w.r.t. the last hidden layer: 1 * W_L^T.
  Tensor g = broadcast_to(transpose(weights_.back()), n, dims_[dims_.size() - 2]);
  for (std::size_t l = weights_.size() - 1; l-- > 0;) {
    g = matmul(g * tr.slope[l], transpose(weights_[l]));
  }
  return g;
}

Tensor Mlp::jvp(const Trace& tr, const Tensor& tangent) const {
  if (tangent.cols() != input_dim()) {
    throw ShapeError("jvp: tangent " + shape_string(tangent) + " for input dim " +
                     std::to_string(input_dim()));
  }
  Tensor t = tangent;
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) t = matmul(t, weights_[l]) * tr.slope[l];
  return matmul(t, weights_.back());
}

std::pair<Tensor, Tensor> Mlp::second_order_along(const Trace& tr, const Tensor& tangent,
                                                  const Tensor& tangent2) const {
  Tensor t = tangent;
  Tensor s = tangent2;
  for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
    Tensor dt = matmul(t, weights_[l]);
    Tensor ds = matmul(s, weights_[l]);
    s = ds * tr.slope[l] + square(dt) * tr.curvature[l];
    t = dt * tr.slope[l];
  }
  return {matmul(t, weights_.back()), matmul(s, weights_.back())};
}

Tensor Mlp::divergence_exact(const Trace& tr, int spatial_dim) const {
  if (output_dim() != spatial_dim || spatial_dim > input_dim()) {
    throw ShapeError("input_divergence: Mlp '" + name_ + "' maps " + std::to_string(input_dim()) +
                     " -> " + std::to_string(output_dim()) + ", spatial dim " +
                     std::to_string(spatial_dim));
  }
  const Index n = tr.output.rows();
  Tensor total;
  for (int k = 0; k < spatial_dim; ++k) {
    Matrix e = Matrix::Zero(n, input_dim());
    e.col(k).setOnes();
    Tensor col = slice_cols(jvp(tr, Tensor::constant(std::move(e))), k, 1);
    total = k == 0 ? col : total + col;
  }
  return total;
}

Tensor Mlp::divergence_randomized(const Trace& tr, int spatial_dim, int probes,
                                  std::mt19937_64& rng) const {
  if (output_dim() != spatial_dim || spatial_dim > input_dim()) {
    throw ShapeError("input_divergence: dimension mismatch for Mlp '" + name_ + "'");
  }
  if (probes < 1) throw InvalidArgument("divergence_randomized: probes must be >= 1");
  const Index n = tr.output.rows();
  std::bernoulli_distribution coin(0.5);
  Tensor total;
  for (int p = 0; p < probes; ++p) {
    Matrix z = Matrix::Zero(n, input_dim());
    for (Index i = 0; i < n; ++i) {
      for (int k = 0; k < spatial_dim; ++k) z(i, k) = coin(rng) ? 1.0 : -1.0;
    }
    Tensor zt = Tensor::constant(z);
    Tensor jz = jvp(tr, zt);
    Tensor quad = row_sum(jz * Tensor::constant(z.leftCols(spatial_dim)));
    total = p == 0 ? quad : total + quad;
  }
  return total / static_cast<double>(probes);
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

Mlp Mlp::clone() const {
  Mlp copy;
  copy.dims_ = dims_;
  copy.act_ = act_;
  copy.name_ = name_;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    copy.weights_.push_back(Tensor::parameter(weights_[l].value(), weights_[l].name()));
    copy.biases_.push_back(Tensor::parameter(biases_[l].value(), biases_[l].name()));
  }
  return copy;
}

Tensor input_gradient(const Mlp& net, const Tensor& x) { return net.input_gradient(net.trace(x)); }

Tensor input_divergence(const Mlp& net, const Tensor& x, int spatial_dim) {
  return net.divergence_exact(net.trace(x), spatial_dim);
}

}  // namespace umfsb::ad
