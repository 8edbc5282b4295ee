#pragma once

#include <random>
#include <string>
#include <vector>

#include "umfsb/autodiff.hpp"

namespace umfsb::ad {

enum class Activation { kTanh, kSoftplus, kIdentity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Fully connected network operating on row-batched inputs (N x in -> N x out).
// Hidden layers use `hidden`, the output layer is affine.
//
// Derivatives with respect to the input are built from recorded tensor
// operations (the layer-wise chain rule), so losses that contain them remain
// differentiable with respect to the weights.
class Mlp {
 public:
  // Activations and pre-activations of one batched forward pass, reused by the
  // derivative routines below.
  struct Trace {
    std::vector<Tensor> hidden;      // post-activation of each hidden layer
    std::vector<Tensor> slope;       // activation'(pre-activation) per hidden layer
    std::vector<Tensor> curvature;   // activation''(pre-activation) per hidden layer
    Tensor output;
  };

  Mlp() = default;
  // PyTorch-style default initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::vector<int> layer_dims, Activation hidden, std::mt19937_64& rng, std::string name);

  Trace trace(const Tensor& x) const;
  Tensor forward(const Tensor& x) const { return trace(x).output; }

  // d(output)/d(input) for a scalar-output network: N x in.
  Tensor input_gradient(const Trace& tr) const;
  // Jacobian-vector product: row i holds J(x_i) * tangent_i, N x out.
  Tensor jvp(const Trace& tr, const Tensor& tangent) const;
  // First and second derivatives of the output along the curve x(s) at s=0,
  // given x'(0) = tangent and x''(0) = tangent2. Returns {first, second}.
  std::pair<Tensor, Tensor> second_order_along(const Trace& tr, const Tensor& tangent,
                                               const Tensor& tangent2) const;
  // Trace of d(output)/d(input[:, 0:out]); requires out <= in.
  Tensor divergence_exact(const Trace& tr, int spatial_dim) const;
  // Hutchinson estimate E[z^T J z] with Rademacher probes.
  Tensor divergence_randomized(const Trace& tr, int spatial_dim, int probes,
                               std::mt19937_64& rng) const;

  const std::vector<int>& layer_dims() const { return dims_; }
  Activation activation() const { return act_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::string& name() const { return name_; }

  // Weights are stored in x W + b orientation: W is in x out, b is 1 x out.
  std::vector<Tensor>& weights() { return weights_; }
  std::vector<Tensor>& biases() { return biases_; }
  const std::vector<Tensor>& weights() const { return weights_; }
  const std::vector<Tensor>& biases() const { return biases_; }
  std::vector<Tensor> parameters() const;

  // Deep copy with fresh parameter nodes.
  Mlp clone() const;

 private:
  std::vector<int> dims_;
  Activation act_ = Activation::kTanh;
  std::string name_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

// Convenience wrappers matching the per-point view.
Tensor input_gradient(const Mlp& net, const Tensor& x);
Tensor input_divergence(const Mlp& net, const Tensor& x, int spatial_dim);

}  // namespace umfsb::ad
