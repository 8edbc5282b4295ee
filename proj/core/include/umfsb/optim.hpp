#pragma once

#include <vector>

#include "umfsb/autodiff.hpp"

namespace umfsb::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  // Applies one update from the gradients currently stored on the
  // parameters. Throws NumericError naming the first non-finite gradient.
  void step();
  void zero_grad();

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_ = 0;
};

// Global L2 norm of the parameter gradients (before clipping).
double grad_norm(const std::vector<Tensor>& params);
// Rescales gradients so their global norm is at most max_norm; returns the
// norm observed before rescaling.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace umfsb::ad
