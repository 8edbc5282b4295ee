#include "umfsb/optim.hpp"

#include <cmath>

#include "umfsb/error.hpp"

namespace umfsb::ad {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw InvalidArgument("Adam: '" + p.name() + "' is not a parameter");
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.grad().allFinite()) throw NumericError("non-finite gradient for parameter '" + p.name() + "'");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    const Matrix& g = p.grad();
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Matrix& w = p.mutable_value();
    for (Index i = 0; i < w.size(); ++i) {
      const double mhat = m_[k].data()[i] / bc1;
      const double vhat = v_[k].data()[i] / bc2;
      w.data()[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params) s += p.grad().squaredNorm();
  return std::sqrt(s);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / (norm + 1e-12);
    for (auto& p : params) {
      if (p.node()->grad.size() != 0) p.node()->grad *= scale;
    }
  }
  return norm;
}

}  // namespace umfsb::ad
