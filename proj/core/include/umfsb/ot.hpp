#pragma once

// Optimal transport between weighted point clouds.
//
//  * Exact transport (network simplex on the dense bipartite graph) for
//    evaluation metrics and minibatch couplings.
//  * Debiased entropic transport (log-domain Sinkhorn with epsilon
//    annealing) with squared Euclidean cost, differentiable in the first
//    cloud's positions and weights, for training losses.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "umfsb/autodiff.hpp"

namespace umfsb::ot {

using ad::Index;
using ad::Matrix;
using ad::Tensor;
using Vector = Eigen::VectorXd;

Matrix sq_euclidean_cost(const Matrix& x, const Matrix& y);
Matrix euclidean_cost(const Matrix& x, const Matrix& y);

// ---- exact transport ----------------------------------------------------

struct ExactResult {
  double cost = 0.0;
  Matrix plan;  // n x m, filled only when requested
  long pivots = 0;
};

// Minimum-cost transport between masses a (n) and b (m) under `cost`
// (n x m). Both are normalized to unit total internally; throws
// InvalidArgument on negative entries or zero total mass.
ExactResult exact_transport(const Vector& a, const Vector& b, const Matrix& cost,
                            bool want_plan = false);

// Exact W1 (Euclidean ground cost). Clouds larger than `max_points` are
// uniformly subsampled (without replacement, seeded) and reweighted.
double wasserstein1(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b,
                    std::uint64_t seed = 0, Index max_points = 2000);
// Exact W2 = sqrt(min sum pi ||x - y||^2).
double wasserstein2(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b);

// Draws `count` index pairs (i, j) from an exact plan between uniform
// minibatches x (n) and y (m).
std::vector<std::pair<Index, Index>> sample_exact_plan(const Matrix& x, const Matrix& y, int count,
                                                       std::mt19937_64& rng);

// ---- entropic transport -------------------------------------------------

struct SinkhornConfig {
  double blur = 0.05;       // epsilon = blur^2 for the squared Euclidean cost
  int max_iter = 200;       // total iterations including annealing
  double scaling = 0.5;     // epsilon shrink factor per annealing iteration
  double tolerance = 1e-3;  // L1 marginal violation at convergence
  bool strict = true;       // throw on non-convergence
};

struct SinkhornResult {
  double value = 0.0;  // <a, f> + <b, g>
  Vector f, g;         // dual potentials
  int iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;
};

// Entropic OT_eps(a, b) with cost ||x - y||^2.
SinkhornResult sinkhorn(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b,
                        const SinkhornConfig& cfg);
// Symmetric problem OT_eps(a, a) (averaged fixed-point updates).
SinkhornResult sinkhorn_symmetric(const Matrix& x, const Vector& a, const SinkhornConfig& cfg);

// S(a, b) = OT(a, b) - OT(a, a)/2 - OT(b, b)/2 on values. Weights are
// normalized internally.
double sinkhorn_divergence(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b,
                           const SinkhornConfig& cfg);

// Recorded version: x (N x d) and a (N x 1, on the simplex) may carry
// gradients; y and b are data. Gradients come from the converged potentials
// (envelope theorem). `target_self`, when given, is OT(b, b) and skips that
// solve.
Tensor sinkhorn_divergence(const Tensor& x, const Tensor& a, const Matrix& y, const Vector& b,
                           const SinkhornConfig& cfg, const double* target_self = nullptr);

// Draws `count` index pairs from the entropic plan (blur as in
// SinkhornConfig, not required to converge) between uniform clouds.
std::vector<std::pair<Index, Index>> sample_entropic_plan(const Matrix& x, const Matrix& y,
                                                          int count, double blur,
                                                          std::mt19937_64& rng);

}  // namespace umfsb::ot
