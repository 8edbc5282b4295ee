#pragma once

// Weighted interacting-particle integration of the learned dynamics
//   dX_i = [v(X_i, t) - 1/(N-1) sum_j k(X_i, X_j) w_j grad Phi(X_i - X_j)] dt
//   d log w_i = g(X_i, t) dt
// with the mean-field sum taken over all particles (full mode) or over a
// random partition into groups of p (Random Batch Method).
//
// Weights use the per-particle multiplicative convention w_i(0) = 1; the
// represented measure is (1/N) sum_i w_i delta_{X_i}.

#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "umfsb/nets.hpp"

namespace umfsb {

struct ParticleState {
  Tensor positions;    // N x d
  Tensor log_weights;  // N x 1
  double time = 0.0;

  Index size() const { return positions.rows(); }
  Index dim() const { return positions.cols(); }
  // Unit weights at the given positions.
  static ParticleState at(const Matrix& positions, double time);
  // Same values, cut from any recording.
  ParticleState detached() const;
};

enum class IntegratorMode { kFull, kRbm };
enum class IntegratorScheme { kEuler, kRk4 };

struct IntegratorConfig {
  double tau = 0.1;
  IntegratorMode mode = IntegratorMode::kRbm;
  int rbm_batch = 16;
  IntegratorScheme scheme = IntegratorScheme::kEuler;
  std::uint64_t seed = 0;
};

// Random partition of {0..n-1} into consecutive groups of p after a uniform
// shuffle; the last group holds the remainder when p does not divide n.
std::vector<std::vector<Index>> random_partition(Index n, int p, std::mt19937_64& rng);

// Mean-field interaction drift restricted to the given groups: row i is
// -1/(|C|-1) sum_{j in C, j != i} k w_j grad Phi(x_i - x_j) for i's group C.
// Singleton groups contribute zero. Differentiable in positions, weights and
// the potential's parameters.
Tensor interaction_drift_groups(const ModelBundle& m, const Tensor& x, const Tensor& log_w,
                                const std::vector<std::vector<Index>>& groups);

// All particles in one group (returns zeros for N = 1).
Tensor interaction_drift_full(const ModelBundle& m, const ParticleState& s);
// Values-only full mean-field drift, evaluated over pair chunks so memory
// stays bounded for large clouds (no recording).
Matrix interaction_drift_values(const ModelBundle& m, const ParticleState& s,
                                std::size_t chunk = 8192);
// One random partition with group size p; throws InvalidArgument when p > N
// or p < 2.
Tensor interaction_drift_rbm(const ModelBundle& m, const ParticleState& s, int p,
                             std::mt19937_64& rng);

// Right-hand side of the deterministic particle ODE for a fixed partition.
struct ParticleRates {
  Tensor dx;     // N x d
  Tensor dlogw;  // N x 1
};
ParticleRates particle_rates(const ModelBundle& m, const Tensor& x, const Tensor& log_w, double t,
                             const std::vector<std::vector<Index>>& groups);

// Advances one step of size tau (euler or rk4). A fresh partition is drawn
// per step in rbm mode and held fixed across rk4 stages. Throws NumericError
// naming the first non-finite particle.
ParticleState step(const ParticleState& s, const ModelBundle& m, const IntegratorConfig& cfg,
                   std::mt19937_64& rng, double tau);
inline ParticleState step(const ParticleState& s, const ModelBundle& m,
                          const IntegratorConfig& cfg, std::mt19937_64& rng) {
  return step(s, m, cfg, rng, cfg.tau);
}

// Integrates to `t_end` with steps of at most cfg.tau (the step is shortened
// uniformly so that t_end is hit exactly). Returns every grid state,
// including the initial one. With `record` false every state is detached
// (evaluation runs that need no gradients).
std::vector<ParticleState> integrate(const ParticleState& s, const ModelBundle& m,
                                     const IntegratorConfig& cfg, double t_end,
                                     std::mt19937_64& rng, bool record = true);

// Euler-Maruyama with drift b = v + grad s plus the interaction drift and
// noise sigma sqrt(tau) N(0, I). Values only (no recording).
std::vector<ParticleState> sample_sde(const ParticleState& s, const ModelBundle& m,
                                      const IntegratorConfig& cfg, double t_end, double sigma,
                                      std::mt19937_64& rng);

struct WeightedCloud {
  Matrix points;                // N x d
  Eigen::VectorXd weights;      // w_i / N (unnormalized masses)
  Eigen::VectorXd normalized;   // masses / total
  double total_mass = 0.0;      // (1/N) sum w_i
};
WeightedCloud empirical_measure(const ParticleState& s);

// Rows: time, particle_id, weight (w_i / N), x_1..x_d.
void write_trajectory_csv(std::ostream& out, const std::vector<ParticleState>& traj);

// Throws NumericError naming the first particle with a non-finite entry.
void check_finite(const ParticleState& s, const std::string& where);

}  // namespace umfsb
