#pragma once

// Training objectives:
//   * energy upper bound along simulated weighted trajectories,
//   * local / global mass matching and debiased entropic OT matching,
//   * the Fokker-Planck residual of rho = exp(2 s / sigma^2) under the
//     interaction-modified velocity,
//   * conditional flow matching for the score potential on Brownian bridges,
// plus the Gaussian mixture fit used as the initial density p0.

#include <cstdint>
#include <random>
#include <vector>

#include "umfsb/nets.hpp"
#include "umfsb/ot.hpp"
#include "umfsb/simulate.hpp"

namespace umfsb {

struct LossWeights {
  double lambda_m = 1.0;    // mass matching inside the reconstruction loss
  double lambda_d = 1.0;    // OT matching inside the reconstruction loss
  double lambda_r = 1e3;    // reconstruction
  double lambda_f = 1e4;    // Fokker-Planck residual
  double lambda_w = 10.0;   // initial-density mismatch inside the FP loss
  double alpha = 1.0;       // growth penalty weight in the energy
};

// Throws ConfigError when any weight is negative or non-finite.
void validate(const LossWeights& w);

// ---- energy ---------------------------------------------------------------

// Cross term of the energy integrand: |v| |s| with the potential s itself
// (kPotential) or |v| |grad s| (kGradient, a Cauchy-Schwarz bound of <v, grad s>).
enum class EnergyCrossTerm { kPotential, kGradient };

// Left Riemann sum over the trajectory grid of
//   mean_i w_i(t) [ |v|^2/2 + |grad s|^2/2 + cross + alpha g^2 ]
// with w_i = exp(log_weights) (w_i(0) = 1). Terms of disabled components
// (growth off, or no score net) are zero.
Tensor energy_loss(const std::vector<ParticleState>& traj, const ModelBundle& m, double alpha,
                   EnergyCrossTerm cross = EnergyCrossTerm::kPotential);

// The same quadrature with the exact inner product <v, grad s> in place of
// the bound (the value the bound dominates when cross = kGradient).
Tensor energy_inner_product_form(const std::vector<ParticleState>& traj, const ModelBundle& m,
                                 double alpha);

// ---- reconstruction -------------------------------------------------------

// Masses w_i / N (N = particle count) of a state, as a recorded N x 1 tensor.
Tensor particle_masses(const ParticleState& s);

// sum_i (mass_i - card(h^-1(i)) / |data| * n_k / n_0)^2 where h maps each
// data point to its nearest predicted particle. The targets sum to n_k / n_0,
// so a zero loss implies the total mass matches.
Tensor local_mass_loss(const Tensor& masses, const Matrix& positions, const Matrix& data,
                       double n_k, double n_0);
// (sum_i mass_i - n_k / n_0)^2.
Tensor global_mass_loss(const Tensor& masses, double n_k, double n_0);
// Debiased Sinkhorn divergence between the predicted cloud (weights
// normalized to the simplex here) and uniform data.
Tensor ot_loss(const Tensor& positions, const Tensor& masses, const Matrix& data,
               const ot::SinkhornConfig& cfg, const double* data_self = nullptr);
// OT(b, b) for uniform data (reusable across calls against the same data).
double ot_self_term(const Matrix& data, const ot::SinkhornConfig& cfg);

// ---- initial density ------------------------------------------------------

struct GmmOptions {
  int max_iter = 500;
  double tolerance = 1e-6;      // on the mean log-likelihood improvement
  double variance_floor = 1e-6;
};

struct InitialDensityModel {
  Eigen::VectorXd weights;  // K, on the simplex
  Matrix means;             // K x d
  Matrix variances;         // K x d (diagonal covariances)
  int iterations = 0;
  int reseeds = 0;

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
  Eigen::VectorXd log_pdf(const Matrix& x) const;
  Eigen::VectorXd pdf(const Matrix& x) const;
  double mean_log_likelihood(const Matrix& x) const;
};

// EM for a diagonal-covariance mixture. Throws InvalidArgument when there
// are fewer points than components.
InitialDensityModel fit_gmm(const Matrix& data, int components, std::mt19937_64& rng,
                            const GmmOptions& opts = {});

// ---- Fokker-Planck residual -----------------------------------------------

// Collocation points sharing one time and one particle cloud (the sources
// of the mean-field interaction at that time).
struct CollocationBlock {
  Matrix points;             // M x d
  double time = 0.0;
  Matrix sources;            // N x d
  Eigen::VectorXd source_log_weights;  // N
};

struct FpLossResult {
  Tensor loss;              // residual term + lambda_w * initial term
  Tensor residual;          // mean |residual|
  Tensor initial;           // mean |rho(x, 0) - p0(x)|
  bool density_clamped = false;
};

struct FpOptions {
  double max_log_density = 50.0;  // clamp on 2 s / sigma^2
  bool include_initial = true;
};

// Pointwise residual rho [ (2/sigma^2)(d_t s + grad s . v~) + div v~ - g ],
// v~ = v + interaction drift of the block's sources, div v~ = div v plus the
// divergence of that drift. Returns an M x 1 tensor.
Tensor fp_residual(const ModelBundle& m, const CollocationBlock& block, bool* clamped = nullptr,
                   double max_log_density = 50.0);

// Mean absolute residual over all blocks plus lambda_w times the mean
// absolute initial-density mismatch at `initial_points` (t = 0).
FpLossResult fp_loss(const ModelBundle& m, const std::vector<CollocationBlock>& blocks,
                     const Matrix& initial_points, const InitialDensityModel& p0,
                     double lambda_w, const FpOptions& opts = {});

// Samples `count` collocation points from the trajectory states (uniform over
// states and particles) with isotropic Gaussian jitter of std `jitter`.
std::vector<CollocationBlock> sample_collocation(const std::vector<ParticleState>& traj, int count,
                                                 double jitter, std::mt19937_64& rng);

// ---- score matching -------------------------------------------------------

struct ScoreCfmOptions {
  int pairs = 256;           // bridge samples per call
  int exact_plan_max = 64;   // exact coupling up to this size, entropic above
  double entropic_blur = 0.1;
};

// Bridge-weighted score regression between the clouds x0 (at t0) and x1 (at
// t1): pairs (x0, x1) are drawn from a minibatch OT plan, u uniform in (0, 1)
// (endpoints resampled), x = (1-u) x0 + u x1 + sigma sqrt(dt u (1-u)) eps, and
// the loss is mean |lambda(u) grad s(x, t0 + u dt) + eps|^2 with
// lambda(u) = 2 sqrt(dt u (1-u)) / sigma.
Tensor score_cfm_loss(const ModelBundle& m, const Matrix& x0, double t0, const Matrix& x1,
                      double t1, double sigma, std::mt19937_64& rng,
                      const ScoreCfmOptions& opts = {});

// lambda(u) = 2 sqrt(u (1 - u)) / sigma on a unit interval.
double score_weight(double u, double sigma, double dt = 1.0);

}  // namespace umfsb
