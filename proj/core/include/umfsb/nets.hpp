#pragma once

// The four learned functions of the model and their spatial derivatives:
//   velocity  v(x, t) in R^d
//   growth    g(x, t) in R
//   score     s(x, t) ~ (sigma^2 / 2) log rho(x, t), rho = exp(2 s / sigma^2)
//   pair potential Phi(|x_i - x_j|), radial in the pair distance
//
// Every field takes row-batched positions x (N x d) and times t (N x 1).

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "umfsb/autodiff.hpp"
#include "umfsb/mlp.hpp"

namespace umfsb {

using ad::Index;
using ad::Matrix;
using ad::Tensor;

struct DiffusionConfig {
  double sigma = 0.05;  // constant in time
  double alpha = 1.0;   // weight of the growth penalty Psi(g) = g^2
};

struct NetConfig {
  int hidden_width = 64;
  int hidden_layers = 3;
  ad::Activation activation = ad::Activation::kTanh;
  int rbf_kernels = 8;
  int interaction_hidden_width = 64;
  int interaction_hidden_layers = 3;
  // Divergence of the velocity: exact Jacobian trace up to this dimension,
  // Hutchinson estimate with `divergence_probes` probes above it.
  int exact_divergence_max_dim = 8;
  int divergence_probes = 16;
};

struct ScalarEval {
  Tensor value;   // N x 1
  Tensor grad_x;  // N x d
  Tensor grad_t;  // N x 1
};

class ScalarField {
 public:
  virtual ~ScalarField() = default;
  virtual Tensor value(const Tensor& x, const Tensor& t) const = 0;
  virtual ScalarEval evaluate(const Tensor& x, const Tensor& t) const = 0;
  virtual std::vector<Tensor> parameters() const { return {}; }
};

struct VectorEval {
  Tensor value;       // N x d
  Tensor divergence;  // N x 1
};

class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual Tensor value(const Tensor& x, const Tensor& t) const = 0;
  virtual VectorEval evaluate(const Tensor& x, const Tensor& t) const = 0;
  virtual std::vector<Tensor> parameters() const { return {}; }
};

// Phi and its first two derivatives in the pair distance.
struct RadialEval {
  Tensor phi;
  Tensor dphi;
  Tensor d2phi;
};

class RadialPotential {
 public:
  virtual ~RadialPotential() = default;
  // `order` selects how many derivatives are needed (0, 1 or 2); entries
  // beyond it may be left empty.
  virtual RadialEval evaluate(const Tensor& dist, int order) const = 0;
  virtual std::vector<Tensor> parameters() const { return {}; }
};

// ---- learned implementations ----------------------------------------------

class MlpVectorField : public VectorField {
 public:
  MlpVectorField(int dim, const NetConfig& cfg, std::mt19937_64& rng, std::string name);
  explicit MlpVectorField(ad::Mlp net, NetConfig cfg = {});

  Tensor value(const Tensor& x, const Tensor& t) const override;
  VectorEval evaluate(const Tensor& x, const Tensor& t) const override;
  std::vector<Tensor> parameters() const override { return net_.parameters(); }

  ad::Mlp& net() { return net_; }
  const ad::Mlp& net() const { return net_; }
  // Seeds the probe stream used by the randomized divergence.
  void set_probe_seed(std::uint64_t seed) { probe_rng_.seed(seed); }

 private:
  ad::Mlp net_;
  NetConfig cfg_;
  mutable std::mt19937_64 probe_rng_{0};
};

class MlpScalarField : public ScalarField {
 public:
  MlpScalarField(int dim, const NetConfig& cfg, std::mt19937_64& rng, std::string name);
  explicit MlpScalarField(ad::Mlp net);

  Tensor value(const Tensor& x, const Tensor& t) const override;
  ScalarEval evaluate(const Tensor& x, const Tensor& t) const override;
  std::vector<Tensor> parameters() const override { return net_.parameters(); }

  ad::Mlp& net() { return net_; }
  const ad::Mlp& net() const { return net_; }

 private:
  ad::Mlp net_;
};

// Phi(d) = NN(e(d)) with e_k(d) = exp(-beta_k (exp(-d) - mu_k)^2). Centers
// are a uniform grid over exp(-[0, cutoff]); widths are 1 / spacing^2.
class RbfPotential : public RadialPotential {
 public:
  RbfPotential(double cutoff, const NetConfig& cfg, std::mt19937_64& rng);
  RbfPotential(std::vector<double> centers, std::vector<double> widths, ad::Mlp net);

  RadialEval evaluate(const Tensor& dist, int order) const override;
  std::vector<Tensor> parameters() const override { return net_.parameters(); }

  // Features e(d), dist is P x 1, result P x K.
  Tensor features(const Tensor& dist) const;

  const std::vector<double>& centers() const { return centers_; }
  const std::vector<double>& widths() const { return widths_; }
  ad::Mlp& net() { return net_; }
  const ad::Mlp& net() const { return net_; }

 private:
  std::vector<double> centers_;
  std::vector<double> widths_;
  Matrix centers_row_;
  Matrix widths_row_;
  ad::Mlp net_;
};

// ---- closed-form implementations (ground truth and test oracles) ----------

class ConstantScalarField : public ScalarField {
 public:
  explicit ConstantScalarField(double c) : c_(c) {}
  Tensor value(const Tensor& x, const Tensor& t) const override;
  ScalarEval evaluate(const Tensor& x, const Tensor& t) const override;

 private:
  double c_;
};

// v(x, t) = x A + b.
class AffineVectorField : public VectorField {
 public:
  AffineVectorField(Matrix a, Matrix b);
  static AffineVectorField zero(int dim);
  Tensor value(const Tensor& x, const Tensor& t) const override;
  VectorEval evaluate(const Tensor& x, const Tensor& t) const override;

 private:
  Matrix a_;
  Matrix b_;
};

// s(x, t) = (sigma^2 / 2) log N(x; mean, (var0 + var_rate t) I).
class GaussianScoreField : public ScalarField {
 public:
  GaussianScoreField(double sigma, Matrix mean, double var0, double var_rate);
  Tensor value(const Tensor& x, const Tensor& t) const override;
  ScalarEval evaluate(const Tensor& x, const Tensor& t) const override;

 private:
  double sigma_;
  Matrix mean_;
  double var0_;
  double var_rate_;
};

// v = -grad s for the GaussianScoreField above: the probability-flow
// velocity of pure diffusion when var_rate = sigma^2.
class GaussianHeatFlowVelocity : public VectorField {
 public:
  GaussianHeatFlowVelocity(double sigma, Matrix mean, double var0, double var_rate);
  Tensor value(const Tensor& x, const Tensor& t) const override;
  VectorEval evaluate(const Tensor& x, const Tensor& t) const override;

 private:
  double sigma_;
  Matrix mean_;
  double var0_;
  double var_rate_;
};

class QuadraticPotential : public RadialPotential {
 public:
  RadialEval evaluate(const Tensor& dist, int order) const override;
};

// 4 [(d_e / d)^12 - (d_e / d)^6].
class LennardJonesPotential : public RadialPotential {
 public:
  explicit LennardJonesPotential(double equilibrium) : de_(equilibrium) {}
  RadialEval evaluate(const Tensor& dist, int order) const override;

 private:
  double de_;
};

class ZeroPotential : public RadialPotential {
 public:
  RadialEval evaluate(const Tensor& dist, int order) const override;
};

// ---- pairwise interaction -------------------------------------------------

struct InteractionConfig {
  double cutoff = 0.5;
  // Per-pair force magnitude bound; <= 0 disables clipping.
  double force_max = 0.0;
  // Include the partner weight w_j inside the mean-field sum.
  bool use_weights = true;
};

// k(x_i, x_j): 1 when |x_i - x_j| < cutoff, else 0.
double interaction_weight(const Matrix& xi, const Matrix& xj, double cutoff);

// Phi(|x_i - x_j|) for single points (1 x d rows).
double pair_potential(const RadialPotential& phi, const Matrix& xi, const Matrix& xj);

// grad_{x_i} Phi(x_i - x_j) = Phi'(d) (x_i - x_j) / d, zero when d = 0 or
// d >= cutoff, clipped to force_max when configured.
Matrix pair_force(const RadialPotential& phi, const Matrix& xi, const Matrix& xj,
                  const InteractionConfig& cfg);

// Index pairs (i, j), i != j, with 0 < |x_i - x_j| < cutoff, over the given
// candidate groups. Deterministic order (by i then j).
struct PairList {
  std::vector<Index> first;
  std::vector<Index> second;
  std::size_t size() const { return first.size(); }
};
PairList pairs_within(const Matrix& x, double cutoff);
PairList pairs_within(const Matrix& x, std::span<const Index> members, double cutoff);
// Unordered pairs i < j among `members` (each interacting pair listed once).
PairList unique_pairs_within(const Matrix& x, std::span<const Index> members, double cutoff);
// Pairs between query rows and source rows (query i, source j).
PairList cross_pairs_within(const Matrix& query, const Matrix& source, double cutoff);

struct PairTerms {
  Tensor force;      // P x d: grad_{x_i} Phi for each pair, clipped
  Tensor laplacian;  // P x 1: Laplacian of Phi in x_i (order 2 only)
};

// Batched pair forces for the listed pairs; `query` rows are indexed by
// pairs.first and `source` rows by pairs.second.
PairTerms pair_terms(const RadialPotential& phi, const Tensor& query, const Tensor& source,
                     const PairList& pairs, const InteractionConfig& cfg, int order);

// ---- bundle ---------------------------------------------------------------

struct ModelBundle {
  int dim = 0;
  DiffusionConfig diffusion;
  InteractionConfig interaction;
  NetConfig net_config;
  bool growth_enabled = true;
  bool interaction_enabled = true;
  std::uint64_t seed = 0;

  std::shared_ptr<VectorField> velocity;
  std::shared_ptr<ScalarField> growth;
  std::shared_ptr<ScalarField> score;
  std::shared_ptr<RadialPotential> potential;

  std::vector<Tensor> velocity_parameters() const;
  std::vector<Tensor> growth_parameters() const;
  std::vector<Tensor> score_parameters() const;
  std::vector<Tensor> potential_parameters() const;

  // Deep copy of every learned parameter.
  ModelBundle clone() const;
};

// Fresh learned bundle: MLPs on (x, t) for v, g, s and an RBF potential.
ModelBundle make_learned_bundle(int dim, const NetConfig& net, const DiffusionConfig& diff,
                                const InteractionConfig& inter, std::uint64_t seed);

// Score-derived quantities.
Tensor score_vector(const ModelBundle& m, const Tensor& x, const Tensor& t);
// rho = exp(2 s / sigma^2); the exponent is clamped at `max_log_density` and
// `clamped` (when given) reports whether that happened.
Tensor density(const ModelBundle& m, const Tensor& x, const Tensor& t,
               bool* clamped = nullptr, double max_log_density = 50.0);
// Drift of the underlying SDE: b = v + grad s.
Tensor recover_drift(const ModelBundle& m, const Tensor& x, const Tensor& t);

// Appends the time column: [x, t] with t broadcast to N x 1.
Tensor with_time(const Tensor& x, const Tensor& t);
Tensor time_column(Index n, double t);

}  // namespace umfsb
