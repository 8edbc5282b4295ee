#include "umfsb/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "umfsb/error.hpp"

namespace umfsb {

namespace {

std::vector<int> mlp_dims(int in, int width, int layers, int out) {
  std::vector<int> dims{in};
  for (int l = 0; l < layers; ++l) dims.push_back(width);
  dims.push_back(out);
  return dims;
}

Matrix row_of(const std::vector<double>& v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) m(0, static_cast<Index>(k)) = v[k];
  return m;
}

}  // namespace

Tensor time_column(Index n, double t) { return Tensor::full(n, 1, t); }

Tensor with_time(const Tensor& x, const Tensor& t) {
  if (t.rows() == x.rows()) return ad::concat_cols(x, t);
  return ad::concat_cols(x, ad::broadcast_to(t, x.rows(), 1));
}

// ---- MlpVectorField --------------------------------------------------------

MlpVectorField::MlpVectorField(int dim, const NetConfig& cfg, std::mt19937_64& rng,
                               std::string name)
    : net_(mlp_dims(dim + 1, cfg.hidden_width, cfg.hidden_layers, dim), cfg.activation, rng,
           std::move(name)),
      cfg_(cfg) {}

MlpVectorField::MlpVectorField(ad::Mlp net, NetConfig cfg) : net_(std::move(net)), cfg_(cfg) {}

Tensor MlpVectorField::value(const Tensor& x, const Tensor& t) const {
  return net_.forward(with_time(x, t));
}

VectorEval MlpVectorField::evaluate(const Tensor& x, const Tensor& t) const {
  auto tr = net_.trace(with_time(x, t));
  const int d = static_cast<int>(x.cols());
  VectorEval out;
  out.value = tr.output;
  out.divergence = d <= cfg_.exact_divergence_max_dim
                       ? net_.divergence_exact(tr, d)
                       : net_.divergence_randomized(tr, d, cfg_.divergence_probes, probe_rng_);
  return out;
}

// ---- MlpScalarField --------------------------------------------------------

MlpScalarField::MlpScalarField(int dim, const NetConfig& cfg, std::mt19937_64& rng,
                               std::string name)
    : net_(mlp_dims(dim + 1, cfg.hidden_width, cfg.hidden_layers, 1), cfg.activation, rng,
           std::move(name)) {}

MlpScalarField::MlpScalarField(ad::Mlp net) : net_(std::move(net)) {}

Tensor MlpScalarField::value(const Tensor& x, const Tensor& t) const {
  return net_.forward(with_time(x, t));
}

ScalarEval MlpScalarField::evaluate(const Tensor& x, const Tensor& t) const {
  auto tr = net_.trace(with_time(x, t));
  Tensor g = net_.input_gradient(tr);
  const Index d = x.cols();
  return {tr.output, ad::slice_cols(g, 0, d), ad::slice_cols(g, d, 1)};
}

// ---- RbfPotential ------------------------------------------------------------

RbfPotential::RbfPotential(double cutoff, const NetConfig& cfg, std::mt19937_64& rng) {
  const int k = cfg.rbf_kernels;
  if (k < 1) throw ConfigError("rbf_kernels must be >= 1");
  if (!(cutoff > 0.0)) throw ConfigError("interaction cutoff must be positive");
  const double lo = std::exp(-cutoff);
  const double spacing = k > 1 ? (1.0 - lo) / (k - 1) : (1.0 - lo);
  for (int i = 0; i < k; ++i) {
    centers_.push_back(k > 1 ? 1.0 - i * spacing : 1.0);
    widths_.push_back(1.0 / (spacing * spacing));
  }
  centers_row_ = row_of(centers_);
  widths_row_ = row_of(widths_);
  net_ = ad::Mlp(mlp_dims(k, cfg.interaction_hidden_width, cfg.interaction_hidden_layers, 1),
                 cfg.activation, rng, "interaction");
  // Zero output layer: the potential starts flat, so enabling interaction
  // leaves a pretrained flow unchanged until the potential is trained.
  net_.weights().back().mutable_value().setZero();
  net_.biases().back().mutable_value().setZero();
}

RbfPotential::RbfPotential(std::vector<double> centers, std::vector<double> widths, ad::Mlp net)
    : centers_(std::move(centers)), widths_(std::move(widths)), net_(std::move(net)) {
  if (centers_.empty() || centers_.size() != widths_.size()) {
    throw ConfigError("RBF centers/widths must be nonempty and of equal length");
  }
  for (double b : widths_) {
    if (!(b > 0.0)) throw ConfigError("RBF widths must be positive");
  }
  if (net_.input_dim() != static_cast<int>(centers_.size()) || net_.output_dim() != 1) {
    throw ConfigError("interaction net must map K RBF features to a scalar");
  }
  centers_row_ = row_of(centers_);
  widths_row_ = row_of(widths_);
}

Tensor RbfPotential::features(const Tensor& dist) const {
  Tensor u = ad::exp(-dist);
  Tensor diff = u - Tensor::constant(centers_row_);
  return ad::exp(-(Tensor::constant(widths_row_) * ad::square(diff)));
}

RadialEval RbfPotential::evaluate(const Tensor& dist, int order) const {
  Tensor mu = Tensor::constant(centers_row_);
  Tensor beta = Tensor::constant(widths_row_);
  Tensor u = ad::exp(-dist);
  Tensor diff = u - mu;
  Tensor e = ad::exp(-(beta * ad::square(diff)));
  auto tr = net_.trace(e);
  RadialEval out;
  out.phi = tr.output;
  if (order < 1) return out;
  // de/dd = a e with a = 2 beta u (u - mu); d2e/dd2 = e (a' + a^2).
  Tensor a = 2.0 * beta * u * diff;
  Tensor e1 = a * e;
  if (order < 2) {
    out.dphi = net_.jvp(tr, e1);
    return out;
  }
  Tensor a_prime = 2.0 * beta * u * (mu - 2.0 * u);
  Tensor e2 = e * (a_prime + ad::square(a));
  auto [d1, d2] = net_.second_order_along(tr, e1, e2);
  out.dphi = d1;
  out.d2phi = d2;
  return out;
}

// ---- closed-form fields ------------------------------------------------------

Tensor ConstantScalarField::value(const Tensor& x, const Tensor&) const {
  return Tensor::full(x.rows(), 1, c_);
}

ScalarEval ConstantScalarField::evaluate(const Tensor& x, const Tensor& t) const {
  return {value(x, t), Tensor::zeros(x.rows(), x.cols()), Tensor::zeros(x.rows(), 1)};
}

AffineVectorField::AffineVectorField(Matrix a, Matrix b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.rows() != a_.cols() || b_.rows() != 1 || b_.cols() != a_.cols()) {
    throw ShapeError("AffineVectorField: A must be d x d and b 1 x d");
  }
}

AffineVectorField AffineVectorField::zero(int dim) {
  return AffineVectorField(Matrix::Zero(dim, dim), Matrix::Zero(1, dim));
}

Tensor AffineVectorField::value(const Tensor& x, const Tensor&) const {
  return ad::matmul(x, Tensor::constant(a_)) + Tensor::constant(b_);
}

VectorEval AffineVectorField::evaluate(const Tensor& x, const Tensor& t) const {
  return {value(x, t), Tensor::full(x.rows(), 1, a_.trace())};
}

GaussianScoreField::GaussianScoreField(double sigma, Matrix mean, double var0, double var_rate)
    : sigma_(sigma), mean_(std::move(mean)), var0_(var0), var_rate_(var_rate) {}

Tensor GaussianScoreField::value(const Tensor& x, const Tensor& t) const {
  const double d = static_cast<double>(x.cols());
  Tensor var = var0_ + var_rate_ * t;
  Tensor r2 = ad::row_sum(ad::square(x - Tensor::constant(mean_)));
  Tensor logp = -(r2 / (2.0 * var)) - 0.5 * d * ad::log(2.0 * std::numbers::pi * var);
  return 0.5 * sigma_ * sigma_ * logp;
}

ScalarEval GaussianScoreField::evaluate(const Tensor& x, const Tensor& t) const {
  const double d = static_cast<double>(x.cols());
  const double h = 0.5 * sigma_ * sigma_;
  Tensor var = var0_ + var_rate_ * t;
  Tensor centered = x - Tensor::constant(mean_);
  Tensor r2 = ad::row_sum(ad::square(centered));
  ScalarEval out;
  out.value = value(x, t);
  out.grad_x = -h * centered / var;
  out.grad_t = h * (r2 * var_rate_ / (2.0 * ad::square(var)) - 0.5 * d * var_rate_ / var);
  return out;
}

GaussianHeatFlowVelocity::GaussianHeatFlowVelocity(double sigma, Matrix mean, double var0,
                                                   double var_rate)
    : sigma_(sigma), mean_(std::move(mean)), var0_(var0), var_rate_(var_rate) {}

Tensor GaussianHeatFlowVelocity::value(const Tensor& x, const Tensor& t) const {
  Tensor var = var0_ + var_rate_ * t;
  return 0.5 * sigma_ * sigma_ * (x - Tensor::constant(mean_)) / var;
}

VectorEval GaussianHeatFlowVelocity::evaluate(const Tensor& x, const Tensor& t) const {
  Tensor var = var0_ + var_rate_ * t;
  const double d = static_cast<double>(x.cols());
  return {value(x, t), 0.5 * sigma_ * sigma_ * d / ad::broadcast_to(var, x.rows(), 1)};
}

RadialEval QuadraticPotential::evaluate(const Tensor& dist, int order) const {
  RadialEval out;
  out.phi = ad::square(dist);
  if (order >= 1) out.dphi = 2.0 * dist;
  if (order >= 2) out.d2phi = Tensor::full(dist.rows(), 1, 2.0);
  return out;
}

RadialEval LennardJonesPotential::evaluate(const Tensor& dist, int order) const {
  Tensor r = de_ / dist;  // reduced inverse distance
  Tensor r6 = ad::pow(r, 6.0);
  Tensor r12 = ad::square(r6);
  RadialEval out;
  out.phi = 4.0 * (r12 - r6);
  if (order >= 1) out.dphi = 4.0 * (-12.0 * r12 + 6.0 * r6) / dist;
  if (order >= 2) out.d2phi = 4.0 * (156.0 * r12 - 42.0 * r6) / ad::square(dist);
  return out;
}

RadialEval ZeroPotential::evaluate(const Tensor& dist, int order) const {
  RadialEval out;
  out.phi = Tensor::zeros(dist.rows(), 1);
  if (order >= 1) out.dphi = Tensor::zeros(dist.rows(), 1);
  if (order >= 2) out.d2phi = Tensor::zeros(dist.rows(), 1);
  return out;
}

// ---- pairwise interaction ------------------------------------------------------

double interaction_weight(const Matrix& xi, const Matrix& xj, double cutoff) {
  return (xi - xj).norm() < cutoff ? 1.0 : 0.0;
}

double pair_potential(const RadialPotential& phi, const Matrix& xi, const Matrix& xj) {
  const double d = (xi - xj).norm();
  return phi.evaluate(Tensor::constant(Matrix::Constant(1, 1, d)), 0).phi.item();
}

Matrix pair_force(const RadialPotential& phi, const Matrix& xi, const Matrix& xj,
                  const InteractionConfig& cfg) {
  PairList one;
  const double d = (xi - xj).norm();
  if (d == 0.0 || d >= cfg.cutoff) return Matrix::Zero(1, xi.cols());
  one.first.push_back(0);
  one.second.push_back(0);
  return pair_terms(phi, Tensor::constant(xi), Tensor::constant(xj), one, cfg, 1).force.value();
}

PairList pairs_within(const Matrix& x, double cutoff) {
  PairList out;
  const double c2 = cutoff * cutoff;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.rows(); ++j) {
      if (i == j) continue;
      const double r2 = (x.row(i) - x.row(j)).squaredNorm();
      if (r2 > 0.0 && r2 < c2) {
        out.first.push_back(i);
        out.second.push_back(j);
      }
    }
  }
  return out;
}

PairList pairs_within(const Matrix& x, std::span<const Index> members, double cutoff) {
  PairList out;
  const double c2 = cutoff * cutoff;
  for (Index i : members) {
    for (Index j : members) {
      if (i == j) continue;
      const double r2 = (x.row(i) - x.row(j)).squaredNorm();
      if (r2 > 0.0 && r2 < c2) {
        out.first.push_back(i);
        out.second.push_back(j);
      }
    }
  }
  return out;
}

PairList unique_pairs_within(const Matrix& x, std::span<const Index> members, double cutoff) {
  PairList out;
  const double c2 = cutoff * cutoff;
  for (std::size_t a = 0; a < members.size(); ++a) {
    for (std::size_t b = a + 1; b < members.size(); ++b) {
      const Index i = members[a], j = members[b];
      const double r2 = (x.row(i) - x.row(j)).squaredNorm();
      if (r2 > 0.0 && r2 < c2) {
        out.first.push_back(i);
        out.second.push_back(j);
      }
    }
  }
  return out;
}

PairList cross_pairs_within(const Matrix& query, const Matrix& source, double cutoff) {
  PairList out;
  const double c2 = cutoff * cutoff;
  for (Index i = 0; i < query.rows(); ++i) {
    for (Index j = 0; j < source.rows(); ++j) {
      const double r2 = (query.row(i) - source.row(j)).squaredNorm();
      if (r2 > 0.0 && r2 < c2) {
        out.first.push_back(i);
        out.second.push_back(j);
      }
    }
  }
  return out;
}

PairTerms pair_terms(const RadialPotential& phi, const Tensor& query, const Tensor& source,
                     const PairList& pairs, const InteractionConfig& cfg, int order) {
  const Index dim = query.cols();
  PairTerms out;
  if (pairs.size() == 0) {
    out.force = Tensor::zeros(0, dim);
    out.laplacian = Tensor::zeros(0, 1);
    return out;
  }
  Tensor diff = ad::gather_rows(query, pairs.first) - ad::gather_rows(source, pairs.second);
  Tensor dist = ad::row_norm(diff);
  RadialEval rad = phi.evaluate(dist, std::max(order, 1));
  Tensor magnitude = rad.dphi;
  if (cfg.force_max > 0.0) {
    Matrix scale(magnitude.rows(), 1);
    for (Index p = 0; p < scale.rows(); ++p) {
      const double m = std::abs(magnitude.at(p, 0));
      scale(p, 0) = m > cfg.force_max ? cfg.force_max / m : 1.0;
    }
    magnitude = magnitude * Tensor::constant(std::move(scale));
  }
  out.force = magnitude * (diff / dist);
  if (order >= 2) {
    out.laplacian = rad.d2phi + static_cast<double>(dim - 1) * rad.dphi / dist;
  }
  return out;
}

// ---- bundle ---------------------------------------------------------------------

std::vector<Tensor> ModelBundle::velocity_parameters() const {
  return velocity ? velocity->parameters() : std::vector<Tensor>{};
}
std::vector<Tensor> ModelBundle::growth_parameters() const {
  return growth ? growth->parameters() : std::vector<Tensor>{};
}
std::vector<Tensor> ModelBundle::score_parameters() const {
  return score ? score->parameters() : std::vector<Tensor>{};
}
std::vector<Tensor> ModelBundle::potential_parameters() const {
  return potential ? potential->parameters() : std::vector<Tensor>{};
}

ModelBundle ModelBundle::clone() const {
  ModelBundle copy = *this;
  if (auto v = std::dynamic_pointer_cast<MlpVectorField>(velocity)) {
    copy.velocity = std::make_shared<MlpVectorField>(v->net().clone(), net_config);
  }
  if (auto g = std::dynamic_pointer_cast<MlpScalarField>(growth)) {
    copy.growth = std::make_shared<MlpScalarField>(g->net().clone());
  }
  if (auto s = std::dynamic_pointer_cast<MlpScalarField>(score)) {
    copy.score = std::make_shared<MlpScalarField>(s->net().clone());
  }
  if (auto p = std::dynamic_pointer_cast<RbfPotential>(potential)) {
    copy.potential = std::make_shared<RbfPotential>(p->centers(), p->widths(), p->net().clone());
  }
  return copy;
}

ModelBundle make_learned_bundle(int dim, const NetConfig& net, const DiffusionConfig& diff,
                                const InteractionConfig& inter, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("model dimension must be >= 1");
  if (!(diff.sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (diff.alpha < 0.0) throw ConfigError("alpha must be nonnegative");
  std::mt19937_64 rng(seed);
  ModelBundle m;
  m.dim = dim;
  m.diffusion = diff;
  m.interaction = inter;
  m.net_config = net;
  m.seed = seed;
  m.velocity = std::make_shared<MlpVectorField>(dim, net, rng, "velocity");
  m.growth = std::make_shared<MlpScalarField>(dim, net, rng, "growth");
  m.score = std::make_shared<MlpScalarField>(dim, net, rng, "score");
  m.potential = std::make_shared<RbfPotential>(inter.cutoff, net, rng);
  return m;
}

Tensor score_vector(const ModelBundle& m, const Tensor& x, const Tensor& t) {
  return m.score->evaluate(x, t).grad_x;
}

Tensor density(const ModelBundle& m, const Tensor& x, const Tensor& t, bool* clamped,
               double max_log_density) {
  const double scale = 2.0 / (m.diffusion.sigma * m.diffusion.sigma);
  return ad::exp_clamped(scale * m.score->value(x, t), max_log_density, clamped);
}

Tensor recover_drift(const ModelBundle& m, const Tensor& x, const Tensor& t) {
  return m.velocity->value(x, t) + score_vector(m, x, t);
}

}  // namespace umfsb
