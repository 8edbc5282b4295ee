#include "umfsb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "umfsb/error.hpp"

namespace umfsb {

void validate(const LossWeights& w) {
  const std::pair<const char*, double> fields[] = {
      {"lambda_m", w.lambda_m}, {"lambda_d", w.lambda_d}, {"lambda_r", w.lambda_r},
      {"lambda_f", w.lambda_f}, {"lambda_w", w.lambda_w}, {"alpha", w.alpha}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0, got " +
                        std::to_string(v));
    }
  }
}

// ---- energy -----------------------------------------------------------------

namespace {

void check_trajectory(const std::vector<ParticleState>& traj, const ModelBundle& m) {
  for (const auto& s : traj) {
    if (s.dim() != m.dim) {
      throw InvalidArgument("trajectory dimension " + std::to_string(s.dim()) +
                            " does not match model dimension " + std::to_string(m.dim));
    }
    if (s.log_weights.rows() != s.size()) {
      throw InvalidArgument("trajectory log-weights do not match particle count");
    }
  }
  for (std::size_t k = 1; k < traj.size(); ++k) {
    if (traj[k].size() != traj[0].size()) {
      throw InvalidArgument("trajectory particle count changes along the path");
    }
    if (!(traj[k].time > traj[k - 1].time)) {
      throw InvalidArgument("trajectory times must increase");
    }
  }
}

enum class CrossForm { kPotential, kGradient, kInner };

Tensor energy_quadrature(const std::vector<ParticleState>& traj, const ModelBundle& m,
                         double alpha, CrossForm form) {
  check_trajectory(traj, m);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t k = 0; k + 1 < traj.size(); ++k) {
    const ParticleState& s = traj[k];
    const double h = traj[k + 1].time - s.time;
    const Tensor tc = time_column(s.size(), s.time);
    const Tensor v = m.velocity->value(s.positions, tc);
    Tensor integrand = 0.5 * ad::row_sum(ad::square(v));
    if (m.score) {
      const ScalarEval se = m.score->evaluate(s.positions, tc);
      integrand = integrand + 0.5 * ad::row_sum(ad::square(se.grad_x));
      switch (form) {
        case CrossForm::kPotential:
          integrand = integrand + ad::row_norm(v) * ad::abs(se.value);
          break;
        case CrossForm::kGradient:
          integrand = integrand + ad::row_norm(v) * ad::row_norm(se.grad_x);
          break;
        case CrossForm::kInner:
          integrand = integrand + ad::row_sum(v * se.grad_x);
          break;
      }
    }
    if (m.growth_enabled && m.growth && alpha > 0.0) {
      integrand = integrand + alpha * ad::square(m.growth->value(s.positions, tc));
    }
    total = total + h * ad::mean(ad::exp(s.log_weights) * integrand);
  }
  return total;
}

}  // namespace

Tensor energy_loss(const std::vector<ParticleState>& traj, const ModelBundle& m, double alpha,
                   EnergyCrossTerm cross) {
  return energy_quadrature(
      traj, m, alpha,
      cross == EnergyCrossTerm::kPotential ? CrossForm::kPotential : CrossForm::kGradient);
}

Tensor energy_inner_product_form(const std::vector<ParticleState>& traj, const ModelBundle& m,
                                 double alpha) {
  return energy_quadrature(traj, m, alpha, CrossForm::kInner);
}

// ---- reconstruction -----------------------------------------------------------

Tensor particle_masses(const ParticleState& s) {
  return ad::exp(s.log_weights) / static_cast<double>(s.size());
}

Tensor local_mass_loss(const Tensor& masses, const Matrix& positions, const Matrix& data,
                       double n_k, double n_0) {
  const Index n = positions.rows();
  if (data.rows() == 0) throw InvalidArgument("local mass loss: empty data snapshot");
  if (n == 0) throw InvalidArgument("local mass loss: no predicted particles");
  if (masses.rows() != n || masses.cols() != 1) {
    throw ShapeError("local mass loss: masses " + ad::shape_string(masses) +
                     " do not match " + std::to_string(n) + " particles");
  }
  if (data.cols() != positions.cols()) {
    throw ShapeError("local mass loss: data dimension " + std::to_string(data.cols()) +
                     " vs particle dimension " + std::to_string(positions.cols()));
  }
  if (!(n_0 > 0.0)) throw InvalidArgument("local mass loss: n_0 must be positive");
  Matrix counts = Matrix::Zero(n, 1);
  for (Index a = 0; a < data.rows(); ++a) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      const double d = (positions.row(i) - data.row(a)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    counts(best, 0) += 1.0;
  }
  const Matrix target = counts * (n_k / n_0 / static_cast<double>(data.rows()));
  return ad::sum(ad::square(masses - Tensor::constant(target)));
}

Tensor global_mass_loss(const Tensor& masses, double n_k, double n_0) {
  if (!(n_0 > 0.0)) throw InvalidArgument("global mass loss: n_0 must be positive");
  return ad::square(ad::sum(masses) - n_k / n_0);
}

Tensor ot_loss(const Tensor& positions, const Tensor& masses, const Matrix& data,
               const ot::SinkhornConfig& cfg, const double* data_self) {
  if (positions.rows() == 0 || data.rows() == 0) throw InvalidArgument("ot loss: empty cloud");
  const Tensor a = masses / ad::sum(masses);
  const ot::Vector b = ot::Vector::Constant(data.rows(), 1.0 / static_cast<double>(data.rows()));
  return ot::sinkhorn_divergence(positions, a, data, b, cfg, data_self);
}

double ot_self_term(const Matrix& data, const ot::SinkhornConfig& cfg) {
  const ot::Vector b = ot::Vector::Constant(data.rows(), 1.0 / static_cast<double>(data.rows()));
  return ot::sinkhorn_symmetric(data, b, cfg).value;
}

// ---- Gaussian mixture ---------------------------------------------------------

namespace {

// log N(x_i; mean_k, diag(var_k)) for every point and component: n x K.
Matrix component_log_densities(const Matrix& x, const Eigen::VectorXd& weights, const Matrix& means,
                               const Matrix& vars) {
  const Index n = x.rows(), k = means.rows(), d = x.cols();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Matrix out(n, k);
  for (Index c = 0; c < k; ++c) {
    double log_det = 0.0;
    for (Index j = 0; j < d; ++j) log_det += std::log(vars(c, j));
    const double base = std::log(weights(c)) - 0.5 * (static_cast<double>(d) * log2pi + log_det);
    for (Index i = 0; i < n; ++i) {
      double q = 0.0;
      for (Index j = 0; j < d; ++j) {
        const double r = x(i, j) - means(c, j);
        q += r * r / vars(c, j);
      }
      out(i, c) = base - 0.5 * q;
    }
  }
  return out;
}

double log_sum_exp(const Matrix& m, Index row) {
  const double mx = m.row(row).maxCoeff();
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Index c = 0; c < m.cols(); ++c) s += std::exp(m(row, c) - mx);
  return mx + std::log(s);
}

}  // namespace

Eigen::VectorXd InitialDensityModel::log_pdf(const Matrix& x) const {
  if (x.cols() != means.cols()) {
    throw ShapeError("initial density: points have dimension " + std::to_string(x.cols()) +
                     ", model has " + std::to_string(means.cols()));
  }
  const Matrix lp = component_log_densities(x, weights, means, variances);
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out(i) = log_sum_exp(lp, i);
  return out;
}

Eigen::VectorXd InitialDensityModel::pdf(const Matrix& x) const {
  return log_pdf(x).array().exp();
}

double InitialDensityModel::mean_log_likelihood(const Matrix& x) const {
  return log_pdf(x).mean();
}

InitialDensityModel fit_gmm(const Matrix& data, int components, std::mt19937_64& rng,
                            const GmmOptions& opts) {
  const Index n = data.rows(), d = data.cols();
  if (components < 1) throw InvalidArgument("gmm: need at least one component");
  if (n < components) {
    throw InvalidArgument("gmm: " + std::to_string(n) + " points for " +
                          std::to_string(components) + " components");
  }
  const Index k = components;
  const Eigen::RowVectorXd mu = data.colwise().mean();
  Eigen::RowVectorXd global_var = (data.rowwise() - mu).array().square().colwise().mean();
  global_var = global_var.cwiseMax(opts.variance_floor);

  InitialDensityModel g;
  g.weights = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  g.means.resize(k, d);
  g.variances = global_var.replicate(k, 1);

  // k-means++ seeding of the means.
  std::uniform_int_distribution<Index> pick(0, n - 1);
  g.means.row(0) = data.row(pick(rng));
  Eigen::VectorXd dist2 = (data.rowwise() - g.means.row(0)).rowwise().squaredNorm();
  for (Index c = 1; c < k; ++c) {
    Index next;
    if (dist2.sum() > 0.0) {
      std::discrete_distribution<Index> by_distance(dist2.data(), dist2.data() + n);
      next = by_distance(rng);
    } else {
      next = pick(rng);
    }
    g.means.row(c) = data.row(next);
    dist2 = dist2.cwiseMin((data.rowwise() - g.means.row(c)).rowwise().squaredNorm());
  }

  double prev = -std::numeric_limits<double>::infinity();
  Matrix resp(n, k);
  for (int it = 0; it < opts.max_iter; ++it) {
    // E step.
    const Matrix lp = component_log_densities(data, g.weights, g.means, g.variances);
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double z = log_sum_exp(lp, i);
      ll += z;
      for (Index c = 0; c < k; ++c) resp(i, c) = std::exp(lp(i, c) - z);
    }
    ll /= static_cast<double>(n);
    g.iterations = it + 1;
    if (!std::isfinite(ll)) throw NumericError("gmm: log-likelihood became non-finite");
    if (std::abs(ll - prev) < opts.tolerance) break;
    prev = ll;
    // M step.
    for (Index c = 0; c < k; ++c) {
      const double nk = resp.col(c).sum();
      if (nk < 1e-10) {
        g.means.row(c) = data.row(pick(rng));
        g.variances.row(c) = global_var;
        g.weights(c) = 1.0 / static_cast<double>(n);
        ++g.reseeds;
        continue;
      }
      Eigen::RowVectorXd m = (resp.col(c).transpose() * data) / nk;
      Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(d);
      for (Index i = 0; i < n; ++i) var += resp(i, c) * (data.row(i) - m).array().square().matrix();
      g.means.row(c) = m;
      g.variances.row(c) = (var / nk).cwiseMax(opts.variance_floor);
      g.weights(c) = nk / static_cast<double>(n);
    }
    g.weights /= g.weights.sum();
  }
  return g;
}

// ---- Fokker-Planck residual -----------------------------------------------------

Tensor fp_residual(const ModelBundle& m, const CollocationBlock& block, bool* clamped,
                   double max_log_density) {
  if (!m.score || !m.velocity) throw InvalidArgument("fp residual needs velocity and score fields");
  const Index n = block.points.rows();
  if (block.points.cols() != m.dim) {
    throw ShapeError("fp residual: collocation dimension " + std::to_string(block.points.cols()) +
                     " vs model dimension " + std::to_string(m.dim));
  }
  const double k2 = 2.0 / (m.diffusion.sigma * m.diffusion.sigma);
  const Tensor x = Tensor::constant(block.points);
  const Tensor tc = time_column(n, block.time);
  const ScalarEval se = m.score->evaluate(x, tc);
  const VectorEval ve = m.velocity->evaluate(x, tc);
  Tensor vt = ve.value;
  Tensor div = ve.divergence;

  const Index ns = block.sources.rows();
  if (m.interaction_enabled && m.potential && ns >= 2) {
    const PairList pairs = cross_pairs_within(block.points, block.sources, m.interaction.cutoff);
    if (pairs.size() > 0) {
      const PairTerms terms = pair_terms(*m.potential, x, Tensor::constant(block.sources), pairs,
                                         m.interaction, 2);
      Matrix coef(static_cast<Index>(pairs.size()), 1);
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const double w = m.interaction.use_weights
                             ? std::exp(block.source_log_weights(pairs.second[p]))
                             : 1.0;
        coef(static_cast<Index>(p), 0) = w / static_cast<double>(ns - 1);
      }
      const Tensor c = Tensor::constant(coef);
      vt = vt - ad::scatter_add_rows(terms.force * c, pairs.first, n);
      div = div - ad::scatter_add_rows(terms.laplacian * c, pairs.first, n);
    }
  }
  Tensor g = m.growth_enabled && m.growth ? m.growth->value(x, tc) : Tensor::zeros(n, 1);
  const Tensor bracket = k2 * (se.grad_t + ad::row_sum(se.grad_x * vt)) + div - g;
  const Tensor rho = ad::exp_clamped(k2 * se.value, max_log_density, clamped);
  return rho * bracket;
}

FpLossResult fp_loss(const ModelBundle& m, const std::vector<CollocationBlock>& blocks,
                     const Matrix& initial_points, const InitialDensityModel& p0,
                     double lambda_w, const FpOptions& opts) {
  FpLossResult r;
  std::vector<Tensor> parts;
  Index count = 0;
  for (const auto& b : blocks) {
    if (b.points.rows() == 0) continue;
    bool cl = false;
    parts.push_back(ad::sum(ad::abs(fp_residual(m, b, &cl, opts.max_log_density))));
    count += b.points.rows();
    r.density_clamped = r.density_clamped || cl;
  }
  r.residual = Tensor::scalar(0.0);
  for (const auto& p : parts) r.residual = r.residual + p;
  if (count > 0) r.residual = r.residual / static_cast<double>(count);

  r.initial = Tensor::scalar(0.0);
  if (opts.include_initial && initial_points.rows() > 0) {
    const Tensor x = Tensor::constant(initial_points);
    bool cl = false;
    const Tensor rho = density(m, x, time_column(x.rows(), 0.0), &cl, opts.max_log_density);
    r.density_clamped = r.density_clamped || cl;
    const Matrix target = p0.pdf(initial_points);
    r.initial = ad::mean(ad::abs(rho - Tensor::constant(target)));
  }
  r.loss = r.residual + lambda_w * r.initial;
  return r;
}

std::vector<CollocationBlock> sample_collocation(const std::vector<ParticleState>& traj, int count,
                                                 double jitter, std::mt19937_64& rng) {
  std::vector<CollocationBlock> blocks;
  if (traj.empty() || count <= 0) return blocks;
  std::vector<std::vector<Index>> chosen(traj.size());
  std::uniform_int_distribution<std::size_t> pick_state(0, traj.size() - 1);
  for (int c = 0; c < count; ++c) {
    const std::size_t k = pick_state(rng);
    std::uniform_int_distribution<Index> pick_particle(0, traj[k].size() - 1);
    chosen[k].push_back(pick_particle(rng));
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    if (chosen[k].empty()) continue;
    const Matrix& pos = traj[k].positions.value();
    CollocationBlock b;
    b.time = traj[k].time;
    b.points.resize(static_cast<Index>(chosen[k].size()), pos.cols());
    for (std::size_t r = 0; r < chosen[k].size(); ++r) {
      for (Index j = 0; j < pos.cols(); ++j) {
        b.points(static_cast<Index>(r), j) = pos(chosen[k][r], j) + jitter * gauss(rng);
      }
    }
    b.sources = pos;
    b.source_log_weights = traj[k].log_weights.value().col(0);
    blocks.push_back(std::move(b));
  }
  return blocks;
}

// ---- score matching ---------------------------------------------------------------

double score_weight(double u, double sigma, double dt) {
  return 2.0 * std::sqrt(dt * u * (1.0 - u)) / sigma;
}

Tensor score_cfm_loss(const ModelBundle& m, const Matrix& x0, double t0, const Matrix& x1,
                      double t1, double sigma, std::mt19937_64& rng,
                      const ScoreCfmOptions& opts) {
  if (!m.score) throw InvalidArgument("score matching needs a score field");
  if (x0.rows() == 0 || x1.rows() == 0) throw InvalidArgument("score matching: empty snapshot");
  if (x0.cols() != m.dim || x1.cols() != m.dim) {
    throw ShapeError("score matching: snapshot dimension does not match model dimension " +
                     std::to_string(m.dim));
  }
  if (!(t1 > t0)) throw InvalidArgument("score matching: t1 must exceed t0");
  if (!(sigma > 0.0)) throw InvalidArgument("score matching: sigma must be positive");
  const int count = opts.pairs;
  const auto pairs = std::max(x0.rows(), x1.rows()) <= opts.exact_plan_max
                         ? ot::sample_exact_plan(x0, x1, count, rng)
                         : ot::sample_entropic_plan(x0, x1, count, opts.entropic_blur, rng);
  const double dt = t1 - t0;
  const Index d = x0.cols();
  Matrix x(count, d), eps(count, d), t(count, 1), lam(count, 1);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int r = 0; r < count; ++r) {
    double u = uni(rng);
    while (u <= 0.0 || u >= 1.0) u = uni(rng);
    const double sd = sigma * std::sqrt(dt * u * (1.0 - u));
    for (Index j = 0; j < d; ++j) {
      eps(r, j) = gauss(rng);
      x(r, j) = (1.0 - u) * x0(pairs[r].first, j) + u * x1(pairs[r].second, j) + sd * eps(r, j);
    }
    t(r, 0) = t0 + u * dt;
    lam(r, 0) = score_weight(u, sigma, dt);
  }
  const ScalarEval se = m.score->evaluate(Tensor::constant(x), Tensor::constant(t));
  const Tensor res = se.grad_x * Tensor::constant(lam) + Tensor::constant(eps);
  return ad::mean(ad::row_sum(ad::square(res)));
}

}  // namespace umfsb
