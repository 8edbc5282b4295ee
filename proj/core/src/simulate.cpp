#include "umfsb/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "umfsb/error.hpp"

namespace umfsb {

ParticleState ParticleState::at(const Matrix& positions, double time) {
  return {Tensor::constant(positions), Tensor::zeros(positions.rows(), 1), time};
}

ParticleState ParticleState::detached() const {
  return {positions.detach(), log_weights.detach(), time};
}

std::vector<std::vector<Index>> random_partition(Index n, int p, std::mt19937_64& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> groups;
  for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(p)) {
    const std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(p));
    groups.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                        perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return groups;
}

Tensor interaction_drift_groups(const ModelBundle& m, const Tensor& x, const Tensor& log_w,
                                const std::vector<std::vector<Index>>& groups) {
  const Index n = x.rows();
  PairList pairs;
  std::vector<double> scale;
  for (const auto& g : groups) {
    if (g.size() < 2) continue;
    PairList local = unique_pairs_within(x.value(), g, m.interaction.cutoff);
    const double c = 1.0 / static_cast<double>(g.size() - 1);
    pairs.first.insert(pairs.first.end(), local.first.begin(), local.first.end());
    pairs.second.insert(pairs.second.end(), local.second.begin(), local.second.end());
    scale.insert(scale.end(), local.size(), c);
  }
  if (pairs.size() == 0) return Tensor::zeros(n, x.cols());
  // Each unordered pair is evaluated once: grad_{x_i} Phi(x_i - x_j) acts on i
  // and its negative on j.
  Tensor force = pair_terms(*m.potential, x, x, pairs, m.interaction, 1).force;
  Tensor c = Tensor::constant(Eigen::Map<const Matrix>(scale.data(), static_cast<Index>(scale.size()), 1));
  Tensor on_first = force * c;
  Tensor on_second = force * c;
  if (m.interaction.use_weights) {
    on_first = on_first * ad::exp(ad::gather_rows(log_w, pairs.second));
    on_second = on_second * ad::exp(ad::gather_rows(log_w, pairs.first));
  }
  return ad::scatter_add_rows(on_second, pairs.second, n) - ad::scatter_add_rows(on_first, pairs.first, n);
}

Tensor interaction_drift_full(const ModelBundle& m, const ParticleState& s) {
  const Index n = s.size();
  if (n < 2) return Tensor::zeros(n, s.dim());
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  return interaction_drift_groups(m, s.positions, s.log_weights, {all});
}

Matrix interaction_drift_values(const ModelBundle& m, const ParticleState& s, std::size_t chunk) {
  const Index n = s.size();
  Matrix out = Matrix::Zero(n, s.dim());
  if (n < 2 || !m.interaction_enabled || !m.potential) return out;
  const Matrix& x = s.positions.value();
  const Matrix& lw = s.log_weights.value();
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  const PairList pairs = unique_pairs_within(x, all, m.interaction.cutoff);
  const Tensor xc = Tensor::constant(x);
  const double c = 1.0 / static_cast<double>(n - 1);
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::size_t stop = std::min(pairs.size(), start + chunk);
    PairList part;
    part.first.assign(pairs.first.begin() + static_cast<std::ptrdiff_t>(start),
                      pairs.first.begin() + static_cast<std::ptrdiff_t>(stop));
    part.second.assign(pairs.second.begin() + static_cast<std::ptrdiff_t>(start),
                       pairs.second.begin() + static_cast<std::ptrdiff_t>(stop));
    const Matrix f = pair_terms(*m.potential, xc, xc, part, m.interaction, 1).force.value();
    for (std::size_t q = 0; q < part.size(); ++q) {
      const Index i = part.first[q], j = part.second[q];
      const double wi = m.interaction.use_weights ? std::exp(lw(i, 0)) : 1.0;
      const double wj = m.interaction.use_weights ? std::exp(lw(j, 0)) : 1.0;
      out.row(i) -= c * wj * f.row(static_cast<Index>(q));
      out.row(j) += c * wi * f.row(static_cast<Index>(q));
    }
  }
  return out;
}

Tensor interaction_drift_rbm(const ModelBundle& m, const ParticleState& s, int p,
                             std::mt19937_64& rng) {
  if (p < 2) throw InvalidArgument("rbm batch size must be >= 2, got " + std::to_string(p));
  if (p > s.size()) {
    throw InvalidArgument("rbm batch size " + std::to_string(p) + " exceeds particle count " +
                          std::to_string(s.size()));
  }
  return interaction_drift_groups(m, s.positions, s.log_weights, random_partition(s.size(), p, rng));
}

ParticleRates particle_rates(const ModelBundle& m, const Tensor& x, const Tensor& log_w, double t,
                             const std::vector<std::vector<Index>>& groups) {
  Tensor tc = time_column(x.rows(), t);
  ParticleRates r;
  r.dx = m.velocity->value(x, tc);
  if (m.interaction_enabled && m.potential) r.dx = r.dx + interaction_drift_groups(m, x, log_w, groups);
  r.dlogw = m.growth_enabled && m.growth ? m.growth->value(x, tc) : Tensor::zeros(x.rows(), 1);
  return r;
}

void check_finite(const ParticleState& s, const std::string& where) {
  const Matrix& x = s.positions.value();
  const Matrix& lw = s.log_weights.value();
  for (Index i = 0; i < x.rows(); ++i) {
    if (!x.row(i).allFinite() || !std::isfinite(lw(i, 0))) {
      throw NumericError(where + ": particle " + std::to_string(i) + " became non-finite at t=" +
                         std::to_string(s.time));
    }
  }
}

namespace {

std::vector<std::vector<Index>> step_groups(const ParticleState& s, const ModelBundle& m,
                                            const IntegratorConfig& cfg, std::mt19937_64& rng) {
  const Index n = s.size();
  if (!m.interaction_enabled || n < 2) return {};
  if (cfg.mode == IntegratorMode::kFull || cfg.rbm_batch >= n) {
    std::vector<Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index{0});
    return {all};
  }
  if (cfg.rbm_batch < 2) throw InvalidArgument("rbm batch size must be >= 2");
  return random_partition(n, cfg.rbm_batch, rng);
}

}  // namespace

ParticleState step(const ParticleState& s, const ModelBundle& m, const IntegratorConfig& cfg,
                   std::mt19937_64& rng, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("integration step must be positive");
  const auto groups = step_groups(s, m, cfg, rng);
  const Tensor& x = s.positions;
  const Tensor& lw = s.log_weights;
  ParticleState out;
  out.time = s.time + tau;
  if (cfg.scheme == IntegratorScheme::kEuler) {
    ParticleRates k1 = particle_rates(m, x, lw, s.time, groups);
    out.positions = x + tau * k1.dx;
    out.log_weights = lw + tau * k1.dlogw;
  } else {
    const double h2 = 0.5 * tau;
    ParticleRates k1 = particle_rates(m, x, lw, s.time, groups);
    ParticleRates k2 = particle_rates(m, x + h2 * k1.dx, lw + h2 * k1.dlogw, s.time + h2, groups);
    ParticleRates k3 = particle_rates(m, x + h2 * k2.dx, lw + h2 * k2.dlogw, s.time + h2, groups);
    ParticleRates k4 = particle_rates(m, x + tau * k3.dx, lw + tau * k3.dlogw, s.time + tau, groups);
    const double w = tau / 6.0;
    out.positions = x + w * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
    out.log_weights = lw + w * (k1.dlogw + 2.0 * k2.dlogw + 2.0 * k3.dlogw + k4.dlogw);
  }
  check_finite(out, "step");
  return out;
}

namespace {

int step_count(double t0, double t_end, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("integration step must be positive");
  return std::max(1, static_cast<int>(std::ceil((t_end - t0) / tau - 1e-9)));
}

}  // namespace

std::vector<ParticleState> integrate(const ParticleState& s, const ModelBundle& m,
                                     const IntegratorConfig& cfg, double t_end,
                                     std::mt19937_64& rng, bool record) {
  std::vector<ParticleState> traj{record ? s : s.detached()};
  if (t_end <= s.time) return traj;
  const int n = step_count(s.time, t_end, cfg.tau);
  const double h = (t_end - s.time) / n;
  for (int k = 0; k < n; ++k) {
    ParticleState next = step(traj.back(), m, cfg, rng, h);
    if (k + 1 == n) next.time = t_end;
    traj.push_back(record ? std::move(next) : next.detached());
  }
  return traj;
}

std::vector<ParticleState> sample_sde(const ParticleState& s, const ModelBundle& m,
                                      const IntegratorConfig& cfg, double t_end, double sigma,
                                      std::mt19937_64& rng) {
  std::vector<ParticleState> traj{s.detached()};
  if (t_end <= s.time) return traj;
  const int n = step_count(s.time, t_end, cfg.tau);
  const double h = (t_end - s.time) / n;
  const double noise = sigma * std::sqrt(h);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < n; ++k) {
    const ParticleState& cur = traj.back();
    const auto groups = step_groups(cur, m, cfg, rng);
    ParticleRates r = particle_rates(m, cur.positions, cur.log_weights, cur.time, groups);
    Matrix drift = r.dx.value() + score_vector(m, cur.positions, time_column(cur.size(), cur.time)).value();
    Matrix xi(cur.size(), cur.dim());
    for (Index i = 0; i < xi.size(); ++i) xi.data()[i] = gauss(rng);
    ParticleState next;
    next.positions = Tensor::constant(cur.positions.value() + h * drift + noise * xi);
    next.log_weights = Tensor::constant(cur.log_weights.value() + h * r.dlogw.value());
    next.time = k + 1 == n ? t_end : cur.time + h;
    check_finite(next, "sample_sde");
    traj.push_back(std::move(next));
  }
  return traj;
}

WeightedCloud empirical_measure(const ParticleState& s) {
  WeightedCloud c;
  const double n = static_cast<double>(s.size());
  c.points = s.positions.value();
  c.weights = s.log_weights.value().col(0).array().exp() / n;
  c.total_mass = c.weights.sum();
  c.normalized = c.total_mass > 0.0 ? Eigen::VectorXd(c.weights / c.total_mass)
                                    : Eigen::VectorXd::Zero(c.weights.size());
  return c;
}

void write_trajectory_csv(std::ostream& out, const std::vector<ParticleState>& traj) {
  if (traj.empty()) return;
  const Index d = traj.front().dim();
  out << "time,particle_id,weight";
  for (Index k = 0; k < d; ++k) out << ",x_" << (k + 1);
  out << '\n';
  out.precision(17);
  for (const auto& s : traj) {
    WeightedCloud c = empirical_measure(s);
    for (Index i = 0; i < s.size(); ++i) {
      out << s.time << ',' << i << ',' << c.weights(i);
      for (Index k = 0; k < d; ++k) out << ',' << c.points(i, k);
      out << '\n';
    }
  }
}

}  // namespace umfsb
