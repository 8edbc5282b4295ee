#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "support/oracles.hpp"
#include "umfsb/error.hpp"
#include "umfsb/simulate.hpp"

using namespace umfsb;
using umfsb::testing::random_matrix;
using umfsb::testing::relative_error;

namespace {

// Closed-form bundle: affine velocity, constant growth, quadratic potential.
ModelBundle oracle_bundle(int dim, double cutoff = 100.0, double growth = 0.0) {
  ModelBundle m;
  m.dim = dim;
  m.interaction.cutoff = cutoff;
  m.velocity = std::make_shared<AffineVectorField>(AffineVectorField::zero(dim));
  m.growth = std::make_shared<ConstantScalarField>(growth);
  m.score = std::make_shared<ConstantScalarField>(0.0);
  m.potential = std::make_shared<QuadraticPotential>();
  return m;
}

ParticleState weighted_state(const Matrix& x, const Matrix& log_w) {
  return {Tensor::constant(x), Tensor::constant(log_w), 0.0};
}

// Brute force: row i = -1/(N-1) sum_{j != i} k w_j grad Phi(x_i - x_j).
Matrix brute_force_drift(const RadialPotential& phi, const Matrix& x, const Matrix& log_w,
                         const InteractionConfig& cfg) {
  const Index n = x.rows();
  Matrix out = Matrix::Zero(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      out.row(i) -= std::exp(log_w(j, 0)) * pair_force(phi, x.row(i), x.row(j), cfg) / double(n - 1);
    }
  }
  return out;
}

// Energy distance between two samples.
double energy_statistic(const Matrix& d, const std::vector<int>& label, int n) {
  double xy = 0, xx = 0, yy = 0;
  for (int i = 0; i < 2 * n; ++i) {
    for (int j = 0; j < 2 * n; ++j) {
      if (label[i] != label[j]) xy += d(i, j);
      else if (label[i] == 0) xx += d(i, j);
      else yy += d(i, j);
    }
  }
  const double nn = double(n) * n;
  return 2 * xy / (2 * nn) - xx / nn - yy / nn;
}

}  // namespace

TEST_CASE("two particles under a quadratic potential attract with force 2(x_j - x_i)") {
  ModelBundle m = oracle_bundle(2);
  Matrix x(2, 2);
  x << 0.0, 0.0, 1.0, 0.5;
  Matrix d = interaction_drift_full(m, ParticleState::at(x, 0.0)).value();
  CHECK(relative_error(d.row(0), 2.0 * (x.row(1) - x.row(0))) <= 1e-14);
  CHECK(relative_error(d.row(1), 2.0 * (x.row(0) - x.row(1))) <= 1e-14);
}

TEST_CASE("all pairs beyond the cutoff give zero drift; single particle gives zeros") {
  ModelBundle m = oracle_bundle(2, 0.5);
  Matrix x(3, 2);
  x << 0, 0, 1, 0, 0, 1;
  CHECK(interaction_drift_full(m, ParticleState::at(x, 0.0)).value().isZero(0.0));
  Tensor one = interaction_drift_full(m, ParticleState::at(Matrix::Zero(1, 2), 0.0));
  CHECK(one.rows() == 1);
  CHECK(one.value().isZero(0.0));
}

TEST_CASE("full drift matches the hand-summed pairwise forces with weights") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    ModelBundle m = oracle_bundle(3, 1.5);
    m.potential = std::make_shared<LennardJonesPotential>(0.3);
    Matrix x = random_matrix(3, 3, rng, -0.5, 0.5);
    Matrix lw = random_matrix(3, 1, rng, -0.5, 0.5);
    Matrix d = interaction_drift_full(m, weighted_state(x, lw)).value();
    CHECK(relative_error(d, brute_force_drift(*m.potential, x, lw, m.interaction)) <= 1e-12);
  }
}

TEST_CASE("use_weights=false drops partner weights") {
  ModelBundle m = oracle_bundle(2);
  m.interaction.use_weights = false;
  Matrix x(2, 2);
  x << 0, 0, 1, 0;
  Matrix lw(2, 1);
  lw << 0.3, 1.7;
  Matrix d = interaction_drift_full(m, weighted_state(x, lw)).value();
  CHECK(relative_error(d.row(0), 2.0 * (x.row(1) - x.row(0))) <= 1e-14);
}

TEST_CASE("rbm with p = N equals the full drift") {
  std::mt19937_64 rng(4);
  ModelBundle m = oracle_bundle(2, 1.0);
  Matrix x = random_matrix(10, 2, rng, -0.5, 0.5);
  ParticleState s = ParticleState::at(x, 0.0);
  Matrix full = interaction_drift_full(m, s).value();
  Matrix rbm = interaction_drift_rbm(m, s, 10, rng).value();
  CHECK((full - rbm).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rbm is unbiased: exhaustive enumeration of the 3 pairings of 4 particles") {
  std::mt19937_64 rng(5);
  ModelBundle m = oracle_bundle(2, 1.0);
  m.potential = std::make_shared<LennardJonesPotential>(0.2);
  Matrix x = random_matrix(4, 2, rng, -0.4, 0.4);
  Matrix lw = random_matrix(4, 1, rng, -0.3, 0.3);
  Tensor xt = Tensor::constant(x), lt = Tensor::constant(lw);
  const std::vector<std::vector<std::vector<Index>>> pairings = {
      {{0, 1}, {2, 3}}, {{0, 2}, {1, 3}}, {{0, 3}, {1, 2}}};
  Matrix mean = Matrix::Zero(4, 2);
  for (const auto& g : pairings) mean += interaction_drift_groups(m, xt, lt, g).value() / 3.0;
  Matrix full = interaction_drift_full(m, weighted_state(x, lw)).value();
  CHECK(relative_error(mean, full) <= 1e-12);

  // random_partition draws the three pairings uniformly.
  std::map<std::pair<Index, Index>, int> freq;
  const int draws = 30000;
  for (int k = 0; k < draws; ++k) {
    auto groups = random_partition(4, 2, rng);
    auto it = std::find_if(groups.begin(), groups.end(), [](const auto& g) {
      return std::find(g.begin(), g.end(), Index{0}) != g.end();
    });
    Index partner = (*it)[0] == 0 ? (*it)[1] : (*it)[0];
    freq[{0, partner}]++;
  }
  REQUIRE(freq.size() == 3);
  for (const auto& [key, count] : freq) {
    // Binomial(30000, 1/3): sd ~ 82.
    CHECK(std::abs(count - draws / 3.0) <= 4 * std::sqrt(draws * (1.0 / 3) * (2.0 / 3)));
  }
}

TEST_CASE("rbm is unbiased: Monte-Carlo mean over 10^4 partitions within 3 standard errors") {
  std::mt19937_64 rng(6);
  ModelBundle m = oracle_bundle(2, 0.8);
  Matrix x = random_matrix(16, 2, rng, -0.5, 0.5);
  ParticleState s = ParticleState::at(x, 0.0);
  Matrix full = interaction_drift_full(m, s).value();
  const int draws = 10000;
  Matrix sum = Matrix::Zero(16, 2), sq = Matrix::Zero(16, 2);
  for (int k = 0; k < draws; ++k) {
    Matrix d = interaction_drift_rbm(m, s, 4, rng).value();
    sum += d;
    sq += d.cwiseProduct(d);
  }
  Matrix mean = sum / draws;
  Matrix var = (sq / draws - mean.cwiseProduct(mean)) * (double(draws) / (draws - 1));
  int outside = 0;
  for (Index i = 0; i < mean.size(); ++i) {
    const double se = std::sqrt(var.data()[i] / draws);
    if (std::abs(mean.data()[i] - full.data()[i]) > 3 * se + 1e-12) ++outside;
  }
  // 32 entries at 3 SE: a single excursion is already unlikely (p ~ 0.08).
  CHECK(outside <= 1);
}

TEST_CASE("rbm remainder batches: singleton contributes zero, p > N rejected") {
  std::mt19937_64 rng(7);
  ModelBundle m = oracle_bundle(2, 10.0);
  Matrix x = random_matrix(5, 2, rng);
  Tensor xt = Tensor::constant(x), lw = Tensor::zeros(5, 1);
  Matrix d = interaction_drift_groups(m, xt, lw, {{0, 1}, {2, 3}, {4}}).value();
  CHECK(d.row(4).isZero(0.0));
  CHECK(relative_error(d.row(0), 2.0 * (x.row(1) - x.row(0))) <= 1e-14);
  auto groups = random_partition(5, 2, rng);
  CHECK(groups.size() == 3);
  CHECK(groups.back().size() == 1);
  CHECK_THROWS_AS(interaction_drift_rbm(m, ParticleState::at(x, 0.0), 6, rng), InvalidArgument);
}

TEST_CASE("constant growth: positions fixed and mass e^{ct} (rk4, tau 0.01)") {
  const double c = 0.7;
  ModelBundle m = oracle_bundle(3, 0.5, c);
  m.interaction_enabled = false;
  std::mt19937_64 rng(8);
  Matrix x = random_matrix(6, 3, rng);
  IntegratorConfig cfg{0.01, IntegratorMode::kFull, 16, IntegratorScheme::kRk4, 0};
  auto traj = integrate(ParticleState::at(x, 0.0), m, cfg, 1.0, rng);
  CHECK(traj.size() == 101);
  const ParticleState& end = traj.back();
  CHECK(end.time == 1.0);
  CHECK(end.positions.value() == x);
  CHECK(std::abs(empirical_measure(end).total_mass - std::exp(c)) <= 1e-8);
}

TEST_CASE("euler on v = -x converges at first order") {
  ModelBundle m = oracle_bundle(2);
  m.interaction_enabled = false;
  m.velocity = std::make_shared<AffineVectorField>(-Matrix::Identity(2, 2), Matrix::Zero(1, 2));
  Matrix x0(1, 2);
  x0 << 1.0, -2.0;
  std::mt19937_64 rng(9);
  auto err = [&](double tau) {
    IntegratorConfig cfg{tau, IntegratorMode::kFull, 16, IntegratorScheme::kEuler, 0};
    Matrix xt = integrate(ParticleState::at(x0, 0.0), m, cfg, 1.0, rng).back().positions.value();
    return (xt - x0 * std::exp(-1.0)).norm();
  };
  const double e1 = err(0.01), e2 = err(0.005);
  CHECK(e1 < 5e-3);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("bounded growth keeps the mass ratio within e^{+-Gt}") {
  ModelBundle learned = make_learned_bundle(2, {}, {}, {}, 10);
  ModelBundle m = oracle_bundle(2);
  m.interaction_enabled = false;
  m.growth = learned.growth;
  std::mt19937_64 rng(11);
  Matrix x = random_matrix(20, 2, rng);
  IntegratorConfig cfg{0.05, IntegratorMode::kFull, 16, IntegratorScheme::kRk4, 0};
  auto traj = integrate(ParticleState::at(x, 0.0), m, cfg, 1.0, rng);
  double g_max = 0;
  for (const auto& s : traj) {
    g_max = std::max(g_max, m.growth->value(s.positions, time_column(20, s.time)).value().cwiseAbs().maxCoeff());
  }
  const double ratio = empirical_measure(traj.back()).total_mass;
  CHECK(ratio <= std::exp(g_max) + 1e-12);
  CHECK(ratio >= std::exp(-g_max) - 1e-12);
}

TEST_CASE("full-mode step is permutation equivariant") {
  ModelBundle m = make_learned_bundle(2, {}, {}, {0.8}, 12);
  std::mt19937_64 rng(13);
  Matrix x = random_matrix(8, 2, rng, -0.4, 0.4);
  Matrix lw = random_matrix(8, 1, rng, -0.2, 0.2);
  std::vector<Index> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix xp(8, 2), lp(8, 1);
  for (Index i = 0; i < 8; ++i) {
    xp.row(i) = x.row(perm[i]);
    lp(i, 0) = lw(perm[i], 0);
  }
  IntegratorConfig cfg{0.1, IntegratorMode::kFull, 16, IntegratorScheme::kRk4, 0};
  ParticleState a = step(weighted_state(x, lw), m, cfg, rng);
  ParticleState b = step(weighted_state(xp, lp), m, cfg, rng);
  for (Index i = 0; i < 8; ++i) {
    CHECK((a.positions.value().row(perm[i]) - b.positions.value().row(i)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(a.log_weights.at(perm[i], 0) - b.log_weights.at(i, 0)) <= 1e-12);
  }
}

TEST_CASE("no interaction and no growth reduce to the plain neural ODE") {
  ModelBundle m = make_learned_bundle(3, {}, {}, {}, 14);
  m.interaction_enabled = false;
  m.growth_enabled = false;
  std::mt19937_64 rng(15);
  Matrix x = random_matrix(7, 3, rng);
  IntegratorConfig cfg{0.1, IntegratorMode::kRbm, 4, IntegratorScheme::kEuler, 0};
  ParticleState s = step(ParticleState::at(x, 0.2), m, cfg, rng);
  Matrix expected = x + 0.1 * m.velocity->value(Tensor::constant(x), time_column(7, 0.2)).value();
  CHECK(s.positions.value() == expected);
  CHECK(s.log_weights.value().isZero(0.0));
  CHECK(s.time == doctest::Approx(0.3));
}

TEST_CASE("non-finite step reports the offending particle") {
  ModelBundle m = oracle_bundle(2);
  m.interaction_enabled = false;
  m.velocity = std::make_shared<AffineVectorField>(Matrix::Identity(2, 2) * 1e10, Matrix::Zero(1, 2));
  Matrix x = Matrix::Zero(4, 2);
  x(2, 1) = 1e300;
  std::mt19937_64 rng(16);
  try {
    step(ParticleState::at(x, 0.0), m, IntegratorConfig{}, rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("particle 2") != std::string::npos);
  }
}

TEST_CASE("sample_sde with sigma = 0 is the deterministic step with drift v + grad s") {
  const double sigma = 0.4;
  ModelBundle m = oracle_bundle(2);
  m.interaction_enabled = false;
  m.velocity = std::make_shared<AffineVectorField>((Matrix(2, 2) << 0, 1, -1, 0).finished(), Matrix::Zero(1, 2));
  m.score = std::make_shared<GaussianScoreField>(sigma, Matrix::Zero(1, 2), 1.0, 0.0);
  std::mt19937_64 rng(17);
  Matrix x = random_matrix(5, 2, rng);
  IntegratorConfig cfg{0.1, IntegratorMode::kFull, 16, IntegratorScheme::kEuler, 0};
  auto traj = sample_sde(ParticleState::at(x, 0.0), m, cfg, 0.1, 0.0, rng);
  Matrix drift = m.velocity->value(Tensor::constant(x), time_column(5, 0)).value() - 0.5 * sigma * sigma * x;
  CHECK(relative_error(traj.back().positions.value(), x + 0.1 * drift) <= 1e-14);
}

TEST_CASE("sample_sde preserves the stationary Gaussian (energy-distance test)") {
  // v = 0 and s = (sigma^2/2) log N(0, I) give the OU process
  // dX = -(sigma^2/2) X dt + sigma dW whose invariant law is N(0, I).
  const double sigma = 1.0;
  ModelBundle m = oracle_bundle(2);
  m.interaction_enabled = false;
  m.score = std::make_shared<GaussianScoreField>(sigma, Matrix::Zero(1, 2), 1.0, 0.0);
  std::mt19937_64 rng(18);
  std::normal_distribution<double> gauss;
  const int n_particles = 5000;
  Matrix x0(n_particles, 2);
  for (Index i = 0; i < x0.size(); ++i) x0.data()[i] = gauss(rng);
  IntegratorConfig cfg{0.01, IntegratorMode::kFull, 16, IntegratorScheme::kEuler, 0};
  Matrix xt = sample_sde(ParticleState::at(x0, 0.0), m, cfg, 2.0, sigma, rng).back().positions.value();

  // Permutation energy test on a 600 vs 600 subsample against fresh N(0, I).
  const int n = 600;
  Matrix pooled(2 * n, 2);
  for (int i = 0; i < n; ++i) pooled.row(i) = xt.row(i);
  for (Index i = n; i < 2 * n; ++i) {
    pooled(i, 0) = gauss(rng);
    pooled(i, 1) = gauss(rng);
  }
  Matrix d = umfsb::testing::euclidean_cost(pooled, pooled);
  std::vector<int> label(2 * n);
  for (int i = 0; i < 2 * n; ++i) label[i] = i < n ? 0 : 1;
  const double observed = energy_statistic(d, label, n);
  const int perms = 199;
  int extreme = 0;
  for (int k = 0; k < perms; ++k) {
    std::shuffle(label.begin(), label.end(), rng);
    if (energy_statistic(d, label, n) >= observed) ++extreme;
  }
  const double p_value = (extreme + 1.0) / (perms + 1.0);
  CHECK(p_value > 0.01);
  // Second moments of the full 5000-particle cloud.
  Eigen::RowVectorXd var = xt.array().square().colwise().mean();
  CHECK(var(0) == doctest::Approx(1.0).epsilon(0.08));
  CHECK(var(1) == doctest::Approx(1.0).epsilon(0.08));
}

TEST_CASE("seeded trajectories are bitwise reproducible") {
  ModelBundle m = make_learned_bundle(2, {}, {}, {0.8}, 19);
  Matrix x = [] {
    std::mt19937_64 r(20);
    return random_matrix(32, 2, r, -0.5, 0.5);
  }();
  auto run = [&] {
    std::mt19937_64 rng(21);
    IntegratorConfig cfg{0.1, IntegratorMode::kRbm, 8, IntegratorScheme::kEuler, 0};
    Matrix a = integrate(ParticleState::at(x, 0.0), m, cfg, 1.0, rng, false).back().positions.value();
    Matrix b = sample_sde(ParticleState::at(x, 0.0), m, cfg, 1.0, 0.1, rng).back().positions.value();
    return std::make_pair(a, b);
  };
  auto r1 = run(), r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("empirical measure masses") {
  ParticleState s = ParticleState::at(Matrix::Zero(3, 2), 0.0);
  CHECK(empirical_measure(s).total_mass == doctest::Approx(1.0));
  Matrix lw(2, 1);
  lw << std::log(2.0), -1000.0;
  WeightedCloud c = empirical_measure(weighted_state(Matrix::Zero(2, 1), lw));
  CHECK(c.total_mass == doctest::Approx(1.0));
  CHECK(c.normalized(0) == doctest::Approx(1.0));
  CHECK(c.normalized(1) == doctest::Approx(0.0));
}

TEST_CASE("trajectory export columns") {
  std::vector<ParticleState> traj{ParticleState::at(Matrix::Zero(2, 3), 0.0)};
  std::ostringstream out;
  write_trajectory_csv(out, traj);
  std::istringstream in(out.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "time,particle_id,weight,x_1,x_2,x_3");
  CHECK(row == "0,0,0.5,0,0,0");
}

TEST_CASE("gradients flow from the end state to every net through the rbm integrator") {
  NetConfig small;
  small.hidden_width = small.interaction_hidden_width = 8;
  small.hidden_layers = small.interaction_hidden_layers = 2;
  ModelBundle m = make_learned_bundle(2, small, {}, {0.8}, 22);
  std::mt19937_64 rng(23);
  Matrix x = random_matrix(12, 2, rng, -0.3, 0.3);
  IntegratorConfig cfg{0.25, IntegratorMode::kRbm, 4, IntegratorScheme::kEuler, 0};
  std::vector<Tensor> params = m.velocity_parameters();
  for (auto& p : m.growth_parameters()) params.push_back(p);
  for (auto& p : m.potential_parameters()) params.push_back(p);
  const double err = umfsb::testing::max_gradient_error(params, [&] {
    std::mt19937_64 fixed(24);  // same partitions on every evaluation
    ParticleState end = integrate(ParticleState::at(x, 0.0), m, cfg, 1.0, fixed).back();
    return ad::sum(ad::square(end.positions)) + ad::sum(ad::exp(end.log_weights));
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("chunked value-only interaction drift matches the recorded full drift") {
  std::mt19937_64 rng(31);
  NetConfig net;
  net.hidden_width = 8;
  net.hidden_layers = 2;
  net.interaction_hidden_width = 8;
  net.interaction_hidden_layers = 2;
  net.rbf_kernels = 4;
  InteractionConfig inter;
  inter.cutoff = 1.5;
  ModelBundle m = make_learned_bundle(2, net, {}, inter, 4);
  const Matrix x = random_matrix(25, 2, rng, -1.0, 1.0);
  const Matrix lw = random_matrix(25, 1, rng, -0.5, 0.5);
  const ParticleState s = weighted_state(x, lw);
  const Matrix full = interaction_drift_full(m, s).value();
  for (std::size_t chunk : {std::size_t{1}, std::size_t{7}, std::size_t{100000}}) {
    CHECK(relative_error(interaction_drift_values(m, s, chunk), full) < 1e-12);
  }
  m.interaction_enabled = false;
  CHECK(interaction_drift_values(m, s).isZero());
}
