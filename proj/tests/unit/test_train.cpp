#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "doctest.h"
#include "umfsb/error.hpp"
#include "umfsb/train.hpp"

using namespace umfsb;

namespace {

NetConfig small_nets() {
  NetConfig n;
  n.hidden_width = 24;
  n.hidden_layers = 2;
  n.interaction_hidden_width = 16;
  n.interaction_hidden_layers = 2;
  n.rbf_kernels = 6;
  return n;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.epochs_flow = 2;
  c.epochs_interaction = 2;
  c.epochs_score = 3;
  c.epochs_main = 1;
  c.batch_size = 24;
  c.collocation_points = 16;
  c.cfm.pairs = 32;
  c.cfm_batch = 16;
  c.gmm_components = 2;
  c.integrator.tau = 0.25;
  c.integrator.rbm_batch = 4;
  return c;
}

Matrix gaussian_cloud(Index n, int d, double sd, std::mt19937_64& rng, double shift = 0.0) {
  std::normal_distribution<double> g(0.0, sd);
  Matrix out(n, d);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = g(rng) + shift;
  return out;
}

SnapshotDataset three_snapshots(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SnapshotDataset d;
  d.times = {0.0, 1.0, 2.0};
  d.clouds = {gaussian_cloud(30, 2, 0.2, rng), gaussian_cloud(36, 2, 0.2, rng, 0.3),
              gaussian_cloud(45, 2, 0.2, rng, 0.6)};
  return d;
}

std::vector<Matrix> values(const std::vector<Tensor>& params) {
  std::vector<Matrix> out;
  for (const auto& p : params) out.push_back(p.value());
  return out;
}

bool same(const std::vector<Matrix>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i].value()) return false;
  }
  return true;
}

struct Snapshot {
  std::vector<Matrix> v, g, s, phi;
  explicit Snapshot(const ModelBundle& m)
      : v(values(m.velocity_parameters())),
        g(values(m.growth_parameters())),
        s(values(m.score_parameters())),
        phi(values(m.potential_parameters())) {}
};

TrainState fresh_state(const SnapshotDataset& d, const TrainConfig& c) {
  TrainState st;
  st.model = make_model(d, c, small_nets(), DiffusionConfig{}, InteractionConfig{});
  return st;
}

double mean_log_weight(const ParticleState& s) { return s.log_weights.value().mean(); }

}  // namespace

TEST_CASE("train config json round trip and validation") {
  TrainConfig c = quick_config();
  c.seed = 42;
  c.interaction = false;
  c.main.lambda_f = 7.0;
  c.integrator.mode = IntegratorMode::kFull;
  c.integrator.scheme = IntegratorScheme::kRk4;
  c.energy_cross = EnergyCrossTerm::kGradient;
  const nlohmann::json j = to_json(c);
  const TrainConfig back = train_config_from_json(j);
  CHECK(to_json(back) == j);

  // Missing keys keep defaults.
  CHECK(to_json(train_config_from_json(nlohmann::json::object())) == to_json(TrainConfig{}));

  nlohmann::json bad = j;
  bad["epochs_flw"] = 3;
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  bad = j;
  bad["sinkhorn"]["blurr"] = 0.1;
  CHECK_THROWS_WITH_AS(train_config_from_json(bad), doctest::Contains("train.sinkhorn.blurr"),
                       ConfigError);
  bad = j;
  bad["batch_size"] = "many";
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  bad = j;
  bad["batch_size"] = 1;
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  bad = j;
  bad["epochs_main"] = -1;
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
  bad = j;
  bad["integrator"]["scheme"] = "midpoint";
  CHECK_THROWS_AS(train_config_from_json(bad), ConfigError);
}

TEST_CASE("report csv layout") {
  std::ostringstream out;
  write_report_csv(out, {{"flow", 0, 0.0, 1.5, 0.0, 1.5, 3.0}, {"main", 1, 2.0, 3.0, 4.0, 9.0, 5.0}});
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "stage,epoch,L_energy,L_recons,L_fp,L_total,wall_ms");
  std::getline(in, line);
  CHECK(line == "flow,0,0,1.5,0,1.5,3");
  std::getline(in, line);
  CHECK(line == "main,1,2,3,4,9,5");
}

TEST_CASE("zero-epoch stages leave the model unchanged") {
  const SnapshotDataset d = three_snapshots(1);
  TrainConfig c = quick_config();
  c.epochs_flow = c.epochs_interaction = c.epochs_score = c.epochs_main = 0;
  TrainState st = fresh_state(d, c);
  const Snapshot before(st.model);
  pretrain_flow(d, st, c);
  pretrain_interaction(d, st, c);
  pretrain_score(d, generate_refined(d, st.model, c), st, c);
  train_main(d, st, c);
  CHECK(same(before.v, st.model.velocity_parameters()));
  CHECK(same(before.g, st.model.growth_parameters()));
  CHECK(same(before.s, st.model.score_parameters()));
  CHECK(same(before.phi, st.model.potential_parameters()));
  CHECK(st.report.empty());
  CHECK(st.stage_final_ot.empty());
}

TEST_CASE("each stage touches only its declared parameters") {
  const SnapshotDataset d = three_snapshots(2);
  const TrainConfig c = quick_config();
  TrainState st = fresh_state(d, c);

  Snapshot s0(st.model);
  pretrain_flow(d, st, c);
  CHECK_FALSE(same(s0.v, st.model.velocity_parameters()));
  CHECK_FALSE(same(s0.g, st.model.growth_parameters()));
  CHECK(same(s0.s, st.model.score_parameters()));
  CHECK(same(s0.phi, st.model.potential_parameters()));
  CHECK(st.completed_stage == "flow");

  Snapshot s1(st.model);
  pretrain_interaction(d, st, c);
  CHECK_FALSE(same(s1.v, st.model.velocity_parameters()));
  CHECK(same(s1.g, st.model.growth_parameters()));
  CHECK(same(s1.s, st.model.score_parameters()));
  CHECK_FALSE(same(s1.phi, st.model.potential_parameters()));

  Snapshot s2(st.model);
  const auto gen = generate_refined(d, st.model, c);
  pretrain_score(d, gen, st, c);
  CHECK(same(s2.v, st.model.velocity_parameters()));
  CHECK(same(s2.g, st.model.growth_parameters()));
  CHECK_FALSE(same(s2.s, st.model.score_parameters()));
  CHECK(same(s2.phi, st.model.potential_parameters()));

  Snapshot s3(st.model);
  train_main(d, st, c);
  CHECK_FALSE(same(s3.v, st.model.velocity_parameters()));
  CHECK_FALSE(same(s3.g, st.model.growth_parameters()));
  CHECK_FALSE(same(s3.s, st.model.score_parameters()));
  CHECK_FALSE(same(s3.phi, st.model.potential_parameters()));

  const ReportRow& last = st.report.back();
  CHECK(last.stage == "main");
  CHECK(std::isfinite(last.energy));
  CHECK(std::isfinite(last.recons));
  CHECK(std::isfinite(last.fp));
  CHECK(last.total == doctest::Approx(last.energy + c.main.lambda_r * last.recons +
                                      c.main.lambda_f * last.fp)
                          .epsilon(1e-9));
}

TEST_CASE("ablation switches freeze the disabled components") {
  const SnapshotDataset d = three_snapshots(3);
  TrainConfig c = quick_config();
  c.interaction = false;
  c.growth = false;
  TrainState st = fresh_state(d, c);
  const Snapshot before(st.model);
  pretrain_interaction(d, st, c);
  CHECK(same(before.v, st.model.velocity_parameters()));
  CHECK(same(before.phi, st.model.potential_parameters()));
  CHECK(st.report.empty());
  train_all(d, st, c);
  CHECK(same(before.g, st.model.growth_parameters()));
  CHECK(same(before.phi, st.model.potential_parameters()));
  CHECK(st.completed_stage == "complete");

  // Without main training the pipeline stops after score pretraining.
  TrainConfig pre = quick_config();
  pre.main_training = false;
  TrainState st2 = fresh_state(d, pre);
  train_all(d, st2, pre);
  CHECK(std::none_of(st2.report.begin(), st2.report.end(),
                     [](const ReportRow& r) { return r.stage == "main"; }));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const SnapshotDataset d = three_snapshots(4);
  TrainConfig c = quick_config();
  c.seed = 9;
  TrainState a = fresh_state(d, c);
  TrainState b = fresh_state(d, c);
  train_all(d, a, c);
  train_all(d, b, c);
  const Snapshot sa(a.model);
  CHECK(same(sa.v, b.model.velocity_parameters()));
  CHECK(same(sa.g, b.model.growth_parameters()));
  CHECK(same(sa.s, b.model.score_parameters()));
  CHECK(same(sa.phi, b.model.potential_parameters()));
  REQUIRE(a.report.size() == b.report.size());
  for (std::size_t i = 0; i < a.report.size(); ++i) {
    CHECK(a.report[i].stage == b.report[i].stage);
    CHECK(a.report[i].total == b.report[i].total);
    CHECK(a.report[i].fp == b.report[i].fp);
  }
  REQUIRE(a.generated.size() == b.generated.size());
  for (std::size_t k = 0; k < a.generated.size(); ++k) CHECK(a.generated[k] == b.generated[k]);

  // A different seed changes the result.
  c.seed = 10;
  TrainState other = fresh_state(d, c);
  train_all(d, other, c);
  CHECK_FALSE(same(sa.v, other.model.velocity_parameters()));
}

TEST_CASE("generate_refined under the identity flow reproduces A_0") {
  const SnapshotDataset d = three_snapshots(5);
  ModelBundle m;
  m.dim = 2;
  m.velocity = std::make_shared<AffineVectorField>(AffineVectorField::zero(2));
  m.growth = std::make_shared<ConstantScalarField>(0.3);
  m.score = std::make_shared<ConstantScalarField>(0.0);
  m.potential = std::make_shared<QuadraticPotential>();
  m.interaction_enabled = false;
  const auto gen = generate_refined(d, m, quick_config());
  REQUIRE(gen.size() == d.size());
  for (const auto& g : gen) {
    CHECK(g.rows() == d.clouds[0].rows());
    CHECK((g - d.clouds[0]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("non-finite losses abort with the component and the last good model") {
  const SnapshotDataset d = three_snapshots(6);
  TrainConfig c = quick_config();
  TrainState st = fresh_state(d, c);
  // Poison the velocity output so the very first OT evaluation is non-finite.
  auto params = st.model.velocity_parameters();
  params.back().mutable_value().setConstant(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_WITH_AS(pretrain_flow(d, st, c), doctest::Contains("stage flow, epoch 0"), NumericError);
  CHECK(st.completed_stage == "none");
  CHECK(st.report.empty());

  // Dimension mismatch between model and data.
  TrainState wrong;
  SnapshotDataset d3 = d;
  for (auto& cl : d3.clouds) cl.conservativeResize(cl.rows(), 3);
  for (auto& cl : d3.clouds) cl.col(2).setZero();
  wrong.model = make_model(d3, c, small_nets(), DiffusionConfig{}, InteractionConfig{});
  CHECK_THROWS_AS(train_all(d, wrong, c), DataError);
}

TEST_CASE("flow pretraining learns a translation") {
  std::mt19937_64 rng(11);
  SnapshotDataset d;
  d.times = {0.0, 1.0};
  const Matrix a0 = gaussian_cloud(64, 2, 0.15, rng);
  Matrix a1 = a0;
  a1.col(0).array() += 0.8;
  a1.col(1).array() -= 0.4;
  d.clouds = {a0, a1};
  TrainConfig c = quick_config();
  c.growth = false;
  c.interaction = false;
  c.batch_size = 64;
  c.epochs_flow = 150;
  c.learning_rate = 5e-3;
  TrainState st = fresh_state(d, c);
  const double before = interval_ot(d, st.model, c, 0).front();
  pretrain_flow(d, st, c);
  const double after = interval_ot(d, st.model, c, 0).front();
  MESSAGE("translation OT before " << before << ", after " << after);
  CHECK(after <= 0.05);
  CHECK(after < before);
  REQUIRE(st.stage_final_ot.size() == 1);
}

TEST_CASE("flow pretraining recovers a mass doubling") {
  std::mt19937_64 rng(12);
  SnapshotDataset d;
  d.times = {0.0, 1.0};
  const Matrix a0 = gaussian_cloud(60, 2, 0.2, rng);
  d.clouds = {a0, gaussian_cloud(120, 2, 0.2, rng)};
  TrainConfig c = quick_config();
  c.interaction = false;
  c.batch_size = 60;
  c.epochs_flow = 150;
  c.learning_rate = 5e-3;
  TrainState st = fresh_state(d, c);
  pretrain_flow(d, st, c);
  std::mt19937_64 sim(0);
  const auto traj = integrate(ParticleState::at(a0, 0.0), st.model, c.integrator, 1.0, sim, false);
  const double integral = mean_log_weight(traj.back());  // mean of the integrated g
  MESSAGE("mean integrated growth " << integral << " vs ln 2 = " << std::log(2.0));
  CHECK(std::abs(integral - std::log(2.0)) < 0.2 * std::log(2.0));
}

TEST_CASE("score pretraining recovers a stationary Gaussian score") {
  // Stationary N(0, I) snapshots: s = (sigma^2 / 2) log rho, so grad s is
  // parallel to -x. sigma = 1 keeps the target well above the bridge noise.
  std::mt19937_64 rng(13);
  SnapshotDataset d;
  d.times = {0.0, 1.0, 2.0};
  for (int k = 0; k < 3; ++k) d.clouds.push_back(gaussian_cloud(200, 2, 1.0, rng));
  TrainConfig c = quick_config();
  c.epochs_score = 300;
  c.learning_rate = 3e-3;
  c.cfm.pairs = 128;
  c.cfm_batch = 64;
  TrainState st;
  st.model = make_model(d, c, small_nets(), DiffusionConfig{1.0, 1.0}, InteractionConfig{});
  pretrain_score(d, d.clouds, st, c);
  REQUIRE(st.report.size() == 300);

  const Matrix test = gaussian_cloud(100, 2, 1.0, rng);
  double cos_sum = 0.0;
  for (double t : {0.5, 1.5}) {
    const Matrix g = score_vector(st.model, Tensor::constant(test), time_column(test.rows(), t)).value();
    const double dot = -(g.array() * test.array()).sum();
    cos_sum += dot / (g.norm() * test.norm());
  }
  MESSAGE("mean cosine to -x: " << cos_sum / 2.0);
  CHECK(cos_sum / 2.0 > 0.95);
}

TEST_CASE("score pretraining reduces the matching loss by half") {
  const SnapshotDataset d = three_snapshots(15);
  TrainConfig c = quick_config();
  c.epochs_score = 300;
  c.learning_rate = 3e-3;
  c.cfm.pairs = 128;
  c.cfm_batch = 64;
  TrainState st = fresh_state(d, c);
  // The weighted loss has an irreducible floor near the dimension (the
  // bridge noise), which a small fresh network already sits close to; an
  // amplified output layer starts well above it.
  auto params = st.model.score_parameters();
  REQUIRE(params.size() >= 2);
  params[params.size() - 2].mutable_value() *= 30.0;
  pretrain_score(d, d.clouds, st, c);
  REQUIRE(st.report.size() == 300);
  auto window_mean = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 20; ++i) s += st.report[i].total;
    return s / 20.0;
  };
  const double first = window_mean(0), last = window_mean(280);
  MESSAGE("cfm loss " << first << " -> " << last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("interaction pretraining learns an inward force for a shrinking cloud") {
  std::mt19937_64 rng(14);
  SnapshotDataset d;
  d.times = {0.0, 1.0};
  d.clouds = {gaussian_cloud(80, 2, 0.12, rng), gaussian_cloud(80, 2, 0.12 / std::sqrt(2.0), rng)};
  TrainConfig c = quick_config();
  c.growth = false;
  c.batch_size = 80;
  c.epochs_interaction = 120;
  c.learning_rate = 5e-3;
  c.integrator.mode = IntegratorMode::kFull;
  TrainState st = fresh_state(d, c);
  pretrain_interaction(d, st, c);
  const ParticleState s = ParticleState::at(d.clouds[0], 0.0);
  const Matrix f = interaction_drift_values(st.model, s);
  const Matrix centred = d.clouds[0].rowwise() - d.clouds[0].colwise().mean();
  double radial = 0.0;
  for (Index i = 0; i < f.rows(); ++i) radial += f.row(i).dot(centred.row(i).normalized());
  radial /= static_cast<double>(f.rows());
  MESSAGE("mean radial interaction drift " << radial);
  CHECK(radial < 0.0);
}
