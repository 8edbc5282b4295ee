#pragma once

// Evaluation metrics: weighted W1 (exact), Total Mass Variation, the
// drift/interaction-force cosine field with its Moran's I, the multi-seed
// evaluation protocol and the hold-one-out harness.

#include <cstdint>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "umfsb/dataset.hpp"
#include "umfsb/nets.hpp"
#include "umfsb/simulate.hpp"
#include "umfsb/train.hpp"

namespace umfsb {

// Exact 1-Wasserstein distance with Euclidean ground cost between weighted
// clouds (weights normalized internally). Sides larger than `max_points` are
// uniformly subsampled with the given seed. Throws InvalidArgument on empty
// clouds or zero total weight.
double w1(const Matrix& x, const Eigen::VectorXd& a, const Matrix& y, const Eigen::VectorXd& b,
          std::uint64_t seed = 0, Index max_points = 2000);

// |total_mass - n_k / n_0|.
double tmv(double total_mass, double n_k, double n_0);
double tmv(const Eigen::VectorXd& masses, double n_k, double n_0);

// Row-wise cosine similarity; rows where either vector is zero give 0.
Eigen::VectorXd row_cosine(const Matrix& a, const Matrix& b);

// Moran's I of `field` over the row-normalized k-nearest-neighbour graph of
// `positions` (self excluded). Throws NumericError("Moran's I undefined ...")
// when the field has zero variance and InvalidArgument when there are not
// more than k points.
double morans_i(const Matrix& positions, const Eigen::VectorXd& field, int k = 10);

struct CorrelationResult {
  Matrix drift;             // v + grad s
  Matrix force;             // mean-field interaction drift (all particles)
  Eigen::VectorXd cosine;   // per particle
  double moran_i = 0.0;
};

// Per-particle cosine between the drift v + grad s and the interaction force
// at the state's time, and its Moran's I. Requires at least 10 particles.
CorrelationResult drift_force_correlation(const ParticleState& s, const ModelBundle& m, int k = 10);

struct EvalOptions {
  int seeds = 5;
  std::uint64_t base_seed = 0;
  IntegratorConfig integrator;
  int moran_k = 10;
  Index w1_max_points = 2000;
  bool moran = true;
  int threads = 1;  // seeds evaluated concurrently; results do not depend on it
};

struct TimeMetrics {
  std::size_t index = 0;
  double time = 0.0;
  std::vector<double> w1;   // per seed
  std::vector<double> tmv;  // per seed
  double w1_mean = 0.0, w1_std = 0.0, tmv_mean = 0.0, tmv_std = 0.0;
};

struct RunSummary {
  std::uint64_t seed = 0;
  double moran_i = 0.0;  // NaN when undefined (constant field)
  double runtime_ms = 0.0;
};

struct EvalReport {
  std::vector<TimeMetrics> per_time;  // snapshot indices 1..T-1
  std::vector<RunSummary> runs;
  double moran_mean = 0.0, moran_std = 0.0;  // over runs where defined (NaN if none)
  const TimeMetrics& at(std::size_t index) const;
};

// Applies the model to every point of A_0 with masses 1/n_0 for `seeds`
// seeded runs and reports W1 (against uniform data weights) and TMV at every
// later snapshot, mean and (population) std across runs, plus Moran's I of
// the drift-force field on each run's final state.
EvalReport evaluate(const ModelBundle& m, const SnapshotDataset& data, const EvalOptions& opt);

// One row per time: index,t,W1_mean,W1_std,TMV_mean,TMV_std.
void write_eval_csv(std::ostream& out, const EvalReport& r);
nlohmann::json to_json(const EvalReport& r);

struct HoldoutResult {
  std::size_t index = 0;
  double time = 0.0;
  double w1_mean = 0.0;
  double w1_std = 0.0;
  EvalReport report;  // evaluated against the full dataset
};

// Trains on the data without snapshot `index` (which must lie strictly
// between the first and the last) and reports W1 at the held-out time.
HoldoutResult holdout_eval(const SnapshotDataset& data, std::size_t index, const TrainConfig& cfg,
                           const NetConfig& net, const DiffusionConfig& diff,
                           const InteractionConfig& inter, const EvalOptions& opt,
                           const EpochCallback& cb = {});

}  // namespace umfsb
