#pragma once

// Ground-truth generator: a three-gene stochastic regulatory network with
// optional pairwise interaction (attractive, Lennard-Jones or none), growth
// by cell division driven by X_2, and snapshot recording.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umfsb/dataset.hpp"

namespace umfsb {

enum class InteractionKind { kAttractive, kLennardJones, kNone };

std::string interaction_kind_name(InteractionKind k);
InteractionKind interaction_kind_from_name(const std::string& name);

struct SynthParams {
  double alpha1 = 0.5, gamma1 = 0.5;
  double alpha2 = 1.0, gamma2 = 1.0;
  double alpha3 = 1.0, gamma3 = 10.0;
  double delta1 = 0.4, delta2 = 0.4, delta3 = 0.4;
  double eta1 = 0.05, eta2 = 0.05, eta3 = 0.01;
  double eta_d = 0.014;  // daughter perturbation
  double beta = 1.0;
  double cutoff = 0.5;
  double lj_equilibrium = 0.1;  // d_e
  double force_max = 100.0;
  double dt = 1.0;
  std::vector<double> record_times{0, 8, 16, 24, 32};
  // Snapshot time value = record time / time_unit (record 8 -> t = 1).
  double time_unit = 8.0;
  // Division-rate scale: g = alpha_g X_2^2 / (1 + X_2^2). Calibrated default
  // (see calibrate_division_rate) for n_4 / n_0 ~ 1.93 on the attractive
  // system.
  double alpha_g = 0.0516;
  InteractionKind interaction = InteractionKind::kAttractive;
  int initial_cells = 500;
  std::vector<std::array<double, 3>> initial_means{{2.0, 0.2, 0.0}, {0.0, 0.0, 2.0}};
  double initial_spread = 0.1;
  bool spread_is_std = false;  // default: spread is the variance
  int max_cells = 200000;
  std::uint64_t seed = 0;

  // Throws ConfigError on invalid values.
  void validate() const;
};

nlohmann::json to_json(const SynthParams& p);
// Missing keys keep their defaults; unknown keys are a ConfigError.
SynthParams synth_params_from_json(const nlohmann::json& j);

using Vec3 = std::array<double, 3>;

// Regulatory drift (no noise, no interaction).
Vec3 drift_grn(const Vec3& x, const SynthParams& p);

// grad_{x_i} Phi(x_i - x_j) for the selected kind, zero beyond the cutoff.
// Lennard-Jones forces are clipped to force_max in magnitude; coincident
// points get a force of magnitude force_max along a random unit vector.
Vec3 interaction_force(const Vec3& xi, const Vec3& xj, InteractionKind kind, const SynthParams& p,
                       std::mt19937_64& rng);

// Division probability per step: min(1, g dt).
double division_probability(const Vec3& x, const SynthParams& p);

struct SynthResult {
  SnapshotDataset data;
  std::vector<int> counts;  // realized n_k
  nlohmann::json manifest;  // params, seed, counts, times
};

// Euler-Maruyama simulation recorded at p.record_times. Throws NumericError
// when the population exceeds p.max_cells.
SynthResult simulate_population(const SynthParams& p);

// Bisection on alpha_g so that the mean (over `seeds` runs) final-to-initial
// count ratio hits `target_ratio`. Returns the calibrated alpha_g.
struct CalibrationResult {
  double alpha_g = 0.0;
  double achieved_ratio = 0.0;
  std::vector<double> mean_ratios;  // n_k / n_0 per record time
  int evaluations = 0;
};
CalibrationResult calibrate_division_rate(SynthParams p, double target_ratio, int seeds = 4,
                                          double lo = 0.0, double hi = 0.5, int iterations = 30);

}  // namespace umfsb
