#pragma once

// Run configuration: one JSON tree holding everything a train / eval run
// needs (networks, diffusion, interaction kernel, training, evaluation and the
// synthetic generator), plus optional per-dimension data standardization.
//
// Every section and key is optional; missing keys keep the defaults of the
// underlying structs. Unknown keys anywhere in the tree are a ConfigError.

#include <string>

#include <nlohmann/json.hpp>

#include "umfsb/dataset.hpp"
#include "umfsb/metrics.hpp"
#include "umfsb/nets.hpp"
#include "umfsb/synthgen.hpp"
#include "umfsb/train.hpp"

namespace umfsb {

struct RunConfig {
  NetConfig net;
  DiffusionConfig diffusion;
  InteractionConfig interaction;
  TrainConfig train;
  EvalOptions eval;  // eval.integrator is taken from train.integrator
  SynthParams data;  // used by gen-data only
  // Standardize every coordinate with the training snapshots' pooled mean and
  // standard deviation before training (intended for external data).
  bool standardize = false;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
// Parses a JSON file; parse errors and unknown keys become ConfigError.
RunConfig load_run_config(const std::string& path);

// Per-dimension affine map x -> (x - mean) / scale.
struct Standardization {
  Matrix mean;   // 1 x d
  Matrix scale;  // 1 x d, strictly positive

  static Standardization fit(const SnapshotDataset& data);
  static Standardization identity(int dim);
  SnapshotDataset apply(const SnapshotDataset& data) const;
  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& z) const;
};

nlohmann::json to_json(const Standardization& s);
Standardization standardization_from_json(const nlohmann::json& j);

}  // namespace umfsb
