#pragma once

// Five-stage training procedure:
//   1. pretrain_flow         velocity + growth against local mass + OT, no interaction
//   2. pretrain_interaction  velocity + potential against OT with the growth net frozen
//   3. generate_refined      simulate the trained flow from A_0 to every snapshot time
//   4. pretrain_score        conditional flow matching of the score on the generated clouds
//   5. train_main            energy + reconstruction + Fokker-Planck, all four nets jointly
//
// Every optimizer step works on one snapshot interval [t_k, t_{k+1}]: the batch
// is marched from the previous interval's end state (detached), the interval
// loss is backpropagated and each enabled net takes one Adam step.

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umfsb/dataset.hpp"
#include "umfsb/losses.hpp"
#include "umfsb/nets.hpp"
#include "umfsb/ot.hpp"
#include "umfsb/simulate.hpp"

namespace umfsb {

struct TrainConfig {
  // Epochs per stage.
  int epochs_flow = 200;
  int epochs_interaction = 100;
  int epochs_score = 500;
  int epochs_main = 200;
  // Particles marched per interval, drawn uniformly from A_0 each epoch.
  int batch_size = 512;
  double learning_rate = 1e-3;
  // The potential's step size relative to learning_rate: its RBF features
  // are sharp, so equal steps give disproportionately large forces.
  double potential_lr_scale = 1.0;
  // Step size of the flow-pretraining stage relative to learning_rate.
  double flow_lr_scale = 1.0;
  double grad_clip = 10.0;  // per-net global gradient norm; <= 0 disables
  std::uint64_t seed = 0;

  // Ablation switches.
  bool interaction = true;
  bool growth = true;
  bool main_training = true;  // false: pretraining only

  // Stage loss weights. Pretraining uses local mass only (no global term).
  double pretrain_lambda_m = 0.01;
  double pretrain_lambda_d = 1.0;
  double interaction_lambda_m = 0.0;
  double interaction_lambda_d = 1.0;
  LossWeights main;

  IntegratorConfig integrator;       // tau, RBM group size, scheme
  ot::SinkhornConfig sinkhorn{0.05, 1000, 0.5, 1e-3, false};

  // Fokker-Planck term.
  int collocation_points = 64;   // per grid time
  double collocation_jitter = 0.05;
  int collocation_stride = 2;    // use every k-th grid state of an interval
  int gmm_components = 4;
  FpOptions fp;
  EnergyCrossTerm energy_cross = EnergyCrossTerm::kPotential;

  // Score pretraining.
  ScoreCfmOptions cfm{256, 64, 0.1};
  int cfm_batch = 64;  // points per side drawn from each generated cloud

  // Throws ConfigError on invalid values.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ReportRow {
  std::string stage;
  int epoch = 0;
  double energy = 0.0;
  double recons = 0.0;
  double fp = 0.0;
  double total = 0.0;
  double wall_ms = 0.0;
};

// Training report as CSV: stage,epoch,L_energy,L_recons,L_fp,L_total,wall_ms.
void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);

struct TrainState {
  ModelBundle model;
  ModelBundle last_good;            // snapshot after the last finite epoch
  std::string completed_stage = "none";
  std::vector<ReportRow> report;
  std::vector<Matrix> generated;    // refined clouds from stage 3
  std::vector<double> stage_final_ot;  // mean per-interval OT at the end of stages 1 and 2
};

// Fresh bundle for the dataset's dimension with the config's switches.
ModelBundle make_model(const SnapshotDataset& data, const TrainConfig& cfg,
                       const NetConfig& net, const DiffusionConfig& diff,
                       const InteractionConfig& inter);

// Called after every epoch (stage, epoch, row); may be empty.
using EpochCallback = std::function<void(const ReportRow&)>;

void pretrain_flow(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
                   const EpochCallback& cb = {});
void pretrain_interaction(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
                          const EpochCallback& cb = {});
// Returns Â_0..Â_{T-1}; Â_0 = A_0 and the particle count is preserved.
std::vector<Matrix> generate_refined(const SnapshotDataset& data, const ModelBundle& model,
                                     const TrainConfig& cfg);
void pretrain_score(const SnapshotDataset& data, const std::vector<Matrix>& generated,
                    TrainState& st, const TrainConfig& cfg, const EpochCallback& cb = {});
void train_main(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
                const EpochCallback& cb = {});

// Runs the enabled stages in order. On a non-finite loss the model is reset
// to the last good snapshot and NumericError (naming stage, epoch and loss
// component) propagates; st.completed_stage marks how far training got.
void train_all(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
               const EpochCallback& cb = {});

// Mean per-interval debiased OT between the model's flow from all of A_0
// and each snapshot (values only), using the training Sinkhorn settings.
std::vector<double> interval_ot(const SnapshotDataset& data, const ModelBundle& model,
                                const TrainConfig& cfg, std::uint64_t seed);

}  // namespace umfsb
