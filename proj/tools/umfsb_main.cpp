// umfsb: command-line front end.
//
//   umfsb gen-data  --config C --out data.csv [--seed S] [--interaction KIND]
//   umfsb train     --config C --data data.csv --out model.json [--report r.csv] [--ablate X]
//   umfsb eval      --checkpoint model.json --data data.csv [--seeds 5] [--sigma S [--override]]
//                   [--out report.json] [--csv report.csv] [--export-vectors cells.csv]
//                   [--holdout K]
//   umfsb holdout   --config C --data data.csv --index K [--out report.json]
//   umfsb calibrate --config C [--target 1.93] [--seeds 4]
//
// Exit codes: 0 success, 2 configuration / usage error, 3 data error,
// 4 numeric failure.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "umfsb/checkpoint.hpp"
#include "umfsb/config.hpp"
#include "umfsb/error.hpp"
#include "umfsb/metrics.hpp"
#include "umfsb/simulate.hpp"
#include "umfsb/synthgen.hpp"
#include "umfsb/train.hpp"

namespace {

using namespace umfsb;
using json = nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path + "'");
}

// UMFSB_THREADS caps the evaluation worker count; unset means the config value.
int thread_cap(int configured) {
  const char* env = std::getenv("UMFSB_THREADS");
  if (env == nullptr || *env == '\0') return configured;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) {
    throw ConfigError(std::string("UMFSB_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(v);
}

void apply_ablation(const std::string& ablate, TrainConfig& cfg) {
  if (ablate.empty() || ablate == "none") return;
  if (ablate == "no_interaction") cfg.interaction = false;
  else if (ablate == "no_growth") cfg.growth = false;
  else if (ablate == "no_training") cfg.main_training = false;
  else throw ConfigError("--ablate must be one of no_interaction, no_growth, no_training");
}

void print_report(const EvalReport& r) {
  for (const auto& t : r.per_time) {
    std::cout << "t=" << t.time << "  W1 " << t.w1_mean << " +- " << t.w1_std << "  TMV " << t.tmv_mean
              << " +- " << t.tmv_std << "\n";
  }
  if (std::isfinite(r.moran_mean)) std::cout << "Moran's I " << r.moran_mean << " +- " << r.moran_std << "\n";
}

// ---- gen-data ------------------------------------------------------------------

struct GenArgs {
  std::string config, out, manifest, interaction;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  SynthParams p = rc.data;
  if (a.seed) p.seed = *a.seed;
  if (!a.interaction.empty()) p.interaction = interaction_kind_from_name(a.interaction);
  p.validate();
  const SynthResult r = simulate_population(p);
  save_dataset(a.out, r.data);
  const std::string manifest = a.manifest.empty() ? a.out + ".manifest.json" : a.manifest;
  write_text(manifest, r.manifest.dump(2) + "\n");
  std::cout << "wrote " << a.out << " (";
  for (std::size_t k = 0; k < r.counts.size(); ++k) std::cout << (k ? "," : "") << r.counts[k];
  std::cout << " cells) and " << manifest << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, report, ablate;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const json raw = a.config.empty() ? json::object() : read_json_file(a.config);
  RunConfig rc = run_config_from_json(raw);
  apply_ablation(a.ablate, rc.train);
  if (a.seed) rc.train.seed = *a.seed;
  const SnapshotDataset raw_data = load_dataset(a.data);
  const Standardization stdz =
      rc.standardize ? Standardization::fit(raw_data) : Standardization::identity(raw_data.dim());
  const SnapshotDataset data = stdz.apply(raw_data);

  Checkpoint ckpt;
  ckpt.config = {{"input", raw},
                 {"resolved", to_json(rc)},
                 {"ablation", a.ablate.empty() ? "none" : a.ablate},
                 {"standardization", to_json(stdz)},
                 {"data", a.data}};
  TrainState st;
  st.model = make_model(data, rc.train, rc.net, rc.diffusion, rc.interaction);
  const EpochCallback cb = [&](const ReportRow& r) {
    if (!a.quiet && (r.epoch + 1) % 10 == 0) {
      std::cerr << r.stage << " epoch " << r.epoch + 1 << "  total " << r.total << "\n";
    }
  };
  auto write_outputs = [&] {
    ckpt.model = st.model;
    ckpt.stage = st.completed_stage;
    save_checkpoint(ckpt, a.out);
    const std::string report = a.report.empty() ? a.out + ".report.csv" : a.report;
    std::ofstream rep(report);
    if (!rep) throw DataError("cannot write '" + report + "'");
    write_report_csv(rep, st.report);
  };
  try {
    train_all(data, st, rc.train, cb);
  } catch (const NumericError&) {
    // Partial checkpoint: the last good model, marked with the last completed stage.
    write_outputs();
    throw;
  }
  write_outputs();
  std::cout << "wrote " << a.out << " (" << st.report.size() << " epochs)\n";
  return 0;
}

// ---- eval / holdout ---------------------------------------------------------------

HoldoutResult run_holdout(const RunConfig& rc, const SnapshotDataset& data, std::size_t index, bool quiet) {
  const EpochCallback cb = [&](const ReportRow& r) {
    if (!quiet && (r.epoch + 1) % 10 == 0) std::cerr << r.stage << " epoch " << r.epoch + 1 << "\n";
  };
  return holdout_eval(data, index, rc.train, rc.net, rc.diffusion, rc.interaction, rc.eval, cb);
}

void write_holdout(const HoldoutResult& h, const std::string& out) {
  std::cout << "held-out index " << h.index << " (t=" << h.time << "): W1 " << h.w1_mean << " +- "
            << h.w1_std << "\n";
  if (!out.empty()) {
    json j = to_json(h.report);
    j["holdout"] = {{"index", h.index}, {"t", h.time}, {"w1_mean", h.w1_mean}, {"w1_std", h.w1_std}};
    write_text(out, j.dump(2) + "\n");
  }
}

// Per-cell vectors on the final state of evaluation seed 0 at every snapshot.
void export_vectors(const ModelBundle& m, const SnapshotDataset& data, const EvalOptions& opt,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  const int d = m.dim;
  out << "t,cell,weight";
  for (const char* name : {"x", "v", "score", "force", "drift"}) {
    for (int j = 1; j <= d; ++j) out << ',' << name << '_' << j;
  }
  out << ",growth\n";
  out.precision(10);
  std::mt19937_64 rng(opt.base_seed);
  ParticleState s = ParticleState::at(data.clouds[0], data.times[0]);
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (k > 0) s = integrate(s, m, opt.integrator, data.times[k], rng, false).back();
    const Tensor x = Tensor::constant(s.positions.value());
    const Tensor t = time_column(s.size(), s.time);
    const Matrix v = m.velocity->value(x, t).value();
    const Matrix sc = score_vector(m, x, t).value();
    const Matrix f = interaction_drift_values(m, s);
    const Matrix g = m.growth->value(x, t).value();
    const Matrix& pos = s.positions.value();
    const Matrix& logw = s.log_weights.value();
    for (Index i = 0; i < s.size(); ++i) {
      out << s.time << ',' << i << ',' << std::exp(logw(i, 0)) / static_cast<double>(s.size());
      for (const Matrix* mat : {&pos, &v, &sc, &f}) {
        for (int j = 0; j < d; ++j) out << ',' << (*mat)(i, j);
      }
      for (int j = 0; j < d; ++j) out << ',' << v(i, j) + sc(i, j);
      out << ',' << g(i, 0) << '\n';
    }
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

struct EvalArgs {
  std::string checkpoint, data, out, csv, vectors;
  int seeds = 5;
  std::optional<double> sigma;
  bool override_sigma = false;
  std::optional<std::size_t> holdout;
  bool quiet = false;
};

int cmd_eval(const EvalArgs& a) {
  Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (a.sigma && *a.sigma != ckpt.model.diffusion.sigma) {
    if (!a.override_sigma) {
      throw ConfigError("checkpoint sigma " + std::to_string(ckpt.model.diffusion.sigma) +
                        " differs from --sigma " + std::to_string(*a.sigma) + " (pass --override to use it)");
    }
    ckpt.model.diffusion.sigma = *a.sigma;
  }
  RunConfig rc;
  if (ckpt.config.contains("resolved")) rc = run_config_from_json(ckpt.config.at("resolved"));
  rc.eval.seeds = a.seeds;
  rc.eval.threads = thread_cap(rc.eval.threads);
  if (rc.eval.seeds < 1) throw ConfigError("--seeds must be >= 1");
  Standardization stdz = Standardization::identity(ckpt.model.dim);
  if (ckpt.config.contains("standardization")) {
    stdz = standardization_from_json(ckpt.config.at("standardization"));
  }
  const SnapshotDataset raw = load_dataset(a.data);
  if (raw.dim() != ckpt.model.dim) {
    throw DataError("checkpoint dimension " + std::to_string(ckpt.model.dim) + " does not match data dimension " +
                    std::to_string(raw.dim()));
  }
  const SnapshotDataset data = stdz.apply(raw);
  if (a.holdout) {
    write_holdout(run_holdout(rc, data, *a.holdout, a.quiet), a.out);
    return 0;
  }
  const EvalReport r = evaluate(ckpt.model, data, rc.eval);
  print_report(r);
  if (!a.out.empty()) write_text(a.out, to_json(r).dump(2) + "\n");
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw DataError("cannot write '" + a.csv + "'");
    write_eval_csv(out, r);
  }
  if (!a.vectors.empty()) export_vectors(ckpt.model, data, rc.eval, a.vectors);
  return 0;
}

struct HoldoutArgs {
  std::string config, data, out;
  std::size_t index = 0;
  std::optional<int> seeds;
  bool quiet = false;
};

int cmd_holdout(const HoldoutArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (a.seeds) rc.eval.seeds = *a.seeds;
  rc.eval.threads = thread_cap(rc.eval.threads);
  const SnapshotDataset raw = load_dataset(a.data);
  const Standardization stdz =
      rc.standardize ? Standardization::fit(raw.without(a.index)) : Standardization::identity(raw.dim());
  write_holdout(run_holdout(rc, stdz.apply(raw), a.index, a.quiet), a.out);
  return 0;
}

// ---- calibrate -------------------------------------------------------------------

struct CalibrateArgs {
  std::string config;
  double target = 1.93;
  int seeds = 4;
};

int cmd_calibrate(const CalibrateArgs& a) {
  const RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  const CalibrationResult r = calibrate_division_rate(rc.data, a.target, a.seeds);
  std::cout.precision(6);
  std::cout << "alpha_g " << r.alpha_g << "  final ratio " << r.achieved_ratio << "  ratios";
  for (double x : r.mean_ratios) std::cout << ' ' << x;
  std::cout << "  (" << r.evaluations << " evaluations)\n";
  return 0;
}

// Prints the fully resolved configuration (defaults merged with --config).
int cmd_print_config(const std::string& config) {
  const RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
  std::cout << to_json(rc).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unbalanced mean-field Schroedinger bridge: data generation, training and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Simulate the three-gene regulatory benchmark");
  g->add_option("--config", gen.config, "Run configuration (JSON); the 'data' section is used");
  g->add_option("--out", gen.out, "Output dataset CSV")->required();
  g->add_option("--manifest", gen.manifest, "Manifest path (default: <out>.manifest.json)");
  g->add_option("--seed", gen.seed, "Generator seed (overrides the config)");
  g->add_option("--interaction", gen.interaction, "attractive | lennard_jones | none");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Run the five training stages");
  t->add_option("--config", tr.config, "Run configuration (JSON)");
  t->add_option("--data", tr.data, "Dataset CSV (t,x_1,...,x_d)")->required();
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--report", tr.report, "Training report CSV (default: <out>.report.csv)");
  t->add_option("--ablate", tr.ablate, "no_interaction | no_growth | no_training");
  t->add_option("--seed", tr.seed, "Training seed (overrides the config)");
  t->add_flag("--quiet", tr.quiet, "No progress output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint (W1, TMV, Moran's I)");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  e->add_option("--data", ev.data, "Dataset CSV")->required();
  e->add_option("--seeds", ev.seeds, "Simulation runs")->capture_default_str();
  e->add_option("--sigma", ev.sigma, "Expected diffusion sigma; must match the checkpoint");
  e->add_flag("--override", ev.override_sigma, "Use --sigma even if it differs from the checkpoint");
  e->add_option("--out", ev.out, "Report JSON");
  e->add_option("--csv", ev.csv, "Report CSV");
  e->add_option("--export-vectors", ev.vectors, "Per-cell velocity/score/force CSV");
  e->add_option("--holdout", ev.holdout, "Retrain without this snapshot index and score it");
  e->add_flag("--quiet", ev.quiet, "No progress output");

  HoldoutArgs ho;
  auto* h = app.add_subcommand("holdout", "Hold-one-out evaluation");
  h->add_option("--config", ho.config, "Run configuration (JSON)");
  h->add_option("--data", ho.data, "Dataset CSV")->required();
  h->add_option("--index", ho.index, "Snapshot index to hold out")->required();
  h->add_option("--seeds", ho.seeds, "Simulation runs");
  h->add_option("--out", ho.out, "Report JSON");
  h->add_flag("--quiet", ho.quiet, "No progress output");

  CalibrateArgs ca;
  auto* c = app.add_subcommand("calibrate", "Calibrate the division-rate scale");
  c->add_option("--config", ca.config, "Run configuration (JSON); the 'data' section is used");
  c->add_option("--target", ca.target, "Target final-to-initial count ratio")->capture_default_str();
  c->add_option("--seeds", ca.seeds, "Simulations per evaluation")->capture_default_str();

  std::string shown_config;
  auto* pc = app.add_subcommand("print-config", "Print the resolved configuration as JSON");
  pc->add_option("--config", shown_config, "Run configuration to merge over the defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (h->parsed()) return cmd_holdout(ho);
    if (c->parsed()) return cmd_calibrate(ca);
    if (pc->parsed()) return cmd_print_config(shown_config);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const InvalidArgument& err) {
    std::cerr << "invalid argument: " << err.what() << "\n";
    return kExitConfig;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const ShapeError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
