#include "umfsb/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "umfsb/error.hpp"
#include "umfsb/optim.hpp"

namespace umfsb {

namespace {

using Clock = std::chrono::steady_clock;

enum StageId : std::uint64_t { kFlow = 1, kInteraction = 2, kGenerate = 3, kScore = 4, kMain = 5 };

std::mt19937_64 stage_rng(const TrainConfig& cfg, StageId id) {
  std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(id)};
  return std::mt19937_64(seq);
}

std::string mode_name(IntegratorMode m) { return m == IntegratorMode::kFull ? "full" : "rbm"; }
IntegratorMode mode_from(const std::string& s) {
  if (s == "full") return IntegratorMode::kFull;
  if (s == "rbm") return IntegratorMode::kRbm;
  throw ConfigError("integrator.mode must be 'full' or 'rbm', got '" + s + "'");
}
std::string scheme_name(IntegratorScheme s) { return s == IntegratorScheme::kRk4 ? "rk4" : "euler"; }
IntegratorScheme scheme_from(const std::string& s) {
  if (s == "euler") return IntegratorScheme::kEuler;
  if (s == "rk4") return IntegratorScheme::kRk4;
  throw ConfigError("integrator.scheme must be 'euler' or 'rk4', got '" + s + "'");
}

void reject_unknown(const nlohmann::json& given, const nlohmann::json& defaults,
                    const std::string& path) {
  if (!given.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, value] : given.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown key '" + path + "." + key + "'");
    if (defaults.at(key).is_object()) reject_unknown(value, defaults.at(key), path + "." + key);
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

// n rows of `a`: without replacement when n <= rows, otherwise with.
Matrix sample_rows(const Matrix& a, Index n, std::mt19937_64& rng) {
  const Index rows = a.rows();
  Matrix out(n, a.cols());
  if (n <= rows) {
    std::vector<Index> idx(static_cast<std::size_t>(rows));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (Index i = 0; i < n; ++i) {
      std::uniform_int_distribution<Index> pick(i, rows - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      out.row(i) = a.row(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<Index> pick(0, rows - 1);
    for (Index i = 0; i < n; ++i) out.row(i) = a.row(pick(rng));
  }
  return out;
}

// Adam per net over the listed parameter groups.
struct NetOptimizers {
  std::vector<std::vector<Tensor>> groups;
  std::vector<ad::Adam> adams;
  std::vector<std::string> names;

  void add(std::vector<Tensor> params, double lr, std::string name) {
    if (params.empty()) return;
    groups.push_back(params);
    adams.emplace_back(std::move(params), ad::AdamConfig{lr});
    names.push_back(std::move(name));
  }
  void step(double clip) {
    for (std::size_t k = 0; k < adams.size(); ++k) {
      if (clip > 0.0) ad::clip_grad_norm(groups[k], clip);
      adams[k].step();
    }
  }
};

void zero_all(const ModelBundle& m) {
  for (auto params : {m.velocity_parameters(), m.growth_parameters(), m.score_parameters(),
                      m.potential_parameters()}) {
    for (auto& p : params) p.zero_grad();
  }
}

void require_finite(double v, const char* component, const std::string& where) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite " + std::string(component) + " in " + where);
  }
}

std::string where(const char* stage, int epoch, std::size_t interval) {
  return std::string("stage ") + stage + ", epoch " + std::to_string(epoch) + ", interval " +
         std::to_string(interval);
}

// Shared per-epoch driver: catches numeric failures, restores the last good
// model and records the report row.
template <typename Body>
void run_epochs(const char* stage, int epochs, TrainState& st, const EpochCallback& cb,
                Body&& body) {
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto start = Clock::now();
    ReportRow row;
    row.stage = stage;
    row.epoch = epoch;
    try {
      body(epoch, row);
    } catch (const NumericError& e) {
      st.model = st.last_good.clone();
      const std::string what = e.what();
      if (what.find("stage ") != std::string::npos) throw;
      throw NumericError(what + " (stage " + stage + ", epoch " + std::to_string(epoch) + ")");
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    st.last_good = st.model.clone();
    st.report.push_back(row);
    if (cb) cb(row);
  }
}

// One reconstruction pass: march a batch through every interval, one
// optimizer step per interval. Returns the mean OT value of the last epoch.
struct ReconsWeights {
  double lambda_m;
  double lambda_d;
  bool global;
};

double recons_epochs(const char* stage, StageId id, const SnapshotDataset& data, TrainState& st,
                     const TrainConfig& cfg, const ModelBundle& view, NetOptimizers& opt,
                     int epochs, const ReconsWeights& w, const EpochCallback& cb) {
  std::mt19937_64 rng = stage_rng(cfg, id);
  const double n0 = data.count(0);
  double last_ot = 0.0;
  run_epochs(stage, epochs, st, cb, [&](int epoch, ReportRow& row) {
    ParticleState s = ParticleState::at(sample_rows(data.clouds[0], cfg.batch_size, rng), data.times[0]);
    double ot_sum = 0.0;
    for (std::size_t k = 0; k + 1 < data.size(); ++k) {
      zero_all(view);
      auto traj = integrate(s, view, cfg.integrator, data.times[k + 1], rng, true);
      const ParticleState& end = traj.back();
      const Matrix target = sample_rows(data.clouds[k + 1],
                                        std::min<Index>(cfg.batch_size, data.clouds[k + 1].rows()), rng);
      const Tensor masses = particle_masses(end);
      Tensor loss = Tensor::scalar(0.0);
      if (w.lambda_d > 0.0) {
        const Tensor ot = ot_loss(end.positions, masses, target, cfg.sinkhorn);
        require_finite(ot.item(), "L_ot", where(stage, epoch, k));
        ot_sum += ot.item();
        loss = loss + w.lambda_d * ot;
      }
      if (w.lambda_m > 0.0 && view.growth_enabled) {
        Tensor mass = local_mass_loss(masses, end.positions.value(), target, data.count(k + 1), n0);
        if (w.global) mass = mass + global_mass_loss(masses, data.count(k + 1), n0);
        require_finite(mass.item(), "L_mass", where(stage, epoch, k));
        loss = loss + w.lambda_m * mass;
      }
      require_finite(loss.item(), "L_recons", where(stage, epoch, k));
      row.recons += loss.item();
      loss.backward();
      opt.step(cfg.grad_clip);
      s = end.detached();
    }
    row.total = row.recons;
    last_ot = ot_sum / static_cast<double>(data.size() - 1);
  });
  return last_ot;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs_flow < 0 || epochs_interaction < 0 || epochs_score < 0 || epochs_main < 0) {
    throw ConfigError("train: epochs must be >= 0");
  }
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(potential_lr_scale > 0.0) || !(flow_lr_scale > 0.0)) {
    throw ConfigError("train: learning-rate scales must be positive");
  }
  if (!std::isfinite(grad_clip)) throw ConfigError("train.grad_clip must be finite");
  for (double v : {pretrain_lambda_m, pretrain_lambda_d, interaction_lambda_m, interaction_lambda_d}) {
    if (!(v >= 0.0)) throw ConfigError("train: stage loss weights must be >= 0");
  }
  umfsb::validate(main);
  if (!(integrator.tau > 0.0)) throw ConfigError("train.integrator.tau must be positive");
  if (integrator.rbm_batch < 2) throw ConfigError("train.integrator.rbm_batch must be >= 2");
  if (!(sinkhorn.blur > 0.0) || sinkhorn.max_iter < 1 || !(sinkhorn.scaling > 0.0 && sinkhorn.scaling < 1.0) ||
      !(sinkhorn.tolerance > 0.0)) {
    throw ConfigError("train.sinkhorn: blur > 0, max_iter >= 1, 0 < scaling < 1, tolerance > 0");
  }
  if (collocation_points < 0) throw ConfigError("train.collocation_points must be >= 0");
  if (!(collocation_jitter >= 0.0)) throw ConfigError("train.collocation_jitter must be >= 0");
  if (collocation_stride < 1) throw ConfigError("train.collocation_stride must be >= 1");
  if (gmm_components < 1) throw ConfigError("train.gmm_components must be >= 1");
  if (cfm.pairs < 1 || cfm_batch < 2) throw ConfigError("train: cfm pairs >= 1 and cfm_batch >= 2");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"epochs_flow", c.epochs_flow},
      {"epochs_interaction", c.epochs_interaction},
      {"epochs_score", c.epochs_score},
      {"epochs_main", c.epochs_main},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"potential_lr_scale", c.potential_lr_scale},
      {"flow_lr_scale", c.flow_lr_scale},
      {"grad_clip", c.grad_clip},
      {"seed", c.seed},
      {"interaction", c.interaction},
      {"growth", c.growth},
      {"main_training", c.main_training},
      {"pretrain_lambda_m", c.pretrain_lambda_m},
      {"pretrain_lambda_d", c.pretrain_lambda_d},
      {"interaction_lambda_m", c.interaction_lambda_m},
      {"interaction_lambda_d", c.interaction_lambda_d},
      {"loss",
       {{"lambda_m", c.main.lambda_m},
        {"lambda_d", c.main.lambda_d},
        {"lambda_r", c.main.lambda_r},
        {"lambda_f", c.main.lambda_f},
        {"lambda_w", c.main.lambda_w},
        {"alpha", c.main.alpha}}},
      {"integrator",
       {{"tau", c.integrator.tau},
        {"mode", mode_name(c.integrator.mode)},
        {"rbm_batch", c.integrator.rbm_batch},
        {"scheme", scheme_name(c.integrator.scheme)}}},
      {"sinkhorn",
       {{"blur", c.sinkhorn.blur},
        {"max_iter", c.sinkhorn.max_iter},
        {"scaling", c.sinkhorn.scaling},
        {"tolerance", c.sinkhorn.tolerance},
        {"strict", c.sinkhorn.strict}}},
      {"collocation_points", c.collocation_points},
      {"collocation_jitter", c.collocation_jitter},
      {"collocation_stride", c.collocation_stride},
      {"gmm_components", c.gmm_components},
      {"fp", {{"max_log_density", c.fp.max_log_density}, {"include_initial", c.fp.include_initial}}},
      {"energy_cross", c.energy_cross == EnergyCrossTerm::kPotential ? "potential" : "gradient"},
      {"cfm",
       {{"pairs", c.cfm.pairs},
        {"exact_plan_max", c.cfm.exact_plan_max},
        {"entropic_blur", c.cfm.entropic_blur}}},
      {"cfm_batch", c.cfm_batch},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  reject_unknown(j, to_json(c), "train");
  try {
    read(j, "epochs_flow", c.epochs_flow);
    read(j, "epochs_interaction", c.epochs_interaction);
    read(j, "epochs_score", c.epochs_score);
    read(j, "epochs_main", c.epochs_main);
    read(j, "batch_size", c.batch_size);
    read(j, "learning_rate", c.learning_rate);
    read(j, "potential_lr_scale", c.potential_lr_scale);
    read(j, "flow_lr_scale", c.flow_lr_scale);
    read(j, "grad_clip", c.grad_clip);
    read(j, "seed", c.seed);
    read(j, "interaction", c.interaction);
    read(j, "growth", c.growth);
    read(j, "main_training", c.main_training);
    read(j, "pretrain_lambda_m", c.pretrain_lambda_m);
    read(j, "pretrain_lambda_d", c.pretrain_lambda_d);
    read(j, "interaction_lambda_m", c.interaction_lambda_m);
    read(j, "interaction_lambda_d", c.interaction_lambda_d);
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      read(l, "lambda_m", c.main.lambda_m);
      read(l, "lambda_d", c.main.lambda_d);
      read(l, "lambda_r", c.main.lambda_r);
      read(l, "lambda_f", c.main.lambda_f);
      read(l, "lambda_w", c.main.lambda_w);
      read(l, "alpha", c.main.alpha);
    }
    if (j.contains("integrator")) {
      const auto& g = j.at("integrator");
      read(g, "tau", c.integrator.tau);
      if (g.contains("mode")) c.integrator.mode = mode_from(g.at("mode").get<std::string>());
      read(g, "rbm_batch", c.integrator.rbm_batch);
      if (g.contains("scheme")) c.integrator.scheme = scheme_from(g.at("scheme").get<std::string>());
    }
    if (j.contains("sinkhorn")) {
      const auto& s = j.at("sinkhorn");
      read(s, "blur", c.sinkhorn.blur);
      read(s, "max_iter", c.sinkhorn.max_iter);
      read(s, "scaling", c.sinkhorn.scaling);
      read(s, "tolerance", c.sinkhorn.tolerance);
      read(s, "strict", c.sinkhorn.strict);
    }
    read(j, "collocation_points", c.collocation_points);
    read(j, "collocation_jitter", c.collocation_jitter);
    read(j, "collocation_stride", c.collocation_stride);
    read(j, "gmm_components", c.gmm_components);
    if (j.contains("fp")) {
      read(j.at("fp"), "max_log_density", c.fp.max_log_density);
      read(j.at("fp"), "include_initial", c.fp.include_initial);
    }
    if (j.contains("energy_cross")) {
      const auto s = j.at("energy_cross").get<std::string>();
      if (s == "potential") c.energy_cross = EnergyCrossTerm::kPotential;
      else if (s == "gradient") c.energy_cross = EnergyCrossTerm::kGradient;
      else throw ConfigError("train.energy_cross must be 'potential' or 'gradient'");
    }
    if (j.contains("cfm")) {
      read(j.at("cfm"), "pairs", c.cfm.pairs);
      read(j.at("cfm"), "exact_plan_max", c.cfm.exact_plan_max);
      read(j.at("cfm"), "entropic_blur", c.cfm.entropic_blur);
    }
    read(j, "cfm_batch", c.cfm_batch);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  c.validate();
  return c;
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "stage,epoch,L_energy,L_recons,L_fp,L_total,wall_ms\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.stage << ',' << r.epoch << ',' << r.energy << ',' << r.recons << ',' << r.fp << ','
        << r.total << ',' << r.wall_ms << '\n';
  }
}

ModelBundle make_model(const SnapshotDataset& data, const TrainConfig& cfg, const NetConfig& net,
                       const DiffusionConfig& diff, const InteractionConfig& inter) {
  data.validate();
  cfg.validate();
  ModelBundle m = make_learned_bundle(data.dim(), net, diff, inter, cfg.seed);
  m.interaction_enabled = cfg.interaction;
  m.growth_enabled = cfg.growth;
  return m;
}

void pretrain_flow(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
                   const EpochCallback& cb) {
  ModelBundle view = st.model;  // shares the nets
  view.interaction_enabled = false;
  NetOptimizers opt;
  const double lr = cfg.learning_rate * cfg.flow_lr_scale;
  opt.add(st.model.velocity_parameters(), lr, "velocity");
  if (st.model.growth_enabled) opt.add(st.model.growth_parameters(), lr, "growth");
  st.last_good = st.model.clone();
  const double ot = recons_epochs("flow", kFlow, data, st, cfg, view, opt, cfg.epochs_flow,
                                  {cfg.pretrain_lambda_m, cfg.pretrain_lambda_d, false}, cb);
  if (cfg.epochs_flow > 0) st.stage_final_ot.push_back(ot);
  st.completed_stage = "flow";
}

void pretrain_interaction(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
                          const EpochCallback& cb) {
  if (st.model.interaction_enabled) {
    NetOptimizers opt;
    opt.add(st.model.velocity_parameters(), cfg.learning_rate, "velocity");
    opt.add(st.model.potential_parameters(), cfg.learning_rate * cfg.potential_lr_scale, "potential");
    st.last_good = st.model.clone();
    const double ot =
        recons_epochs("interaction", kInteraction, data, st, cfg, st.model, opt, cfg.epochs_interaction,
                      {cfg.interaction_lambda_m, cfg.interaction_lambda_d, false}, cb);
    if (cfg.epochs_interaction > 0) st.stage_final_ot.push_back(ot);
  }
  st.completed_stage = "interaction";
}

std::vector<Matrix> generate_refined(const SnapshotDataset& data, const ModelBundle& model,
                                     const TrainConfig& cfg) {
  std::mt19937_64 rng = stage_rng(cfg, kGenerate);
  std::vector<Matrix> out{data.clouds[0]};
  ParticleState s = ParticleState::at(data.clouds[0], data.times[0]);
  for (std::size_t k = 0; k + 1 < data.size(); ++k) {
    s = integrate(s, model, cfg.integrator, data.times[k + 1], rng, false).back();
    check_finite(s, "generate_refined");
    out.push_back(s.positions.value());
  }
  return out;
}

void pretrain_score(const SnapshotDataset& data, const std::vector<Matrix>& generated,
                    TrainState& st, const TrainConfig& cfg, const EpochCallback& cb) {
  if (generated.size() != data.size()) {
    throw InvalidArgument("pretrain_score: expected one generated cloud per snapshot");
  }
  std::mt19937_64 rng = stage_rng(cfg, kScore);
  NetOptimizers opt;
  opt.add(st.model.score_parameters(), cfg.learning_rate, "score");
  st.last_good = st.model.clone();
  const double sigma = st.model.diffusion.sigma;
  run_epochs("score", cfg.epochs_score, st, cb, [&](int epoch, ReportRow& row) {
    zero_all(st.model);
    Tensor loss = Tensor::scalar(0.0);
    for (std::size_t k = 0; k + 1 < generated.size(); ++k) {
      const Matrix x0 = sample_rows(generated[k], std::min<Index>(cfg.cfm_batch, generated[k].rows()), rng);
      const Matrix x1 = sample_rows(generated[k + 1], std::min<Index>(cfg.cfm_batch, generated[k + 1].rows()), rng);
      loss = loss + score_cfm_loss(st.model, x0, data.times[k], x1, data.times[k + 1], sigma, rng, cfg.cfm);
    }
    loss = loss / static_cast<double>(generated.size() - 1);
    require_finite(loss.item(), "L_score", where("score", epoch, 0));
    loss.backward();
    opt.step(cfg.grad_clip);
    row.total = loss.item();
  });
  st.completed_stage = "score";
}

void train_main(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
                const EpochCallback& cb) {
  std::mt19937_64 rng = stage_rng(cfg, kMain);
  const ModelBundle& m = st.model;
  NetOptimizers opt;
  opt.add(m.velocity_parameters(), cfg.learning_rate, "velocity");
  if (m.growth_enabled) opt.add(m.growth_parameters(), cfg.learning_rate, "growth");
  opt.add(m.score_parameters(), cfg.learning_rate, "score");
  if (m.interaction_enabled) opt.add(m.potential_parameters(), cfg.learning_rate * cfg.potential_lr_scale, "potential");
  std::mt19937_64 gmm_rng = stage_rng(cfg, kMain);
  gmm_rng.discard(17);
  const bool use_fp = cfg.main.lambda_f > 0.0 && cfg.collocation_points > 0;
  InitialDensityModel p0;
  if (use_fp) {
    p0 = fit_gmm(data.clouds[0], std::min<int>(cfg.gmm_components, static_cast<int>(data.count(0))), gmm_rng);
  }
  const double n0 = data.count(0);
  const LossWeights& w = cfg.main;
  st.last_good = st.model.clone();
  run_epochs("main", cfg.epochs_main, st, cb, [&](int epoch, ReportRow& row) {
    const Matrix batch0 = sample_rows(data.clouds[0], cfg.batch_size, rng);
    ParticleState s = ParticleState::at(batch0, data.times[0]);
    for (std::size_t k = 0; k + 1 < data.size(); ++k) {
      const std::string at = where("main", epoch, k);
      zero_all(m);
      auto traj = integrate(s, m, cfg.integrator, data.times[k + 1], rng, true);
      const ParticleState& end = traj.back();

      const Tensor energy = energy_loss(traj, m, w.alpha, cfg.energy_cross);
      require_finite(energy.item(), "L_energy", at);

      const Matrix target = sample_rows(data.clouds[k + 1],
                                        std::min<Index>(cfg.batch_size, data.clouds[k + 1].rows()), rng);
      const Tensor masses = particle_masses(end);
      Tensor recons = w.lambda_d * ot_loss(end.positions, masses, target, cfg.sinkhorn);
      if (m.growth_enabled && w.lambda_m > 0.0) {
        recons = recons + w.lambda_m * (local_mass_loss(masses, end.positions.value(), target,
                                                        data.count(k + 1), n0) +
                                        global_mass_loss(masses, data.count(k + 1), n0));
      }
      require_finite(recons.item(), "L_recons", at);

      Tensor fp = Tensor::scalar(0.0);
      if (use_fp) {
        std::vector<ParticleState> grid;
        for (std::size_t g = 0; g < traj.size(); g += static_cast<std::size_t>(cfg.collocation_stride)) {
          grid.push_back(traj[g].detached());
        }
        const auto blocks = sample_collocation(grid, cfg.collocation_points, cfg.collocation_jitter, rng);
        FpOptions fo = cfg.fp;
        fo.include_initial = cfg.fp.include_initial && k == 0;
        Matrix init_pts = batch0;
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (Index i = 0; i < init_pts.size(); ++i) init_pts.data()[i] += cfg.collocation_jitter * gauss(rng);
        const Matrix init_sub = sample_rows(init_pts, std::min<Index>(cfg.collocation_points, init_pts.rows()), rng);
        fp = fp_loss(m, blocks, init_sub, p0, w.lambda_w, fo).loss;
        require_finite(fp.item(), "L_fp", at);
      }
      const Tensor total = energy + w.lambda_r * recons + w.lambda_f * fp;
      require_finite(total.item(), "L_total", at);
      row.energy += energy.item();
      row.recons += recons.item();
      row.fp += fp.item();
      row.total += total.item();
      total.backward();
      opt.step(cfg.grad_clip);
      s = end.detached();
    }
  });
  st.completed_stage = "main";
}

void train_all(const SnapshotDataset& data, TrainState& st, const TrainConfig& cfg,
               const EpochCallback& cb) {
  data.validate();
  cfg.validate();
  if (st.model.dim != data.dim()) {
    throw DataError("model dimension " + std::to_string(st.model.dim) + " does not match data dimension " +
                    std::to_string(data.dim()));
  }
  pretrain_flow(data, st, cfg, cb);
  pretrain_interaction(data, st, cfg, cb);
  st.generated = generate_refined(data, st.model, cfg);
  st.completed_stage = "generate";
  pretrain_score(data, st.generated, st, cfg, cb);
  if (cfg.main_training) train_main(data, st, cfg, cb);
  st.completed_stage = "complete";
}

std::vector<double> interval_ot(const SnapshotDataset& data, const ModelBundle& model,
                                const TrainConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out;
  ParticleState s = ParticleState::at(data.clouds[0], data.times[0]);
  for (std::size_t k = 0; k + 1 < data.size(); ++k) {
    s = integrate(s, model, cfg.integrator, data.times[k + 1], rng, false).back();
    const WeightedCloud c = empirical_measure(s);
    const Eigen::VectorXd b = Eigen::VectorXd::Constant(data.clouds[k + 1].rows(), 1.0);
    out.push_back(ot::sinkhorn_divergence(c.points, c.normalized, data.clouds[k + 1], b, cfg.sinkhorn));
  }
  return out;
}

}  // namespace umfsb
