#include "umfsb/synthgen.hpp"

#include <cmath>
#include <set>

#include "umfsb/error.hpp"

namespace umfsb {

std::string interaction_kind_name(InteractionKind k) {
  switch (k) {
    case InteractionKind::kAttractive:
      return "attractive";
    case InteractionKind::kLennardJones:
      return "lennard_jones";
    case InteractionKind::kNone:
      return "none";
  }
  return "none";
}

InteractionKind interaction_kind_from_name(const std::string& name) {
  if (name == "attractive") return InteractionKind::kAttractive;
  if (name == "lennard_jones") return InteractionKind::kLennardJones;
  if (name == "none") return InteractionKind::kNone;
  throw ConfigError("unknown interaction kind '" + name +
                    "' (expected attractive, lennard_jones or none)");
}

void SynthParams::validate() const {
  const std::pair<const char*, double> nonneg[] = {
      {"alpha1", alpha1}, {"gamma1", gamma1}, {"alpha2", alpha2}, {"gamma2", gamma2},
      {"alpha3", alpha3}, {"gamma3", gamma3}, {"delta1", delta1}, {"delta2", delta2},
      {"delta3", delta3}, {"eta1", eta1},     {"eta2", eta2},     {"eta3", eta3},
      {"eta_d", eta_d},   {"beta", beta},     {"alpha_g", alpha_g}, {"initial_spread", initial_spread},
      {"force_max", force_max}};
  for (const auto& [name, v] : nonneg) {
    if (!std::isfinite(v) || v < 0.0) {
      throw ConfigError(std::string("synth.") + name + " must be finite and >= 0");
    }
  }
  if (!(cutoff > 0.0)) throw ConfigError("synth.cutoff must be positive");
  if (!(lj_equilibrium > 0.0)) throw ConfigError("synth.lj_equilibrium must be positive");
  if (!(dt > 0.0)) throw ConfigError("synth.dt must be positive");
  if (!(time_unit > 0.0)) throw ConfigError("synth.time_unit must be positive");
  if (record_times.size() < 2) throw ConfigError("synth.record_times needs at least 2 entries");
  for (std::size_t k = 0; k < record_times.size(); ++k) {
    if (record_times[k] < 0.0) throw ConfigError("synth.record_times must be nonnegative");
    if (k > 0 && !(record_times[k] > record_times[k - 1])) {
      throw ConfigError("synth.record_times must increase");
    }
    const double steps = record_times[k] / dt;
    if (std::abs(steps - std::round(steps)) > 1e-9) {
      throw ConfigError("synth.record_times must be multiples of dt");
    }
  }
  if (initial_cells < 1) throw ConfigError("synth.initial_cells must be >= 1");
  if (initial_means.empty()) throw ConfigError("synth.initial_means must not be empty");
  if (max_cells < initial_cells) throw ConfigError("synth.max_cells must be >= initial_cells");
}

nlohmann::json to_json(const SynthParams& p) {
  nlohmann::json means = nlohmann::json::array();
  for (const auto& m : p.initial_means) means.push_back({m[0], m[1], m[2]});
  return {{"alpha1", p.alpha1},
          {"gamma1", p.gamma1},
          {"alpha2", p.alpha2},
          {"gamma2", p.gamma2},
          {"alpha3", p.alpha3},
          {"gamma3", p.gamma3},
          {"delta1", p.delta1},
          {"delta2", p.delta2},
          {"delta3", p.delta3},
          {"eta1", p.eta1},
          {"eta2", p.eta2},
          {"eta3", p.eta3},
          {"eta_d", p.eta_d},
          {"beta", p.beta},
          {"cutoff", p.cutoff},
          {"lj_equilibrium", p.lj_equilibrium},
          {"force_max", p.force_max},
          {"dt", p.dt},
          {"record_times", p.record_times},
          {"time_unit", p.time_unit},
          {"alpha_g", p.alpha_g},
          {"interaction", interaction_kind_name(p.interaction)},
          {"initial_cells", p.initial_cells},
          {"initial_means", means},
          {"initial_spread", p.initial_spread},
          {"spread_is_std", p.spread_is_std},
          {"max_cells", p.max_cells},
          {"seed", p.seed}};
}

SynthParams synth_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth: expected an object");
  SynthParams p;
  const nlohmann::json defaults = to_json(p);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("synth: unknown key '" + key + "'");
    (void)value;
  }
  try {
    auto num = [&](const char* key, double& field) {
      if (j.contains(key)) field = j.at(key).get<double>();
    };
    num("alpha1", p.alpha1);
    num("gamma1", p.gamma1);
    num("alpha2", p.alpha2);
    num("gamma2", p.gamma2);
    num("alpha3", p.alpha3);
    num("gamma3", p.gamma3);
    num("delta1", p.delta1);
    num("delta2", p.delta2);
    num("delta3", p.delta3);
    num("eta1", p.eta1);
    num("eta2", p.eta2);
    num("eta3", p.eta3);
    num("eta_d", p.eta_d);
    num("beta", p.beta);
    num("cutoff", p.cutoff);
    num("lj_equilibrium", p.lj_equilibrium);
    num("force_max", p.force_max);
    num("dt", p.dt);
    num("time_unit", p.time_unit);
    num("alpha_g", p.alpha_g);
    num("initial_spread", p.initial_spread);
    if (j.contains("record_times")) p.record_times = j.at("record_times").get<std::vector<double>>();
    if (j.contains("interaction")) {
      p.interaction = interaction_kind_from_name(j.at("interaction").get<std::string>());
    }
    if (j.contains("initial_cells")) p.initial_cells = j.at("initial_cells").get<int>();
    if (j.contains("initial_means")) {
      p.initial_means.clear();
      for (const auto& m : j.at("initial_means")) {
        const auto v = m.get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("synth.initial_means entries must have 3 values");
        p.initial_means.push_back({v[0], v[1], v[2]});
      }
    }
    if (j.contains("spread_is_std")) p.spread_is_std = j.at("spread_is_std").get<bool>();
    if (j.contains("max_cells")) p.max_cells = j.at("max_cells").get<int>();
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  p.validate();
  return p;
}

Vec3 drift_grn(const Vec3& x, const SynthParams& p) {
  const double x1 = x[0] * x[0], x2 = x[1] * x[1], x3 = x[2] * x[2];
  const double denom = 1.0 + p.gamma1 * x1 + p.alpha2 * x2 + p.gamma3 * x3 + p.beta;
  return {(p.alpha1 * x1 + p.beta) / denom - p.delta1 * x[0],
          (p.alpha2 * x2 + p.beta) / denom - p.delta2 * x[1],
          p.alpha3 * x3 / (1.0 + p.alpha3 * x3) - p.delta3 * x[2]};
}

Vec3 interaction_force(const Vec3& xi, const Vec3& xj, InteractionKind kind, const SynthParams& p,
                       std::mt19937_64& rng) {
  const Vec3 diff{xi[0] - xj[0], xi[1] - xj[1], xi[2] - xj[2]};
  const double r = std::sqrt(diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]);
  if (kind == InteractionKind::kNone || r >= p.cutoff) return {0.0, 0.0, 0.0};
  if (kind == InteractionKind::kAttractive) return {2.0 * diff[0], 2.0 * diff[1], 2.0 * diff[2]};
  if (r == 0.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 u{gauss(rng), gauss(rng), gauss(rng)};
    const double n = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    return {p.force_max * u[0] / n, p.force_max * u[1] / n, p.force_max * u[2] / n};
  }
  const double s6 = std::pow(p.lj_equilibrium / r, 6);
  // dPhi/dr for 4 [(d_e/r)^12 - (d_e/r)^6].
  double dphi = 4.0 * (-12.0 * s6 * s6 + 6.0 * s6) / r;
  if (p.force_max > 0.0 && std::abs(dphi) > p.force_max) dphi = std::copysign(p.force_max, dphi);
  return {dphi * diff[0] / r, dphi * diff[1] / r, dphi * diff[2] / r};
}

double division_probability(const Vec3& x, const SynthParams& p) {
  const double x2 = x[1] * x[1];
  return std::min(1.0, p.alpha_g * x2 / (1.0 + x2) * p.dt);
}

namespace {

void clip(Vec3& x) {
  for (double& v : x) v = std::max(v, 0.0);
}

Matrix to_matrix(const std::vector<Vec3>& cells) {
  Matrix m(static_cast<Index>(cells.size()), 3);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (int j = 0; j < 3; ++j) m(static_cast<Index>(i), j) = cells[i][static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace

SynthResult simulate_population(const SynthParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const double init_sd = p.spread_is_std ? p.initial_spread : std::sqrt(p.initial_spread);
  std::vector<Vec3> cells;
  cells.reserve(static_cast<std::size_t>(p.initial_cells));
  const std::size_t groups = p.initial_means.size();
  for (int i = 0; i < p.initial_cells; ++i) {
    // Consecutive blocks, one per mixture component (first blocks take the
    // remainder).
    const std::size_t g = static_cast<std::size_t>(i) * groups / static_cast<std::size_t>(p.initial_cells);
    Vec3 x;
    for (int j = 0; j < 3; ++j) x[static_cast<std::size_t>(j)] = p.initial_means[g][static_cast<std::size_t>(j)] + init_sd * gauss(rng);
    clip(x);
    cells.push_back(x);
  }

  SynthResult res;
  const double sq = std::sqrt(p.dt);
  const Vec3 eta{p.eta1, p.eta2, p.eta3};
  const int last_step = static_cast<int>(std::lround(p.record_times.back() / p.dt));
  std::set<int> record_steps;
  for (double t : p.record_times) record_steps.insert(static_cast<int>(std::lround(t / p.dt)));

  auto record = [&](int step) {
    res.data.times.push_back(step * p.dt / p.time_unit);
    res.data.clouds.push_back(to_matrix(cells));
    res.counts.push_back(static_cast<int>(cells.size()));
  };
  if (record_steps.count(0)) record(0);

  std::vector<Vec3> force;
  for (int step = 1; step <= last_step; ++step) {
    const std::size_t m = cells.size();
    // Mean-field interaction with unit weights and 1/(M-1) normalization.
    force.assign(m, {0.0, 0.0, 0.0});
    if (p.interaction != InteractionKind::kNone && m > 1) {
      const double c = 1.0 / static_cast<double>(m - 1);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
          const Vec3 f = interaction_force(cells[i], cells[j], p.interaction, p, rng);
          for (int k = 0; k < 3; ++k) {
            force[i][static_cast<std::size_t>(k)] += c * f[static_cast<std::size_t>(k)];
            force[j][static_cast<std::size_t>(k)] -= c * f[static_cast<std::size_t>(k)];
          }
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      const Vec3 b = drift_grn(cells[i], p);
      for (std::size_t k = 0; k < 3; ++k) {
        cells[i][k] += p.dt * (b[k] - force[i][k]) + eta[k] * sq * gauss(rng);
      }
      clip(cells[i]);
    }
    // Divisions: a dividing cell is replaced by two daughters, each
    // perturbed independently around the parent.
    if (p.alpha_g > 0.0) {
      std::vector<Vec3> next;
      next.reserve(m + m / 4);
      for (std::size_t i = 0; i < m; ++i) {
        if (uni(rng) < division_probability(cells[i], p)) {
          for (int d = 0; d < 2; ++d) {
            Vec3 y = cells[i];
            for (double& v : y) v += p.eta_d * gauss(rng);
            clip(y);
            next.push_back(y);
          }
        } else {
          next.push_back(cells[i]);
        }
      }
      cells.swap(next);
      if (static_cast<int>(cells.size()) > p.max_cells) {
        throw NumericError("synthetic population exceeded max_cells=" +
                           std::to_string(p.max_cells) + " at step " + std::to_string(step));
      }
    }
    if (record_steps.count(step)) record(step);
  }

  nlohmann::json ratios = nlohmann::json::array();
  for (int c : res.counts) ratios.push_back(static_cast<double>(c) / res.counts.front());
  res.manifest = {{"generator", "grn3"},
                  {"params", to_json(p)},
                  {"seed", p.seed},
                  {"interaction", interaction_kind_name(p.interaction)},
                  {"record_times", p.record_times},
                  {"times", res.data.times},
                  {"counts", res.counts},
                  {"mass_ratios", ratios}};
  return res;
}

CalibrationResult calibrate_division_rate(SynthParams p, double target_ratio, int seeds, double lo,
                                          double hi, int iterations) {
  if (!(target_ratio >= 1.0)) throw InvalidArgument("calibration target ratio must be >= 1");
  if (seeds < 1) throw InvalidArgument("calibration needs at least one seed");
  CalibrationResult out;
  const std::uint64_t base_seed = p.seed;
  auto evaluate = [&](double alpha_g, std::vector<double>* mean_ratios) {
    p.alpha_g = alpha_g;
    std::vector<double> acc;
    for (int s = 0; s < seeds; ++s) {
      p.seed = base_seed + static_cast<std::uint64_t>(s);
      const SynthResult r = simulate_population(p);
      if (acc.empty()) acc.assign(r.counts.size(), 0.0);
      for (std::size_t k = 0; k < r.counts.size(); ++k) {
        acc[k] += static_cast<double>(r.counts[k]) / r.counts.front() / seeds;
      }
    }
    ++out.evaluations;
    if (mean_ratios) *mean_ratios = acc;
    return acc.back();
  };
  for (int it = 0; it < iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (evaluate(mid, nullptr) < target_ratio) lo = mid;
    else hi = mid;
  }
  out.alpha_g = 0.5 * (lo + hi);
  out.achieved_ratio = evaluate(out.alpha_g, &out.mean_ratios);
  return out;
}

}  // namespace umfsb
