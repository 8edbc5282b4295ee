#include "umfsb/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "umfsb/error.hpp"
#include "umfsb/ot.hpp"

namespace umfsb {

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

double w1(const Matrix& x, const Eigen::VectorXd& a, const Matrix& y, const Eigen::VectorXd& b,
          std::uint64_t seed, Index max_points) {
  if (x.rows() != a.size() || y.rows() != b.size()) {
    throw InvalidArgument("w1: weight count does not match point count");
  }
  if (x.cols() != y.cols()) {
    throw InvalidArgument("w1: dimension mismatch " + std::to_string(x.cols()) + " vs " +
                          std::to_string(y.cols()));
  }
  return ot::wasserstein1(x, a, y, b, seed, max_points);
}

double tmv(double total_mass, double n_k, double n_0) { return std::abs(total_mass - n_k / n_0); }

double tmv(const Eigen::VectorXd& masses, double n_k, double n_0) { return tmv(masses.sum(), n_k, n_0); }

Eigen::VectorXd row_cosine(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument("row_cosine: shape mismatch");
  Eigen::VectorXd out(a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    const double na = a.row(i).norm(), nb = b.row(i).norm();
    out(i) = (na > 0.0 && nb > 0.0) ? a.row(i).dot(b.row(i)) / (na * nb) : 0.0;
  }
  return out;
}

double morans_i(const Matrix& positions, const Eigen::VectorXd& field, int k) {
  const Index n = positions.rows();
  if (field.size() != n) throw InvalidArgument("morans_i: field size does not match point count");
  if (k < 1 || n <= k) {
    throw InvalidArgument("morans_i: need more than k=" + std::to_string(k) + " points, got " +
                          std::to_string(n));
  }
  const Eigen::VectorXd z = field.array() - field.mean();
  const double denom = z.squaredNorm();
  if (!(denom > 1e-24 * static_cast<double>(n))) {
    throw NumericError("Moran's I undefined: the field is constant (zero variance)");
  }
  // Row-normalized kNN weights: each row sums to 1, so sum of weights = n and
  // I = sum_i z_i * mean_{j in kNN(i)} z_j / sum_i z_i^2.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  double num = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      dist[static_cast<std::size_t>(j)] = j == i ? std::numeric_limits<double>::infinity()
                                                 : (positions.row(i) - positions.row(j)).squaredNorm();
    }
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index p, Index q) {
      const double dp = dist[static_cast<std::size_t>(p)], dq = dist[static_cast<std::size_t>(q)];
      return dp < dq || (dp == dq && p < q);
    });
    double acc = 0.0;
    for (int r = 0; r < k; ++r) acc += z(order[static_cast<std::size_t>(r)]);
    num += z(i) * acc / k;
  }
  return num / denom;
}

CorrelationResult drift_force_correlation(const ParticleState& s, const ModelBundle& m, int k) {
  if (s.size() < 10) throw InvalidArgument("drift_force_correlation: need at least 10 particles");
  const ParticleState d = s.detached();
  CorrelationResult r;
  r.drift = recover_drift(m, d.positions, time_column(d.size(), d.time)).value();
  r.force = interaction_drift_values(m, d);
  r.cosine = row_cosine(r.drift, r.force);
  r.moran_i = morans_i(d.positions.value(), r.cosine, k);
  return r;
}

const TimeMetrics& EvalReport::at(std::size_t index) const {
  for (const auto& t : per_time) {
    if (t.index == index) return t;
  }
  throw InvalidArgument("EvalReport: no metrics for snapshot " + std::to_string(index));
}

EvalReport evaluate(const ModelBundle& m, const SnapshotDataset& data, const EvalOptions& opt) {
  data.validate();
  if (m.dim != data.dim()) {
    throw DataError("model dimension " + std::to_string(m.dim) + " does not match data dimension " +
                    std::to_string(data.dim()));
  }
  if (opt.seeds < 1) throw ConfigError("eval: seeds must be >= 1");
  EvalReport rep;
  for (std::size_t k = 1; k < data.size(); ++k) {
    TimeMetrics tm;
    tm.index = k;
    tm.time = data.times[k];
    rep.per_time.push_back(tm);
  }
  const double n0 = data.count(0);
  const std::size_t seeds = static_cast<std::size_t>(opt.seeds);
  struct SeedResult {
    RunSummary run;
    std::vector<double> w1, tmv;
    bool has_moran = false;
    std::exception_ptr error;
  };
  std::vector<SeedResult> results(seeds);
  // Each seed owns its rng stream and result slot, so seeds can run on
  // separate threads with results identical to the sequential order.
  auto run_seed = [&](std::size_t r) {
    SeedResult& out = results[r];
    try {
      const auto start = std::chrono::steady_clock::now();
      out.run.seed = opt.base_seed + static_cast<std::uint64_t>(r);
      std::mt19937_64 rng(out.run.seed);
      ParticleState s = ParticleState::at(data.clouds[0], data.times[0]);
      for (std::size_t k = 1; k < data.size(); ++k) {
        s = integrate(s, m, opt.integrator, data.times[k], rng, false).back();
        check_finite(s, "evaluate");
        const WeightedCloud c = empirical_measure(s);
        const Eigen::VectorXd b = Eigen::VectorXd::Ones(data.clouds[k].rows());
        out.w1.push_back(w1(c.points, c.normalized, data.clouds[k], b, out.run.seed, opt.w1_max_points));
        out.tmv.push_back(tmv(c.total_mass, data.count(k), n0));
      }
      out.run.moran_i = std::numeric_limits<double>::quiet_NaN();
      if (opt.moran && s.size() > opt.moran_k) {
        try {
          out.run.moran_i = drift_force_correlation(s, m, opt.moran_k).moran_i;
          out.has_moran = true;
        } catch (const NumericError&) {
          // constant field: recorded as undefined
        }
      }
      out.run.runtime_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    } catch (...) {
      out.error = std::current_exception();
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(opt.threads, 1)), 1, seeds);
  if (workers == 1) {
    for (std::size_t r = 0; r < seeds; ++r) run_seed(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t r = next++; r < seeds; r = next++) run_seed(r);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<double> morans;
  for (auto& res : results) {
    if (res.error) std::rethrow_exception(res.error);
    for (std::size_t k = 0; k < res.w1.size(); ++k) {
      rep.per_time[k].w1.push_back(res.w1[k]);
      rep.per_time[k].tmv.push_back(res.tmv[k]);
    }
    if (res.has_moran) morans.push_back(res.run.moran_i);
    rep.runs.push_back(res.run);
  }
  for (auto& tm : rep.per_time) {
    std::tie(tm.w1_mean, tm.w1_std) = mean_std(tm.w1);
    std::tie(tm.tmv_mean, tm.tmv_std) = mean_std(tm.tmv);
  }
  std::tie(rep.moran_mean, rep.moran_std) = mean_std(morans);
  return rep;
}

void write_eval_csv(std::ostream& out, const EvalReport& r) {
  out << "index,t,W1_mean,W1_std,TMV_mean,TMV_std\n";
  out.precision(10);
  for (const auto& t : r.per_time) {
    out << t.index << ',' << t.time << ',' << t.w1_mean << ',' << t.w1_std << ',' << t.tmv_mean << ','
        << t.tmv_std << '\n';
  }
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json times = nlohmann::json::array();
  for (const auto& t : r.per_time) {
    times.push_back({{"index", t.index},
                     {"t", t.time},
                     {"w1", t.w1},
                     {"tmv", t.tmv},
                     {"w1_mean", t.w1_mean},
                     {"w1_std", t.w1_std},
                     {"tmv_mean", t.tmv_mean},
                     {"tmv_std", t.tmv_std}});
  }
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"seed", run.seed}, {"moran_i", finite_or_null(run.moran_i)}, {"runtime_ms", run.runtime_ms}});
  }
  return {{"times", times},
          {"runs", runs},
          {"moran_i_mean", finite_or_null(r.moran_mean)},
          {"moran_i_std", finite_or_null(r.moran_std)}};
}

HoldoutResult holdout_eval(const SnapshotDataset& data, std::size_t index, const TrainConfig& cfg,
                           const NetConfig& net, const DiffusionConfig& diff,
                           const InteractionConfig& inter, const EvalOptions& opt,
                           const EpochCallback& cb) {
  data.validate();
  if (index == 0 || index + 1 >= data.size()) {
    throw InvalidArgument("holdout index must lie strictly between 0 and " + std::to_string(data.size() - 1) +
                          ", got " + std::to_string(index));
  }
  const SnapshotDataset train_data = data.without(index);
  TrainState st;
  st.model = make_model(train_data, cfg, net, diff, inter);
  train_all(train_data, st, cfg, cb);
  HoldoutResult out;
  out.index = index;
  out.time = data.times[index];
  EvalOptions eo = opt;
  eo.moran = false;
  out.report = evaluate(st.model, data, eo);
  const TimeMetrics& tm = out.report.at(index);
  out.w1_mean = tm.w1_mean;
  out.w1_std = tm.w1_std;
  return out;
}

}  // namespace umfsb
