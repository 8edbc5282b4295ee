#include "umfsb/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "umfsb/error.hpp"

namespace umfsb::ot {

Matrix sq_euclidean_cost(const Matrix& x, const Matrix& y) {
  if (x.cols() != y.cols()) throw ShapeError("cost: point dimensions differ");
  Matrix c(x.rows(), y.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  }
  return c;
}

Matrix euclidean_cost(const Matrix& x, const Matrix& y) {
  return sq_euclidean_cost(x, y).cwiseSqrt();
}

// ---- network simplex ------------------------------------------------------
//
// Primal network simplex on the complete bipartite graph (sources 0..n-1,
// sinks n..n+m-1) with an artificial root, spanning-tree bookkeeping by
// parent/thread/successor counts and block-search pricing.

namespace {

class NetworkSimplex {
 public:
  NetworkSimplex(const Vector& supply, const Vector& demand, const Matrix& cost)
      : n_(static_cast<int>(supply.size())),
        m_(static_cast<int>(demand.size())),
        node_num_(n_ + m_),
        arc_num_(static_cast<long>(n_) * m_),
        cost_(cost) {
    const int nodes = node_num_ + 1;
    const long all_arcs = arc_num_ + node_num_;
    supply_.resize(nodes);
    for (int i = 0; i < n_; ++i) supply_[i] = supply(i);
    for (int j = 0; j < m_; ++j) supply_[n_ + j] = -demand(j);
    parent_.assign(nodes, 0);
    pred_.assign(nodes, 0);
    thread_.assign(nodes, 0);
    rev_thread_.assign(nodes, 0);
    succ_num_.assign(nodes, 0);
    last_succ_.assign(nodes, 0);
    pred_dir_.assign(nodes, 0);
    pi_.assign(nodes, 0.0);
    flow_.assign(all_arcs, 0.0);
    state_.assign(all_arcs, kLower);
    art_source_.assign(node_num_, 0);
    art_target_.assign(node_num_, 0);
    art_cost_.assign(node_num_, 0.0);

    double max_cost = 0.0;
    for (Index k = 0; k < cost_.size(); ++k) max_cost = std::max(max_cost, std::abs(cost_.data()[k]));
    const double art = (max_cost + 1.0) * node_num_;
    tolerance_ = 1e-14 * art;
    block_size_ = std::max<long>(10, static_cast<long>(std::ceil(std::sqrt(static_cast<double>(arc_num_)))));

    root_ = node_num_;
    parent_[root_] = -1;
    pred_[root_] = -1;
    thread_[root_] = 0;
    rev_thread_[0] = root_;
    succ_num_[root_] = nodes;
    last_succ_[root_] = root_ - 1;
    pi_[root_] = 0.0;
    for (int u = 0; u < node_num_; ++u) {
      const long e = arc_num_ + u;
      parent_[u] = root_;
      pred_[u] = e;
      thread_[u] = u + 1;
      rev_thread_[u + 1] = u;
      succ_num_[u] = 1;
      last_succ_[u] = u;
      state_[e] = kTree;
      if (supply_[u] >= 0) {
        pred_dir_[u] = kUp;
        pi_[u] = 0.0;
        art_source_[u] = u;
        art_target_[u] = root_;
        flow_[e] = supply_[u];
        art_cost_[u] = 0.0;
      } else {
        pred_dir_[u] = kDown;
        pi_[u] = art;
        art_source_[u] = root_;
        art_target_[u] = u;
        flow_[e] = -supply_[u];
        art_cost_[u] = art;
      }
    }
  }

  long run() {
    long pivots = 0;
    while (find_entering_arc()) {
      find_join_node();
      find_leaving_arc();
      change_flow();
      update_tree_structure();
      update_potential();
      ++pivots;
    }
    return pivots;
  }

  double total_cost() const {
    double c = 0.0;
    for (long e = 0; e < arc_num_; ++e) {
      if (flow_[e] != 0.0) c += flow_[e] * cost_.data()[e];
    }
    return c;
  }

  Matrix plan() const {
    Matrix p = Matrix::Zero(n_, m_);
    for (long e = 0; e < arc_num_; ++e) p.data()[e] = flow_[e];
    return p;
  }

 private:
  static constexpr int kUp = 1, kDown = -1;
  static constexpr signed char kTree = 0, kLower = 1;

  int source(long e) const {
    return e < arc_num_ ? static_cast<int>(e / m_) : art_source_[e - arc_num_];
  }
  int target(long e) const {
    return e < arc_num_ ? n_ + static_cast<int>(e % m_) : art_target_[e - arc_num_];
  }
  double cost(long e) const { return e < arc_num_ ? cost_.data()[e] : art_cost_[e - arc_num_]; }

  double reduced(long e) const {
    return state_[e] * (cost_.data()[e] + pi_[e / m_] - pi_[n_ + e % m_]);
  }

  bool find_entering_arc() {
    double best = -tolerance_;
    long cnt = block_size_;
    long e = next_arc_;
    in_arc_ = -1;
    for (long k = 0; k < arc_num_; ++k) {
      const double c = reduced(e);
      if (c < best) {
        best = c;
        in_arc_ = e;
      }
      if (++e == arc_num_) e = 0;
      if (--cnt == 0) {
        if (in_arc_ >= 0) break;
        cnt = block_size_;
      }
    }
    next_arc_ = e;
    return in_arc_ >= 0;
  }

  void find_join_node() {
    int u = source(in_arc_), v = target(in_arc_);
    while (u != v) {
      if (succ_num_[u] < succ_num_[v]) {
        u = parent_[u];
      } else {
        v = parent_[v];
      }
    }
    join_ = u;
  }

  void find_leaving_arc() {
    // Entering arcs are always at their lower bound (capacities are infinite).
    first_ = source(in_arc_);
    second_ = target(in_arc_);
    delta_ = std::numeric_limits<double>::infinity();
    int result = 0;
    for (int u = first_; u != join_; u = parent_[u]) {
      if (pred_dir_[u] == kUp && flow_[pred_[u]] < delta_) {
        delta_ = flow_[pred_[u]];
        u_out_ = u;
        result = 1;
      }
    }
    for (int u = second_; u != join_; u = parent_[u]) {
      if (pred_dir_[u] == kDown && flow_[pred_[u]] <= delta_) {
        delta_ = flow_[pred_[u]];
        u_out_ = u;
        result = 2;
      }
    }
    if (result == 0) throw NumericError("exact transport: unbounded cycle");
    if (result == 1) {
      u_in_ = first_;
      v_in_ = second_;
    } else {
      u_in_ = second_;
      v_in_ = first_;
    }
  }

  void change_flow() {
    if (delta_ > 0) {
      flow_[in_arc_] += delta_;
      for (int u = source(in_arc_); u != join_; u = parent_[u]) flow_[pred_[u]] -= pred_dir_[u] * delta_;
      for (int u = target(in_arc_); u != join_; u = parent_[u]) flow_[pred_[u]] += pred_dir_[u] * delta_;
    }
    state_[in_arc_] = kTree;
    state_[pred_[u_out_]] = kLower;
    flow_[pred_[u_out_]] = 0.0;
  }

  void update_tree_structure() {
    const int old_rev_thread = rev_thread_[u_out_];
    const int old_succ_num = succ_num_[u_out_];
    const int old_last_succ = last_succ_[u_out_];
    v_out_ = parent_[u_out_];

    if (u_in_ == u_out_) {
      parent_[u_in_] = v_in_;
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kUp : kDown;
      if (thread_[v_in_] != u_out_) {
        int after = thread_[old_last_succ];
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
        after = thread_[v_in_];
        thread_[v_in_] = u_out_;
        rev_thread_[u_out_] = v_in_;
        thread_[old_last_succ] = after;
        rev_thread_[after] = old_last_succ;
      }
    } else {
      const int thread_continue = old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];
      int stem = u_in_;
      int par_stem = v_in_;
      int last = last_succ_[u_in_];
      int after = thread_[last];
      thread_[v_in_] = u_in_;
      dirty_revs_.clear();
      dirty_revs_.push_back(v_in_);
      while (stem != u_out_) {
        const int next_stem = parent_[stem];
        thread_[last] = next_stem;
        dirty_revs_.push_back(last);
        const int before = rev_thread_[stem];
        thread_[before] = after;
        rev_thread_[after] = before;
        parent_[stem] = par_stem;
        par_stem = stem;
        stem = next_stem;
        last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem] : last_succ_[stem];
        after = thread_[last];
      }
      parent_[u_out_] = par_stem;
      thread_[last] = thread_continue;
      rev_thread_[thread_continue] = last;
      last_succ_[u_out_] = last;
      if (old_rev_thread != v_in_) {
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
      }
      for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

      int tmp_sc = 0;
      const int tmp_ls = last_succ_[u_out_];
      for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
        pred_[u] = pred_[p];
        pred_dir_[u] = -pred_dir_[p];
        tmp_sc += succ_num_[u] - succ_num_[p];
        succ_num_[u] = tmp_sc;
        last_succ_[p] = tmp_ls;
      }
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kUp : kDown;
      succ_num_[u_in_] = old_succ_num;
    }

    const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
    const int last_succ_out = last_succ_[u_out_];
    for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) last_succ_[u] = last_succ_out;
    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
        last_succ_[u] = old_rev_thread;
      }
    } else if (last_succ_out != old_last_succ) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
        last_succ_[u] = last_succ_out;
      }
    }
    for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
    for (int u = v_out_; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
  }

  void update_potential() {
    const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost(in_arc_);
    const int end = thread_[last_succ_[u_in_]];
    for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
  }

  int n_, m_, node_num_;
  long arc_num_;
  const Matrix& cost_;
  std::vector<double> supply_;
  std::vector<int> parent_, thread_, rev_thread_, succ_num_, last_succ_, pred_dir_;
  std::vector<long> pred_;
  std::vector<double> pi_, flow_;
  std::vector<signed char> state_;
  std::vector<int> art_source_, art_target_;
  std::vector<double> art_cost_;
  std::vector<int> dirty_revs_;
  double tolerance_ = 0.0;
  long block_size_ = 10;
  long next_arc_ = 0;
  int root_ = 0;
  long in_arc_ = -1;
  int join_ = 0, u_in_ = 0, v_in_ = 0, u_out_ = 0, v_out_ = 0, first_ = 0, second_ = 0;
  double delta_ = 0.0;
};

Vector normalized(const Vector& w, const char* what) {
  if (w.size() == 0) throw InvalidArgument(std::string(what) + ": empty weight vector");
  if ((w.array() < 0).any() || !w.allFinite()) {
    throw InvalidArgument(std::string(what) + ": weights must be finite and nonnegative");
  }
  const double total = w.sum();
  if (!(total > 0)) throw InvalidArgument(std::string(what) + ": zero total weight");
  return w / total;
}

}  // namespace

ExactResult exact_transport(const Vector& a, const Vector& b, const Matrix& cost, bool want_plan) {
  if (cost.rows() != a.size() || cost.cols() != b.size()) {
    throw ShapeError("exact_transport: cost is " + std::to_string(cost.rows()) + "x" +
                     std::to_string(cost.cols()) + " but masses have sizes " +
                     std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  Vector an = normalized(a, "exact_transport"), bn = normalized(b, "exact_transport");
  // Make the two totals agree exactly so the balanced problem is feasible.
  bn(bn.size() - 1) += an.sum() - bn.sum();
  if (bn(bn.size() - 1) < 0) bn(bn.size() - 1) = 0;
  NetworkSimplex ns(an, bn, cost);
  ExactResult r;
  r.pivots = ns.run();
  r.cost = ns.total_cost();
  if (want_plan) r.plan = ns.plan();
  return r;
}

namespace {

void subsample(Matrix& x, Vector& w, Index max_points, std::mt19937_64& rng) {
  if (x.rows() <= max_points) return;
  std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(max_points));
  std::sort(idx.begin(), idx.end());
  Matrix xs(max_points, x.cols());
  Vector ws(max_points);
  for (Index k = 0; k < max_points; ++k) {
    xs.row(k) = x.row(idx[static_cast<std::size_t>(k)]);
    ws(k) = w(idx[static_cast<std::size_t>(k)]);
  }
  x = std::move(xs);
  w = std::move(ws);
}

}  // namespace

double wasserstein1(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b,
                    std::uint64_t seed, Index max_points) {
  if (x.rows() == 0 || y.rows() == 0) throw InvalidArgument("wasserstein1: empty cloud");
  normalized(a, "wasserstein1");
  normalized(b, "wasserstein1");
  // Solve in a canonical orientation so that W1(x, y) == W1(y, x) bitwise.
  auto less = [](const Matrix& p, const Vector& wp, const Matrix& q, const Vector& wq) {
    if (p.rows() != q.rows()) return p.rows() < q.rows();
    if (p.cols() != q.cols()) return p.cols() < q.cols();
    const auto lex = [](const double* u, const double* v, Index len) {
      return std::lexicographical_compare(u, u + len, v, v + len);
    };
    if (lex(p.data(), q.data(), p.size())) return true;
    if (lex(q.data(), p.data(), p.size())) return false;
    return lex(wp.data(), wq.data(), wp.size());
  };
  const bool swap = less(y, b, x, a);
  Matrix xs = swap ? y : x, ys = swap ? x : y;
  Vector as = swap ? b : a, bs = swap ? a : b;
  std::mt19937_64 rng_x(seed), rng_y(seed + 1);
  subsample(xs, as, max_points, rng_x);
  subsample(ys, bs, max_points, rng_y);
  return exact_transport(as, bs, euclidean_cost(xs, ys)).cost;
}

double wasserstein2(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b) {
  return std::sqrt(std::max(0.0, exact_transport(a, b, sq_euclidean_cost(x, y)).cost));
}

std::vector<std::pair<Index, Index>> sample_exact_plan(const Matrix& x, const Matrix& y, int count,
                                                       std::mt19937_64& rng) {
  const Vector a = Vector::Ones(x.rows()), b = Vector::Ones(y.rows());
  ExactResult r = exact_transport(a, b, sq_euclidean_cost(x, y), true);
  std::discrete_distribution<long> pick(r.plan.data(), r.plan.data() + r.plan.size());
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const long e = pick(rng);
    pairs.emplace_back(e / y.rows(), e % y.rows());
  }
  return pairs;
}

// ---- Sinkhorn -----------------------------------------------------------------

namespace {

// out_i = -eps * log sum_j exp(log_w_j + (h_j - C_ij) / eps)
Vector soft_min(const Matrix& cost, const Vector& log_w, const Vector& h, double eps) {
  const Index n = cost.rows(), m = cost.cols();
  const double inv = 1.0 / eps;
  Vector out(n);
  std::vector<double> shift(static_cast<std::size_t>(m)), row(static_cast<std::size_t>(m));
  for (Index j = 0; j < m; ++j) shift[static_cast<std::size_t>(j)] = log_w(j) + h(j) * inv;
  for (Index i = 0; i < n; ++i) {
    const double* c = cost.data() + i * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < m; ++j) {
      const double r = shift[static_cast<std::size_t>(j)] - c[j] * inv;
      row[static_cast<std::size_t>(j)] = r;
      mx = r > mx ? r : mx;
    }
    double sum = 0.0;
    for (Index j = 0; j < m; ++j) sum += std::exp(row[static_cast<std::size_t>(j)] - mx);
    out(i) = -eps * (mx + std::log(sum));
  }
  return out;
}

Vector safe_log(const Vector& w) {
  Vector out(w.size());
  for (Index i = 0; i < w.size(); ++i) {
    out(i) = w(i) > 0 ? std::log(w(i)) : -std::numeric_limits<double>::infinity();
  }
  return out;
}

std::vector<double> epsilon_schedule(const Matrix& cost, const SinkhornConfig& cfg) {
  if (!(cfg.blur > 0)) throw InvalidArgument("sinkhorn: blur must be positive");
  if (!(cfg.scaling > 0 && cfg.scaling < 1)) throw InvalidArgument("sinkhorn: scaling must lie in (0, 1)");
  const double target = cfg.blur * cfg.blur;
  const double diameter2 = cost.size() ? cost.maxCoeff() : 0.0;
  std::vector<double> eps;
  for (double e = std::max(diameter2, target); e > target; e *= cfg.scaling) eps.push_back(e);
  eps.push_back(target);
  return eps;
}

void check_result(const SinkhornResult& r, const SinkhornConfig& cfg) {
  if (!r.converged && cfg.strict) {
    throw NumericError("sinkhorn did not converge in " + std::to_string(cfg.max_iter) +
                       " iterations; marginal violation " + std::to_string(r.marginal_error));
  }
}

}  // namespace

namespace {

// Stabilized scaling iterations. The current plan is
//   pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps) u_i v_j
// with the Gibbs kernel built from the absorbed log potentials (f, g); the
// scalings (u, v) are folded back into (f, g) at every change of eps and
// whenever they drift far from 1, so the kernel never under/overflows where
// the plan has mass. A log-domain update is used as a fallback.
Matrix gibbs_kernel(const Matrix& cost, const Vector& f, const Vector& g, double eps) {
  const double inv = 1.0 / eps;
  Matrix k(cost.rows(), cost.cols());
  for (Index i = 0; i < cost.rows(); ++i) {
    for (Index j = 0; j < cost.cols(); ++j) k(i, j) = std::exp((f(i) + g(j) - cost(i, j)) * inv);
  }
  return k;
}

// 1 / s on the support of w (entries outside it are left at 1); false when a
// needed entry is zero or non-finite.
bool reciprocal_on_support(const Vector& s, const Vector& w, Vector& out) {
  out.resize(s.size());
  for (Index i = 0; i < s.size(); ++i) {
    if (w(i) == 0) {
      out(i) = 1.0;
      continue;
    }
    if (!(s(i) > 0.0) || !std::isfinite(s(i))) return false;
    out(i) = 1.0 / s(i);
  }
  return true;
}

bool drifted(const Vector& s) {
  constexpr double kLimit = 1e30;
  return s.maxCoeff() > kLimit || s.minCoeff() < 1.0 / kLimit;
}

void absorb(Vector& f, Vector& u, double eps) {
  f.array() += eps * u.array().log();
  u.setOnes();
}

double row_violation(const Vector& a, const Vector& u, const Vector& row_sum) {
  double err = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    if (a(i) != 0) err += a(i) * std::abs(u(i) * row_sum(i) - 1.0);
  }
  return err;
}

SinkhornResult sinkhorn_on_cost(const Matrix& cost, const Vector& a, const Vector& b,
                                const SinkhornConfig& cfg) {
  const Vector la = safe_log(a), lb = safe_log(b);
  const auto schedule = epsilon_schedule(cost, cfg);
  const Matrix cost_t = cost.transpose();
  SinkhornResult r;
  r.f = Vector::Zero(a.size());
  r.g = Vector::Zero(b.size());
  Vector u = Vector::Ones(a.size()), v = Vector::Ones(b.size()), nu, nv;
  double eps = schedule.front();
  Matrix k;
  auto log_step = [&] {
    absorb(r.f, u, eps);
    absorb(r.g, v, eps);
    r.f = soft_min(cost, lb, r.g, eps);
    r.g = soft_min(cost_t, la, r.f, eps);
    k = gibbs_kernel(cost, r.f, r.g, eps);
  };
  // One scaling sweep (u then v); false when it had to fall back.
  auto sweep = [&](const Vector& kv) {
    if (reciprocal_on_support(kv, a, nu)) {
      const Vector ku = k.transpose() * a.cwiseProduct(nu);
      if (reciprocal_on_support(ku, b, nv)) {
        u = nu;
        v = nv;
        if (drifted(u) || drifted(v)) {
          absorb(r.f, u, eps);
          absorb(r.g, v, eps);
          k = gibbs_kernel(cost, r.f, r.g, eps);
        }
        return;
      }
    }
    log_step();
  };
  // Annealing: one sweep per eps level.
  for (std::size_t lvl = 0; lvl + 1 < schedule.size() && r.iterations < cfg.max_iter;
       ++lvl, ++r.iterations) {
    eps = schedule[lvl];
    k = gibbs_kernel(cost, r.f, r.g, eps);
    sweep(k * b.cwiseProduct(v));
    absorb(r.f, u, eps);
    absorb(r.g, v, eps);
  }
  eps = schedule.back();
  k = gibbs_kernel(cost, r.f, r.g, eps);
  while (true) {
    const Vector kv = k * b.cwiseProduct(v);
    r.marginal_error = row_violation(a, u, kv);
    if (r.marginal_error <= cfg.tolerance) {
      r.converged = true;
      break;
    }
    if (r.iterations >= cfg.max_iter) break;
    sweep(kv);
    ++r.iterations;
  }
  absorb(r.f, u, eps);
  absorb(r.g, v, eps);
  r.value = a.dot(r.f) + b.dot(r.g);
  return r;
}

}  // namespace

SinkhornResult sinkhorn(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b,
                        const SinkhornConfig& cfg) {
  SinkhornResult r = sinkhorn_on_cost(sq_euclidean_cost(x, y), normalized(a, "sinkhorn"),
                                      normalized(b, "sinkhorn"), cfg);
  check_result(r, cfg);
  return r;
}

namespace {

// Symmetric problem with averaged updates f <- (f + softmin(f)) / 2, in
// scaling form u <- sqrt(u / K (a u)).
SinkhornResult symmetric_on_cost(const Matrix& cost, const Vector& a, const SinkhornConfig& cfg) {
  const Vector la = safe_log(a);
  const auto schedule = epsilon_schedule(cost, cfg);
  SinkhornResult r;
  r.f = Vector::Zero(a.size());
  Vector u = Vector::Ones(a.size()), inv;
  double eps = schedule.front();
  Matrix k;
  auto sweep = [&](const Vector& ku) {
    if (reciprocal_on_support(ku, a, inv)) {
      u = (u.cwiseProduct(inv)).cwiseSqrt();
      if (drifted(u)) {
        absorb(r.f, u, eps);
        k = gibbs_kernel(cost, r.f, r.f, eps);
      }
      return;
    }
    absorb(r.f, u, eps);
    r.f = 0.5 * (r.f + soft_min(cost, la, r.f, eps));
    k = gibbs_kernel(cost, r.f, r.f, eps);
  };
  for (std::size_t lvl = 0; lvl + 1 < schedule.size() && r.iterations < cfg.max_iter;
       ++lvl, ++r.iterations) {
    eps = schedule[lvl];
    k = gibbs_kernel(cost, r.f, r.f, eps);
    sweep(k * a.cwiseProduct(u));
    absorb(r.f, u, eps);
  }
  eps = schedule.back();
  k = gibbs_kernel(cost, r.f, r.f, eps);
  while (true) {
    const Vector ku = k * a.cwiseProduct(u);
    r.marginal_error = row_violation(a, u, ku);
    if (r.marginal_error <= cfg.tolerance) {
      r.converged = true;
      break;
    }
    if (r.iterations >= cfg.max_iter) break;
    sweep(ku);
    ++r.iterations;
  }
  absorb(r.f, u, eps);
  r.g = r.f;
  r.value = 2.0 * a.dot(r.f);
  return r;
}

}  // namespace

SinkhornResult sinkhorn_symmetric(const Matrix& x, const Vector& a, const SinkhornConfig& cfg) {
  SinkhornResult r = symmetric_on_cost(sq_euclidean_cost(x, x), normalized(a, "sinkhorn"), cfg);
  check_result(r, cfg);
  return r;
}

double sinkhorn_divergence(const Matrix& x, const Vector& a, const Matrix& y, const Vector& b,
                           const SinkhornConfig& cfg) {
  return sinkhorn(x, a, y, b, cfg).value - 0.5 * sinkhorn_symmetric(x, a, cfg).value -
         0.5 * sinkhorn_symmetric(y, b, cfg).value;
}

Tensor sinkhorn_divergence(const Tensor& x, const Tensor& a, const Matrix& y, const Vector& b,
                           const SinkhornConfig& cfg, const double* target_self) {
  if (a.cols() != 1 || a.rows() != x.rows()) {
    throw ShapeError("sinkhorn_divergence: weights " + ad::shape_string(a) + " do not match points " +
                     ad::shape_string(x));
  }
  if (x.cols() != y.cols()) throw ShapeError("sinkhorn_divergence: point dimensions differ");
  const Matrix& xv = x.value();
  const Vector av = a.value().col(0);
  if ((av.array() < 0).any() || std::abs(av.sum() - 1.0) > 1e-9) {
    throw InvalidArgument("sinkhorn_divergence: predicted weights must lie on the simplex");
  }
  const Vector bn = normalized(b, "sinkhorn");
  const Matrix cxy = sq_euclidean_cost(xv, y);
  const Matrix cxx = sq_euclidean_cost(xv, xv);
  SinkhornResult ab = sinkhorn_on_cost(cxy, av, bn, cfg);
  SinkhornResult aa = symmetric_on_cost(cxx, av, cfg);
  check_result(ab, cfg);
  check_result(aa, cfg);
  const double bb = target_self ? *target_self : sinkhorn_symmetric(y, bn, cfg).value;
  const double value = ab.value - 0.5 * aa.value - 0.5 * bb;
  const double eps = cfg.blur * cfg.blur;

  // Transport plans at the converged potentials.
  const Index n = xv.rows(), m = y.rows();
  Matrix pab(n, m), paa(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) pab(i, j) = av(i) * bn(j) * std::exp((ab.f(i) + ab.g(j) - cxy(i, j)) / eps);
    for (Index j = 0; j < n; ++j) paa(i, j) = av(i) * av(j) * std::exp((aa.f(i) + aa.f(j) - cxx(i, j)) / eps);
  }
  // dS/dx_i = 2 sum_j pab_ij (x_i - y_j) - 2 sum_j paa_ij (x_i - x_j)
  Matrix gx = 2.0 * (pab.rowwise().sum().asDiagonal() * xv - pab * y) -
              2.0 * (paa.rowwise().sum().asDiagonal() * xv - paa * xv);
  Matrix ga = (ab.f - aa.f);
  auto xn = x.node(), an = a.node();
  return Tensor::make(Matrix::Constant(1, 1, value), {x, a},
                      [xn, an, gx = std::move(gx), ga = std::move(ga)](ad::Node& self) {
                        const double s = self.grad(0, 0);
                        if (xn->requires_grad) {
                          if (xn->grad.size() == 0) xn->grad = Matrix::Zero(gx.rows(), gx.cols());
                          xn->grad += s * gx;
                        }
                        if (an->requires_grad) {
                          if (an->grad.size() == 0) an->grad = Matrix::Zero(ga.rows(), 1);
                          an->grad += s * ga;
                        }
                      });
}

std::vector<std::pair<Index, Index>> sample_entropic_plan(const Matrix& x, const Matrix& y,
                                                          int count, double blur,
                                                          std::mt19937_64& rng) {
  const Vector a = Vector::Constant(x.rows(), 1.0 / static_cast<double>(x.rows()));
  const Vector b = Vector::Constant(y.rows(), 1.0 / static_cast<double>(y.rows()));
  SinkhornConfig cfg;
  cfg.blur = blur;
  cfg.strict = false;
  const SinkhornResult r = sinkhorn(x, a, y, b, cfg);
  const double eps = blur * blur;
  const Matrix cost = sq_euclidean_cost(x, y);
  std::vector<double> plan(static_cast<std::size_t>(cost.size()));
  for (Index i = 0; i < cost.rows(); ++i) {
    for (Index j = 0; j < cost.cols(); ++j) {
      plan[static_cast<std::size_t>(i * cost.cols() + j)] =
          a(i) * b(j) * std::exp((r.f(i) + r.g(j) - cost(i, j)) / eps);
    }
  }
  std::discrete_distribution<long> pick(plan.begin(), plan.end());
  std::vector<std::pair<Index, Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const long e = pick(rng);
    pairs.emplace_back(e / y.rows(), e % y.rows());
  }
  return pairs;
}

}  // namespace umfsb::ot
