#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace umfsb::testing {

Matrix finite_difference(Tensor& param, const std::function<double()>& f, double step) {
  Matrix& w = param.mutable_value();
  Matrix g(w.rows(), w.cols());
  for (ad::Index i = 0; i < w.size(); ++i) {
    const double orig = w.data()[i];
    w.data()[i] = orig + step;
    const double fp = f();
    w.data()[i] = orig - step;
    const double fm = f();
    w.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double relative_error(const Matrix& a, const Matrix& b, double floor) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

double max_gradient_error(std::vector<Tensor> params, const std::function<Tensor()>& f,
                          double step) {
  for (auto& p : params) p.zero_grad();
  Tensor out = f();
  out.backward();
  std::vector<Matrix> analytic;
  for (auto& p : params) analytic.push_back(p.grad());
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix fd = finite_difference(params[k], [&] { return f().item(); }, step);
    worst = std::max(worst, relative_error(analytic[k], fd));
  }
  return worst;
}

Matrix random_matrix(ad::Index rows, ad::Index cols, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double brute_force_assignment(const Matrix& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.cols() != n || n > 9) throw std::invalid_argument("brute_force_assignment: need square n<=9");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (int i = 0; i < n; ++i) c += cost(i, perm[i]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / n;
}

double dense_lp_transport(const Matrix& cost, const std::vector<double>& a,
                          const std::vector<double>& b) {
  // Standard form: min c^T x, A x = rhs, x >= 0, with one artificial variable
  // per constraint (phase I by big-M). Constraints: row sums = a, col sums = b
  // (last column constraint dropped as redundant).
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  const int nv = n * m;
  const int nc = n + m - 1;
  const int cols = nv + nc + 1;
  double big_m = 1.0;
  for (ad::Index i = 0; i < cost.size(); ++i) big_m = std::max(big_m, std::abs(cost.data()[i]));
  big_m *= 1e4;
  std::vector<std::vector<double>> t(nc + 1, std::vector<double>(cols, 0.0));
  std::vector<int> basis(nc);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) t[i][i * m + j] = 1.0;
    t[i][cols - 1] = a[i];
  }
  for (int j = 0; j < m - 1; ++j) {
    for (int i = 0; i < n; ++i) t[n + j][i * m + j] = 1.0;
    t[n + j][cols - 1] = b[j];
  }
  for (int r = 0; r < nc; ++r) {
    t[r][nv + r] = 1.0;
    basis[r] = nv + r;
  }
  // Objective row holds reduced costs.
  std::vector<double>& obj = t[nc];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) obj[i * m + j] = cost(i, j);
  for (int r = 0; r < nc; ++r) obj[nv + r] = big_m;
  for (int r = 0; r < nc; ++r)
    for (int c = 0; c < cols; ++c) obj[c] -= big_m * t[r][c];
  for (int iter = 0; iter < 100000; ++iter) {
    int enter = -1;
    for (int c = 0; c < cols - 1; ++c) {
      if (obj[c] < -1e-12) {
        enter = c;
        break;
      }
    }
    if (enter < 0) break;
    int leave = -1;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (int r = 0; r < nc; ++r) {
      if (t[r][enter] > 1e-12) {
        const double ratio = t[r][cols - 1] / t[r][enter];
        if (ratio < best_ratio - 1e-15 ||
            (std::abs(ratio - best_ratio) <= 1e-15 && leave >= 0 && basis[r] < basis[leave])) {
          best_ratio = ratio;
          leave = r;
        }
      }
    }
    if (leave < 0) throw std::runtime_error("dense_lp_transport: unbounded");
    const double piv = t[leave][enter];
    for (double& v : t[leave]) v /= piv;
    for (int r = 0; r <= nc; ++r) {
      if (r == leave) continue;
      const double f = t[r][enter];
      if (f == 0.0) continue;
      for (int c = 0; c < cols; ++c) t[r][c] -= f * t[leave][c];
    }
    basis[leave] = enter;
  }
  double value = 0.0;
  for (int r = 0; r < nc; ++r) {
    if (basis[r] < nv) value += cost(basis[r] / m, basis[r] % m) * t[r][cols - 1];
  }
  return value;
}

Matrix sq_euclidean_cost(const Matrix& x, const Matrix& y) {
  Matrix c(x.rows(), y.rows());
  for (ad::Index i = 0; i < x.rows(); ++i)
    for (ad::Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return c;
}

Matrix euclidean_cost(const Matrix& x, const Matrix& y) {
  Matrix c = sq_euclidean_cost(x, y);
  return c.cwiseSqrt();
}

}  // namespace umfsb::testing
