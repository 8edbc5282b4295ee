#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"
#include "umfsb/autodiff.hpp"
#include "umfsb/error.hpp"
#include "umfsb/optim.hpp"

using namespace umfsb;
using namespace umfsb::ad;
using umfsb::testing::max_gradient_error;
using umfsb::testing::random_matrix;

TEST_CASE("matmul with identity returns the operand") {
  Tensor eye = Tensor::constant(Matrix::Identity(3, 3));
  Tensor x = Tensor::constant((Matrix(3, 1) << 1.5, -2.0, 0.25).finished());
  Tensor y = matmul(eye, x);
  CHECK(y.value() == x.value());
}

TEST_CASE("sum of squares and its gradient") {
  Tensor x = Tensor::parameter((Matrix(1, 2) << 1.0, 2.0).finished(), "x");
  Tensor f = sum(x * x);
  CHECK(f.item() == doctest::Approx(5.0));
  f.backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(2.0));
  CHECK(x.grad()(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("shape mismatch names the operation and the shapes") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(4, 5);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)add(Tensor::zeros(2, 3), Tensor::zeros(3, 2)), ShapeError);
}

TEST_CASE("every primitive matches central finite differences") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor a = Tensor::parameter(random_matrix(4, 3, rng), "a");
    Tensor b = Tensor::parameter(random_matrix(4, 3, rng), "b");
    Tensor row = Tensor::parameter(random_matrix(1, 3, rng), "row");
    Tensor col = Tensor::parameter(random_matrix(4, 1, rng), "col");
    Tensor w = Tensor::parameter(random_matrix(3, 2, rng), "w");
    Tensor pos = Tensor::parameter(random_matrix(4, 3, rng, 0.5, 2.0), "pos");
    const std::vector<Index> idx = {2, 0, 2, 1, 3};

    const std::vector<std::pair<const char*, std::function<Tensor()>>> exprs = {
        {"matmul", [&] { return sum(tanh(matmul(a, w))); }},
        {"transpose", [&] { return sum(matmul(transpose(a), b) * matmul(transpose(a), b)); }},
        {"add/sub broadcast", [&] { return sum(square((a + row) - col)); }},
        {"mul/div", [&] { return sum(a * b / pos); }},
        {"div broadcast", [&] { return sum(div(a, pos + col * col)); }},
        {"scalar ops", [&] { return sum(2.0 - 3.0 * a + a / 4.0 - 1.0 + 1.5 / pos); }},
        {"tanh", [&] { return sum(tanh(a) * b); }},
        {"sigmoid", [&] { return sum(sigmoid(a) * b); }},
        {"softplus", [&] { return sum(softplus(a) * b); }},
        {"exp/log", [&] { return sum(exp(a) + log(pos) * b); }},
        {"sqrt/pow", [&] { return sum(sqrt(pos) * b + pow(pos, 1.7)); }},
        {"abs", [&] { return sum(abs(a) * b); }},
        {"exp_clamped", [&] { return sum(exp_clamped(a, 1.0) * b); }},
        {"mean", [&] { return mean(a * b); }},
        {"row_sum/col_sum", [&] { return sum(square(row_sum(a))) + sum(square(col_sum(b))); }},
        {"row_norm", [&] { return sum(row_norm(a) * col); }},
        {"slice/concat cols", [&] { return sum(square(concat_cols(slice_cols(a, 1, 2), b))); }},
        {"concat rows", [&] {
           const Tensor parts[] = {a, b};
           return sum(square(concat_rows(std::span<const Tensor>(parts))) * 0.5);
         }},
        {"gather/scatter", [&] {
           Tensor g = gather_rows(a, idx);
           Tensor s = scatter_add_rows(slice_cols(g, 0, 2), idx, 4);
           return sum(square(g)) + sum(square(s) * Tensor::constant(Matrix::Constant(4, 2, 0.3)));
         }},
        {"broadcast_to", [&] { return sum(square(broadcast_to(row, 4, 3) * a)); }},
    };
    for (const auto& [name, expr] : exprs) {
      CAPTURE(name);
      CAPTURE(seed);
      const double err = max_gradient_error({a, b, row, col, w, pos}, expr);
      CHECK(err <= 1e-4);
    }
  }
}

TEST_CASE("backward is bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(7);
    Tensor a = Tensor::parameter(random_matrix(5, 4, rng), "a");
    Tensor w = Tensor::parameter(random_matrix(4, 4, rng), "w");
    Tensor f = sum(square(tanh(matmul(a, w)) * a) + exp(a * 0.1));
    f.backward();
    return std::make_pair(Matrix(a.grad()), Matrix(w.grad()));
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("reused subexpressions accumulate gradients") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 3.0), "x");
  Tensor y = x * x;
  Tensor f = sum(y + y * x);  // x^2 + x^3, derivative 2x + 3x^2 = 33
  f.backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(33.0));
  // A second backward over a fresh graph does not double count intermediates.
  x.zero_grad();
  sum(y + y * x).backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(33.0));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::parameter((Matrix(1, 2) << 0.3, -0.7).finished(), "p");
  Adam opt({p});
  Matrix before = p.value();
  sum(p * 0.0).backward();
  opt.step();
  CHECK(p.value() == before);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adam: first step with constant gradient moves by the learning rate") {
  Tensor p = Tensor::parameter(Matrix::Constant(1, 1, 2.0), "p");
  Adam opt({p}, AdamConfig{0.1});
  sum(p).backward();
  opt.step();
  CHECK(p.value()(0, 0) == doctest::Approx(2.0 - 0.1).epsilon(1e-6));
}

TEST_CASE("adam: quadratic bowl converges") {
  Tensor x = Tensor::parameter((Matrix(1, 2) << 1.0, 1.0).finished(), "x");
  Adam opt({x}, AdamConfig{0.05});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(x * x).backward();
    opt.step();
  }
  CHECK(x.value().norm() < 1e-2);
}

TEST_CASE("adam: non-finite gradient names the parameter") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 1, 0.0), "velocity.w0");
  Adam opt({x});
  sum(log(x)).backward();  // d/dx log(x) at 0 = inf
  try {
    opt.step();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("velocity.w0") != std::string::npos);
  }
}

TEST_CASE("gradient clipping bounds the global norm") {
  Tensor x = Tensor::parameter(Matrix::Constant(1, 4, 1.0), "x");
  std::vector<Tensor> ps{x};
  sum(x * 100.0).backward();
  const double before = clip_grad_norm(ps, 10.0);
  CHECK(before == doctest::Approx(200.0));
  CHECK(grad_norm(ps) == doctest::Approx(10.0));
}
