#include <cmath>
#include <numeric>

#include "doctest.h"
#include "elicit/errors.hpp"
#include "elicit/rng.hpp"
#include "elicit/tensor.hpp"
#include "support.hpp"

using namespace elicit;
using namespace elicit::ad;
using testing::grad_check;
using testing::to_vec;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("elementwise values") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
  CHECK(relu(Tensor::scalar(-3.2)).item() == 0.0);
  CHECK(relu(Tensor::scalar(1.5)).item() == 1.5);
  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)));
  CHECK(softplus(Tensor::scalar(800.0)).item() == doctest::Approx(800.0));
  CHECK(log_sigmoid(Tensor::scalar(-800.0)).item() == doctest::Approx(-800.0));
  CHECK(atan(Tensor::scalar(1.0)).item() == doctest::Approx(M_PI / 4));
  CHECK((-Tensor::scalar(2.0)).item() == -2.0);
}

TEST_CASE("softplus derivative at zero is one half") {
  auto f = [](const Tensor& x) { return sum_all(softplus(x)); };
  auto g = grad_check(f, {1}, {0.0}, 1e-5);
  CHECK(g.analytic[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g.numeric[0] == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("elementwise gradients match central differences") {
  const auto x0 = randn(6, 11);
  std::vector<double> pos(6);
  for (std::size_t i = 0; i < 6; ++i) pos[i] = 0.5 + std::abs(x0[i]);
  const Tensor other = Tensor::from({2, 3}, randn(6, 12));

  SUBCASE("unary") {
    using F = Tensor (*)(const Tensor&);
    for (F op : {F(exp), F(sigmoid), F(softplus), F(atan), F(square), F(log_sigmoid)}) {
      auto f = [op](const Tensor& x) { return sum_all(op(x) * x); };
      CHECK(grad_check(f, {2, 3}, x0).relative_error() < 1e-5);
    }
    for (F op : {F(log), F(sqrt)}) {
      auto f = [op](const Tensor& x) { return sum_all(op(x) * x); };
      CHECK(grad_check(f, {2, 3}, pos).relative_error() < 1e-5);
    }
    auto r = [](const Tensor& x) { return sum_all(relu(x) * x); };
    CHECK(grad_check(r, {2, 3}, x0).relative_error() < 1e-5);
  }
  SUBCASE("binary with broadcasting") {
    const Tensor row = Tensor::from({3}, {0.7, 1.3, 2.1});
    auto f = [&](const Tensor& x) { return sum_all((x + row) * (x - other) / (row + x * x)); };
    CHECK(grad_check(f, {2, 3}, x0).relative_error() < 1e-5);
    // gradient flowing into the broadcast operand
    auto g = [&](const Tensor& r) { return sum_all(other * r / (1.0 + r * r)); };
    CHECK(grad_check(g, {3}, {0.2, -0.4, 1.1}).relative_error() < 1e-5);
  }
}

TEST_CASE("broadcasting") {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from({3}, {10, 20, 30});
  CHECK(to_vec(a + b) == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(to_vec(a + b) == to_vec(b + a));
  const Tensor c = Tensor::from({2, 1}, {100, 200});
  CHECK(to_vec(a + c) == std::vector<double>{101, 102, 103, 204, 205, 206});
  CHECK((a + c).shape() == Shape{2, 3});
  CHECK_THROWS_AS(a + Tensor::from({2}, {1, 2}), ShapeError);
}

TEST_CASE("domain errors name the operand") {
  CHECK_THROWS_AS(log(Tensor::vector({1.0, -1.0})), DomainError);
  CHECK_THROWS_AS(sqrt(Tensor::vector({-4.0})), DomainError);
  try {
    log(Tensor::vector({1.0, -1.0}));
  } catch (const DomainError& e) {
    CHECK(e.operand() == 0);
  }
}

TEST_CASE("matmul") {
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor v = Tensor::from({3, 1}, {4, -2, 7});
  CHECK(to_vec(matmul(eye, v)) == to_vec(v));
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor ones = Tensor::from({2, 1}, {1, 1});
  CHECK(to_vec(matmul(a, ones)) == std::vector<double>{3, 7});
  CHECK_THROWS_AS(matmul(a, Tensor::from({3, 1}, {1, 1, 1})), ShapeError);

  const Tensor b = Tensor::from({5, 2}, randn(10, 3));
  const Tensor w = Tensor::from({4, 2}, randn(8, 4));
  auto fa = [&](const Tensor& x) { return sum_all(matmul(x, b) * w); };
  CHECK(grad_check(fa, {4, 5}, randn(20, 5)).relative_error() < 1e-6);
  const Tensor lhs = Tensor::from({4, 5}, randn(20, 6));
  auto fb = [&](const Tensor& x) { return sum_all(matmul(lhs, x) * w); };
  CHECK(grad_check(fb, {5, 2}, randn(10, 7)).relative_error() < 1e-6);
}

TEST_CASE("fused dense layer equals its unfused form") {
  const Tensor x = Tensor::from({6, 3}, randn(18, 61));
  const Tensor w = Tensor::from({3, 4}, randn(12, 62));
  const Tensor b = Tensor::from({4}, randn(4, 63));
  for (bool r : {false, true}) {
    const Tensor ref = r ? relu(matmul(x, w) + b) : matmul(x, w) + b;
    const auto got = to_vec(dense(x, w, b, r));
    const auto want = to_vec(ref);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
  }
  const Tensor probe = Tensor::from({6, 4}, randn(24, 64));
  auto fx = [&](const Tensor& v) { return sum_all(dense(v, w, b, true) * probe); };
  CHECK(grad_check(fx, {6, 3}, randn(18, 61)).relative_error() < 1e-6);
  auto fw = [&](const Tensor& v) { return sum_all(dense(x, v, b, true) * probe); };
  CHECK(grad_check(fw, {3, 4}, randn(12, 62)).relative_error() < 1e-6);
  auto fb = [&](const Tensor& v) { return sum_all(dense(x, w, v, true) * probe); };
  CHECK(grad_check(fb, {4}, randn(4, 63)).relative_error() < 1e-6);
  CHECK_THROWS_AS(dense(x, w, Tensor::zeros({3}), false), ShapeError);
}

TEST_CASE("batched matmul") {
  const Tensor a = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 1}, {1, 10});
  CHECK(to_vec(matmul(a, b)) == std::vector<double>{21, 43});
  const Tensor bb = Tensor::from({2, 2, 1}, {1, 1, 2, 0});
  CHECK(to_vec(matmul(a, bb)) == std::vector<double>{3, 6});
}

TEST_CASE("reductions") {
  CHECK(mean(Tensor::vector({1, 2, 3}), 0).item() == 2.0);
  CHECK(variance(Tensor::vector({1, 1, 1}), 0).item() == 0.0);
  CHECK(variance(Tensor::vector({1, 3}), 0).item() == 1.0);  // population convention
  CHECK(stddev(Tensor::vector(randn(1000, 21)), 0).item() == doctest::Approx(1.0).epsilon(0.1));

  const Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(to_vec(sum(m, 0)) == std::vector<double>{5, 7, 9});
  CHECK(to_vec(sum(m, -1)) == std::vector<double>{6, 15});
  CHECK(sum(m, 1, true).shape() == Shape{2, 1});
  CHECK_THROWS_AS(sum(Tensor::zeros({2, 0}), 1), DomainError);

  for (ReduceOp op : {ReduceOp::sum, ReduceOp::mean, ReduceOp::variance, ReduceOp::std}) {
    auto f = [op](const Tensor& x) { return sum_all(square(reduce(op, x, 1))); };
    CHECK(grad_check(f, {3, 4}, randn(12, 31)).relative_error() < 1e-5);
  }
}

TEST_CASE("softmax and pairwise distance") {
  const Tensor s = softmax(Tensor::from({2, 3}, {0, 0, 0, 1000, 0, -1000}));
  CHECK(s.at({0, 0}) == doctest::Approx(1.0 / 3));
  CHECK(s.at({1, 0}) == doctest::Approx(1.0));
  const Tensor w = Tensor::from({2, 3}, randn(6, 41));
  auto f = [&](const Tensor& x) { return sum_all(softmax(x) * w); };
  CHECK(grad_check(f, {2, 3}, randn(6, 42)).relative_error() < 1e-5);

  const Tensor y = Tensor::from({2, 2}, {0, 0, 3, 4});
  CHECK(pairwise_distance(y, y).at({0, 1}) == doctest::Approx(5.0));
  auto d = [&](const Tensor& x) { return sum_all(pairwise_distance(x, y)); };
  CHECK(grad_check(d, {3, 2}, randn(6, 43)).relative_error() < 1e-5);
}

TEST_CASE("shape plumbing keeps gradients") {
  const std::vector<std::size_t> idx{2, 0, 2};
  auto g = [&](const Tensor& x) {
    const Tensor t = take(x, 1, idx);                   // [2, 3]
    const Tensor r = unsqueeze(select(x, 0, 1), 0);     // [1, 3]
    const Tensor c = concat({t, r}, 0);                 // [3, 3]
    return sum_all(square(reshape(c, {9})) * Tensor::from({9}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  };
  CHECK(grad_check(g, {2, 3}, randn(6, 51)).relative_error() < 1e-6);
  CHECK_THROWS_AS(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
}

TEST_CASE("sort with frozen permutation") {
  const auto r = sort_with_gradient(Tensor::vector({3, 1, 2}));
  CHECK(to_vec(r.sorted) == std::vector<double>{1, 2, 3});
  CHECK(r.permutation == std::vector<std::size_t>{1, 2, 0});
  const auto id = sort_with_gradient(Tensor::vector({-1, 0, 5}));
  CHECK(id.permutation == std::vector<std::size_t>{0, 1, 2});
  const auto ties = sort_with_gradient(Tensor::vector({2, 1, 2, 1}));
  CHECK(ties.permutation == std::vector<std::size_t>{1, 3, 0, 2});

  auto first = [](const Tensor& x) { return select(sort_with_gradient(x).sorted, 0, 0); };
  const auto g = grad_check(first, {4}, {0.3, -1.2, 0.8, 2.0});
  CHECK(g.analytic == std::vector<double>{0, 1, 0, 0});
  CHECK(g.relative_error() < 1e-8);
  CHECK_THROWS_AS(sort_with_gradient(Tensor::vector({1.0, std::nan("")})), DomainError);
}

TEST_CASE("backward semantics") {
  Tensor x = Tensor::scalar(3.0, true);
  square(x).backward();
  CHECK(x.grad()[0] == 6.0);
  square(x).backward();
  CHECK(x.grad()[0] == 12.0);  // accumulates
  x.zero_grad();

  Tensor c = Tensor::scalar(5.0) * 2.0;
  (c + x * 0.0).backward();
  CHECK(x.grad()[0] == 0.0);

  CHECK_THROWS_AS(Tensor::from({2}, {1, 2}, true).backward(), ShapeError);

  // diamond: both branches reuse x
  Tensor y = Tensor::scalar(2.0, true);
  const Tensor a = y * y;
  (a * a + a).backward();  // y^4 + y^2
  CHECK(y.grad()[0] == doctest::Approx(4 * 8 + 2 * 2));
}

TEST_CASE("determinism") {
  auto run = [] {
    Tensor x = Tensor::from({3, 4}, randn(12, 77), true);
    const Tensor w = Tensor::from({4, 2}, randn(8, 78));
    sum_all(softplus(matmul(x, w))).backward();
    return std::make_pair(to_vec(x), std::vector<double>(x.grad().begin(), x.grad().end()));
  };
  CHECK(run() == run());
}
