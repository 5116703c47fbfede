#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "elicit/errors.hpp"
#include "elicit/flow.hpp"
#include "support.hpp"

using namespace elicit;
using ad::Tensor;

namespace {

// Moves every weight off its initial value so the Jacobian is non-trivial.
void perturb(JointPriorFlow& flow, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (Tensor* p : flow.parameters()) {
    for (double& w : p->mutable_values()) w += scale * rng.normal();
  }
}

FlowConfig config(std::size_t k, std::vector<std::size_t> positivity = {}) {
  FlowConfig c;
  c.dim_theta = k;
  c.positivity_dims = std::move(positivity);
  return c;
}

Tensor random_points(std::size_t n, std::size_t k, std::uint64_t seed, bool positive_last = false) {
  Rng rng(seed);
  std::vector<double> v(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      v[i * k + j] = (positive_last && j + 1 == k) ? 0.2 + 2.0 * rng.uniform() : 2.0 * rng.normal();
    }
  }
  return Tensor::from({n, k}, std::move(v));
}

// Per-block count for our architecture: affine normalization (2 per
// coordinate) plus four dense nets of shape in -> h -> h -> out.
std::size_t expected_count(std::size_t k, std::size_t blocks, std::size_t h) {
  const std::size_t a = k / 2, b = k - a;
  auto net = [h](std::size_t in, std::size_t out) { return (in * h + h) + (h * h + h) + (h * out + out); };
  return blocks * (2 * k + net(b, a) * 2 + net(a, b) * 2);
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(JointPriorFlow(config(1), 0), ConfigError);
  FlowConfig c = config(2);
  c.num_blocks = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(config(2, {2}).validate(), ConfigError);
}

TEST_CASE("parameter counts") {
  CHECK(JointPriorFlow(config(2), 1).parameter_count() == 202776);
  CHECK(JointPriorFlow(config(4, {3}), 1).parameter_count() == 205872);
  CHECK(expected_count(2, 3, 128) == 202776);
  CHECK(expected_count(4, 3, 128) == 205872);
  FlowConfig reduced = config(2);
  reduced.num_blocks = 2;
  reduced.hidden_units = 64;
  CHECK(JointPriorFlow(reduced, 9).parameter_count() == expected_count(2, 2, 64));
  CHECK(JointPriorFlow(reduced, 9).parameter_count() == 34832);
}

TEST_CASE("identity initialization") {
  JointPriorFlow flow(config(2), 3);
  const double log2pi = std::log(2 * M_PI);
  CHECK(flow.log_prob(Tensor::from({1, 2}, {0, 0})).item() == doctest::Approx(-log2pi));
  CHECK(flow.log_prob(Tensor::from({1, 2}, {1, 1})).item() == doctest::Approx(-log2pi - 1));
  JointPriorFlow four(config(4), 3);
  CHECK(four.log_prob(Tensor::from({1, 4}, {0, 0, 0, 0})).item() == doctest::Approx(-2 * log2pi));

  FlowConfig one = config(2);
  one.num_blocks = 1;
  JointPriorFlow single(one, 5);
  CHECK(single.forward_normalizing(random_points(5, 2, 1)).log_det.values()[0] == 0.0);

  Rng rng(10);
  const Tensor s = flow.sample(10000, rng);
  const Tensor m = ad::mean(s, 0);
  CHECK(std::abs(m.values()[0]) < 0.15);
  CHECK(std::abs(m.values()[1]) < 0.15);
  // KL(p || base) estimated from own samples
  const Tensor lp = flow.log_prob(s);
  const Tensor base = -0.5 * ad::sum(ad::square(s), 1) - log2pi;
  CHECK(ad::mean_all(lp - base).item() < 0.05);
}

TEST_CASE("positivity and determinism") {
  JointPriorFlow flow(config(4, {3}), 7);
  perturb(flow, 1, 0.05);
  Rng a(42), b(42);
  const Tensor s1 = flow.sample(2000, a);
  const Tensor s2 = flow.sample(2000, b);
  CHECK(testing::to_vec(s1) == testing::to_vec(s2));
  for (std::size_t i = 0; i < 2000; ++i) CHECK(s1.at({i, 3}) > 0.0);
  CHECK_THROWS_AS(flow.forward_normalizing(Tensor::from({1, 4}, {0, 0, 0, -1.0})), DomainError);
  CHECK_THROWS_AS(flow.forward_normalizing(Tensor::from({1, 4}, {0, 0, 0, 0.0})), DomainError);
}

TEST_CASE("invertibility") {
  for (std::size_t k : {2u, 3u, 4u}) {
    JointPriorFlow flow(config(k), 11 + k);
    perturb(flow, 100 + k, 0.05);
    const Tensor theta = random_points(1000, k, 5);
    const auto fwd = flow.forward_normalizing(theta);
    const Tensor back = flow.generate(fwd.u);
    double worst = 0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      worst = std::max(worst, std::abs(back.values()[i] - theta.values()[i]));
    }
    CHECK(worst < 1e-8);
  }
  JointPriorFlow pos(config(4, {3}), 2);
  perturb(pos, 3, 0.05);
  const Tensor theta = random_points(500, 4, 6, true);
  const Tensor back = pos.generate(pos.forward_normalizing(theta).u);
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(back.values()[i] == doctest::Approx(theta.values()[i]).epsilon(1e-9));
}

// log|det| of the central-difference Jacobian of the normalizing map.
double numeric_log_det(const JointPriorFlow& flow, std::vector<double> pt, double h) {
  const std::size_t k = pt.size();
  Eigen::MatrixXd jac(k, k);
  for (std::size_t j = 0; j < k; ++j) {
    auto plus = pt, minus = pt;
    plus[j] += h;
    minus[j] -= h;
    const auto up = flow.forward_normalizing(Tensor::from({1, k}, plus)).u;
    const auto um = flow.forward_normalizing(Tensor::from({1, k}, minus)).u;
    for (std::size_t r = 0; r < k; ++r) jac(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = (up.values()[r] - um.values()[r]) / (2 * h);
  }
  return std::log(std::abs(jac.determinant()));
}

TEST_CASE("log-determinant against a numerical Jacobian") {
  // The coupling nets are piecewise linear. A stencil that straddles a ReLU
  // kink does not estimate the Jacobian; such points are detected by
  // disagreement with a ten times smaller step and replaced.
  for (bool positivity : {false, true}) {
    JointPriorFlow flow(config(4, positivity ? std::vector<std::size_t>{3} : std::vector<std::size_t>{}), 21);
    perturb(flow, 22, 0.05);
    const Tensor pts = random_points(200, 4, 23, true);
    std::size_t valid = 0, kinks = 0;
    double worst = 0;
    for (std::size_t n = 0; n < 200 && valid < 50; ++n) {
      std::vector<double> pt(4);
      for (std::size_t c = 0; c < 4; ++c) pt[c] = pts.at({n, c});
      const double numeric = numeric_log_det(flow, pt, 1e-5);
      const double fine = numeric_log_det(flow, pt, 1e-6);
      if (std::abs(numeric - fine) > 1e-6 * std::max(1.0, std::abs(fine))) {
        ++kinks;
        continue;
      }
      const double analytic = flow.forward_normalizing(Tensor::from({1, 4}, pt)).log_det.item();
      worst = std::max(worst, std::abs(analytic - numeric) / std::abs(numeric));
      ++valid;
    }
    CHECK(valid == 50);
    CHECK(kinks < 10);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("density integrates to one") {
  JointPriorFlow flow(config(2), 31);
  perturb(flow, 32, 0.05);
  Rng rng(33);
  const Tensor own = flow.sample(10000, rng);
  double lo[2] = {1e300, 1e300}, hi[2] = {-1e300, -1e300};
  for (std::size_t i = 0; i < 10000; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      lo[j] = std::min(lo[j], own.at({i, j}));
      hi[j] = std::max(hi[j], own.at({i, j}));
    }
  }
  for (std::size_t j = 0; j < 2; ++j) {
    const double pad = 0.25 * (hi[j] - lo[j]);
    lo[j] -= pad;
    hi[j] += pad;
  }
  const std::size_t n = 40000;
  std::vector<double> u(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 2; ++j) u[2 * i + j] = rng.uniform(lo[j], hi[j]);
  }
  const Tensor lp = flow.log_prob(Tensor::from({n, 2}, u));
  double acc = 0;
  for (double v : lp.values()) acc += std::exp(v);
  const double volume = (hi[0] - lo[0]) * (hi[1] - lo[1]);
  const double z = volume * acc / static_cast<double>(n);
  CHECK(z > 0.9);
  CHECK(z < 1.1);
}

TEST_CASE("samples are differentiable in the parameters") {
  JointPriorFlow flow(config(2), 41);
  perturb(flow, 42, 0.01);
  Rng rng(43);
  ad::mean_all(ad::square(flow.sample(64, rng))).backward();
  double norm = 0;
  std::size_t touched = 0;
  for (const Tensor* p : flow.parameters()) {
    if (!p->has_grad()) continue;
    ++touched;
    for (double g : p->grad()) norm += g * g;
  }
  CHECK(touched == flow.parameters().size());
  CHECK(norm > 0);
}

TEST_CASE("checkpoint round trip") {
  JointPriorFlow flow(config(4, {3}), 51);
  perturb(flow, 52, 0.05);
  const auto path = std::filesystem::temp_directory_path() / "elicit_test_checkpoint.flow";
  flow.save(path);
  const JointPriorFlow back = JointPriorFlow::load(path);
  CHECK(back.config() == flow.config());
  CHECK(back.parameter_count() == flow.parameter_count());
  for (std::size_t b = 0; b < flow.blocks().size(); ++b) {
    CHECK(back.blocks()[b].permutation() == flow.blocks()[b].permutation());
  }
  Rng r1(5), r2(5);
  CHECK(testing::to_vec(flow.sample(100, r1)) == testing::to_vec(back.sample(100, r2)));
  std::filesystem::remove(path);

  const auto bad = std::filesystem::temp_directory_path() / "elicit_test_bad.flow";
  {
    std::ofstream os(bad, std::ios::binary);
    os << "not a checkpoint";
  }
  CHECK_THROWS(JointPriorFlow::load(bad));
  std::filesystem::remove(bad);
}

TEST_CASE("permutations are bijections and K=2 swaps") {
  JointPriorFlow two(config(2), 61);
  for (const auto& b : two.blocks()) CHECK(b.permutation() == std::vector<std::size_t>{1, 0});
  JointPriorFlow four(config(4), 62);
  for (const auto& b : four.blocks()) {
    auto p = b.permutation();
    std::sort(p.begin(), p.end());
    CHECK(p == std::vector<std::size_t>{0, 1, 2, 3});
  }
}
