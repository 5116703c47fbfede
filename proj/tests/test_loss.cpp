#include <cmath>

#include "doctest.h"
#include "elicit/errors.hpp"
#include "elicit/loss.hpp"
#include "elicit/oracle.hpp"
#include "elicit/study.hpp"
#include "support.hpp"

using namespace elicit;
using ad::Tensor;
using testing::grad_check;

namespace {

// Biased energy MMD^2 by direct double sums over plain numbers.
double brute_mmd(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  auto mean_dist = [&](const auto& a, const auto& b) {
    double s = 0;
    for (const auto& u : a)
      for (const auto& v : b) s += dist(u, v);
    return s / static_cast<double>(a.size() * b.size());
  };
  return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

Tensor as_tensor(const std::vector<std::vector<double>>& rows) {
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), rows.front().size()}, flat);
}

std::vector<std::vector<double>> gaussian(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& r : out)
    for (double& v : r) v = shift + rng.normal();
  return out;
}

}  // namespace

TEST_CASE("energy MMD suite") {
  const auto x = gaussian(40, 2, 0.0, 1);
  const auto y = gaussian(30, 2, 0.5, 2);
  CHECK(mmd_energy_biased(as_tensor(x), as_tensor(x)).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(mmd_energy_biased(as_tensor(x), as_tensor(y)).item() ==
        doctest::Approx(mmd_energy_biased(as_tensor(y), as_tensor(x)).item()).epsilon(1e-12));
  CHECK(mmd_energy_biased(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {2.0})).item() == 4.0);
  CHECK(brute_mmd({{0.0}}, {{2.0}}) == 4.0);
  CHECK(mmd_energy_biased(as_tensor(x), as_tensor(y)).item() == doctest::Approx(brute_mmd(x, y)).epsilon(1e-12));

  // strictly increasing in the separation of two 1-d Gaussians
  double last = -1.0;
  const auto base = gaussian(200, 1, 0.0, 3);
  for (double shift : {0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    const double v = mmd_energy_biased(as_tensor(base), as_tensor(gaussian(200, 1, shift, 4))).item();
    CHECK(v > last);
    last = v;
  }

  CHECK_THROWS_AS(mmd_energy_biased(Tensor::from({2, 1}, {0, 1}), Tensor::from({2, 2}, {0, 1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(mmd_energy_biased(Tensor::zeros({0, 1}), Tensor::from({1, 1}, {0.0})), ShapeError);
}

TEST_CASE("energy MMD gradient") {
  const Tensor y = as_tensor(gaussian(7, 2, 0.3, 5));
  auto f = [&](const Tensor& x) { return mmd_energy_biased(x, y); };
  const auto x0 = gaussian(5, 2, 0.0, 6);
  std::vector<double> flat;
  for (const auto& r : x0) flat.insert(flat.end(), r.begin(), r.end());
  CHECK(grad_check(f, {5, 2}, flat).relative_error() < 1e-6);
}

TEST_CASE("row-wise MMD averages scalar-set MMDs") {
  const std::vector<double> rows{1.0, 2.5, 3.1, 4.0, 7.2, -0.5, 0.4, 1.9, 2.2, 3.8};
  const std::vector<double> target{0.9, 2.0, 3.0, 4.1, 6.0};
  const Tensor got = mmd_energy_rows(Tensor::from({2, 5}, rows), Tensor::vector(target));
  double want = 0;
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<std::vector<double>> xs, ys;
    for (std::size_t i = 0; i < 5; ++i) xs.push_back({rows[r * 5 + i]});
    for (double t : target) ys.push_back({t});
    want += brute_mmd(xs, ys) / 2;
  }
  CHECK(got.item() == doctest::Approx(want).epsilon(1e-12));
  CHECK(mmd_energy_rows(Tensor::from({1, 5}, target), Tensor::vector(target)).item() == 0.0);
  CHECK(mmd_energy_rows(Tensor::from({1, 1}, {0.0}), Tensor::vector({2.0})).item() == 4.0);

  auto f = [&](const Tensor& x) { return mmd_energy_rows(x, Tensor::vector(target)); };
  CHECK(grad_check(f, {2, 5}, rows).relative_error() < 1e-6);
  CHECK_THROWS_AS(mmd_energy_rows(Tensor::from({2, 5}, rows), Tensor::from({1, 5}, target)), ShapeError);
}

TEST_CASE("squared error and weighted totals") {
  const Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(squared_error(t, Tensor::vector({1, 1})).item() == doctest::Approx((0 + 1 + 4 + 9) / 4.0));
  CHECK_THROWS_AS(squared_error(t, Tensor::vector({1, 1, 1})), ShapeError);

  const std::vector<NamedLoss> parts{{"a", Tensor::scalar(2.0)}, {"b", Tensor::scalar(3.0)}};
  const std::vector<LossComponentSpec> specs{{"b", LossKind::squared_error, 0.1}, {"a", LossKind::mmd_energy, 1.0}};
  const TotalLoss tl = total_loss(parts, specs);
  CHECK(tl.total.item() == doctest::Approx(2.3));
  CHECK(tl.report.total == doctest::Approx(2.3));
  CHECK(tl.report.names == std::vector<std::string>{"a", "b"});
  CHECK(tl.report.weights == std::vector<double>{1.0, 0.1});

  const std::vector<LossComponentSpec> missing{{"a", LossKind::mmd_energy, 1.0}};
  CHECK_THROWS_AS(total_loss(parts, missing), ConfigError);
  const std::vector<LossComponentSpec> negative{{"a", LossKind::mmd_energy, -1.0}, {"b", LossKind::mmd_energy, 1.0}};
  CHECK_THROWS_AS(total_loss(parts, negative), ConfigError);
  CHECK(loss_kind_from_string(to_string(LossKind::squared_error)) == LossKind::squared_error);
  CHECK_THROWS_AS(loss_kind_from_string("kl"), ConfigError);
}

TEST_CASE("default components and expert pairing") {
  const StudyConfig c = StudyConfig::preset("M1");
  const auto specs = default_loss_components(c.plan);
  REQUIRE(specs.size() == 3);
  CHECK(specs[0].name == "y|x0");
  CHECK(specs[0].kind == LossKind::mmd_energy);
  CHECK(specs[0].weight == 1.0);
  CHECK(specs[2].name == "corr");
  CHECK(specs[2].kind == LossKind::squared_error);
  CHECK(specs[2].weight == 0.1);

  Rng rng(1, Stream::oracle);
  const ExpertData e = simulate_expert(c.prior, c.model, c.plan, 2000, rng);
  CHECK_NOTHROW(check_expert_matches_plan(e.statistics, c.plan));
  // the expert set compared with itself
  CHECK(evaluate_loss(e.statistics, e.statistics, specs).report.total == 0.0);

  ElicitedStatisticSet partial = e.statistics;
  partial.groups.pop_back();
  CHECK_THROWS_AS(check_expert_matches_plan(partial, c.plan), ConfigError);
  CHECK_THROWS_AS(evaluate_loss(e.statistics, partial, specs), ConfigError);
  ElicitedStatisticSet narrow = e.statistics;
  narrow.groups[0].values = Tensor::from({1, 2}, {1.0, 2.0});
  narrow.groups[0].labels = {"0.25", "0.75"};
  CHECK_THROWS_AS(check_expert_matches_plan(narrow, c.plan), ConfigError);
}

TEST_CASE("loss gradients reach the model statistics") {
  const StudyConfig c = StudyConfig::preset("M1");
  Rng rng(2, Stream::oracle);
  const ExpertData e = simulate_expert(c.prior, c.model, c.plan, 2000, rng);
  const auto specs = default_loss_components(c.plan);
  const std::vector<double> start{12.1, 13.5, 15.2, 16.0, 18.7, 3.3, 5.9, 7.4, 9.8, 12.2, 0.21, 14.0, 14.6, 16.3, 17.2, 19.9,
                                  2.7, 6.6, 8.1, 10.4, 13.6, -0.35};
  auto f = [&](const Tensor& flat) {
    ElicitedStatisticSet m = e.statistics;
    m.side = Side::model;
    // rows: [y|x0 quantiles, y|x1 quantiles, corr] for two batch elements
    const std::vector<std::size_t> i0{0, 1, 2, 3, 4}, i1{5, 6, 7, 8, 9}, ic{10};
    std::vector<Tensor> q0, q1, cr;
    for (std::size_t r = 0; r < 2; ++r) {
      const Tensor row = ad::select(flat, 0, r);
      q0.push_back(ad::unsqueeze(ad::take(row, 0, i0), 0));
      q1.push_back(ad::unsqueeze(ad::take(row, 0, i1), 0));
      cr.push_back(ad::unsqueeze(ad::take(row, 0, ic), 0));
    }
    m.groups[0].values = ad::concat(q0, 0);
    m.groups[1].values = ad::concat(q1, 0);
    m.groups[2].values = ad::concat(cr, 0);
    return evaluate_loss(m, e.statistics, specs).total;
  };
  CHECK(grad_check(f, {2, 11}, start).relative_error() < 1e-6);
}
