#include "doctest.h"
#include "elicit/errors.hpp"
#include "elicit/elicitation.hpp"
#include "elicit/models.hpp"
#include "support.hpp"

using namespace elicit;
using ad::Tensor;
using testing::grad_check;
using testing::to_vec;

namespace {

void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol = 1e-12) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

TargetQuantitySamples binomial_like(std::size_t b, std::size_t s) {
  TargetQuantitySamples t;
  std::vector<double> v(b * s);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i * 7) % 31);
  t.add({"y|x0", Tensor::from({b, s}, v), {}, false});
  t.add({"y|x1", Tensor::from({b, s}, v) + 1.0, {}, false});
  t.add({"corr", Tensor::from({b, 1}, std::vector<double>(b, 0.25)), {"beta0_beta1"}, true});
  return t;
}

}  // namespace

TEST_CASE("empirical quantiles match numpy's linear method") {
  const std::vector<double> levels = ElicitationPlan::default_levels();
  // numpy.quantile(v, levels), method="linear"
  check_close(to_vec(empirical_quantiles(Tensor::vector({3.1, -0.4, 7.2, 2.2, 5.0, 1.1, 0.3}), levels)),
              {-0.19, 0.7, 2.2, 4.05, 6.54});
  std::vector<double> ten(10);
  for (std::size_t i = 0; i < 10; ++i) ten[i] = static_cast<double>(10 - i);
  check_close(to_vec(empirical_quantiles(Tensor::vector(ten), levels)), {1.45, 3.25, 5.5, 7.75, 9.55});

  // batched along the last axis
  std::vector<double> two(ten);
  for (double v : ten) two.push_back(2 * v);
  const Tensor q = empirical_quantiles(Tensor::from({2, 10}, two), levels);
  CHECK(q.shape() == ad::Shape{2, 5});
  CHECK(q.at({1, 2}) == doctest::Approx(11.0));

  CHECK_THROWS_AS(empirical_quantiles(Tensor::vector({1.0}), levels), DomainError);
  const std::vector<double> bad{0.0, 0.5};
  CHECK_THROWS_AS(empirical_quantiles(Tensor::vector({1.0, 2.0}), bad), ConfigError);
}

TEST_CASE("quantile gradients") {
  const std::vector<double> levels = ElicitationPlan::default_levels();
  const Tensor w = Tensor::from({2, 5}, {1, -2, 0.5, 3, -1, 0.2, 0.4, -0.7, 1.1, 2});
  auto f = [&](const Tensor& x) { return ad::sum_all(empirical_quantiles(x, levels) * w); };
  const std::vector<double> x0{0.3, -1.2, 2.5, 0.9, 1.7, -0.1, 3.3, 0.05,
                               1.0, 0.4, -2.0, 1.9, 0.7, 2.8, -0.6, 0.15};
  CHECK(grad_check(f, {2, 8}, x0).relative_error() < 1e-7);
  // the median of an odd set routes its whole gradient to the middle element
  const std::vector<double> half{0.5};
  auto med = [&](const Tensor& x) { return ad::sum_all(empirical_quantiles(x, half)); };
  CHECK(grad_check(med, {3}, {5.0, 1.0, 3.0}).analytic == std::vector<double>{0, 0, 1});
}

TEST_CASE("standard plans and validation") {
  const auto m1 = ElicitationPlan::standard(GenerativeModel::binomial().target_names());
  const auto m2 = ElicitationPlan::standard(GenerativeModel::normal().target_names());
  CHECK(m1.entries.size() == 3);
  CHECK(m2.entries.size() == 5);
  CHECK(m1.entries.back().target == "corr");
  CHECK(m1.entries.back().technique == Technique::moment);
  CHECK(m2.entries[3].target == "R2");
  CHECK_NOTHROW(m2.validate());

  CHECK_THROWS_AS(ElicitationPlan{}.validate(), ConfigError);
  ElicitationPlan bad = m1;
  bad.entries[0].levels = {0.5, 0.25};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.entries[0].levels = {};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.entries[0].levels = {0.5, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  CHECK(technique_from_string(to_string(Technique::moment)) == Technique::moment);
  CHECK_THROWS_AS(technique_from_string("histogram"), ConfigError);
  CHECK(format_level(0.05) == "0.05");
  CHECK(format_level(0.5) == "0.5");
}

TEST_CASE("statistics from target samples") {
  const auto plan = ElicitationPlan::standard(GenerativeModel::binomial().target_names());
  const auto stats = build_statistics(binomial_like(4, 50), plan, Side::model);
  CHECK(stats.side == Side::model);
  REQUIRE(stats.groups.size() == 3);
  const StatisticGroup* q = stats.find("y|x0");
  REQUIRE(q != nullptr);
  CHECK(q->rows() == 4);
  CHECK(q->width() == 5);
  CHECK(q->statistic_names().front() == "y|x0:quantiles:0.05");
  const StatisticGroup* c = stats.find("corr");
  CHECK(c->statistic_names() == std::vector<std::string>{"corr:moment:beta0_beta1"});
  CHECK(c->row(2) == std::vector<double>{0.25});
  // a shift of the target shifts every quantile
  const auto r0 = stats.find("y|x0")->row(1);
  const auto r1 = stats.find("y|x1")->row(1);
  for (std::size_t i = 0; i < 5; ++i) CHECK(r1[i] == doctest::Approx(r0[i] + 1.0));
}

TEST_CASE("plan and targets must agree") {
  auto plan = ElicitationPlan::standard(GenerativeModel::binomial().target_names());
  auto samples = binomial_like(2, 10);
  plan.entries.push_back({"R2", Technique::quantiles, {0.5}});
  CHECK_THROWS_AS(build_statistics(samples, plan, Side::model), ConfigError);

  plan = ElicitationPlan::standard(GenerativeModel::binomial().target_names());
  plan.entries.back().technique = Technique::quantiles;
  plan.entries.back().levels = {0.5};
  CHECK_THROWS_AS(build_statistics(samples, plan, Side::model), ConfigError);

  plan = ElicitationPlan::standard(GenerativeModel::binomial().target_names());
  plan.entries[0].technique = Technique::moment;
  CHECK_THROWS_AS(build_statistics(samples, plan, Side::model), ConfigError);
}
