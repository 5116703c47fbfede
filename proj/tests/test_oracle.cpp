#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "elicit/errors.hpp"
#include "elicit/oracle.hpp"
#include "elicit/study.hpp"
#include "support.hpp"

using namespace elicit;
using ad::Tensor;

namespace {

struct Moments {
  std::vector<double> mean, sd;
  std::vector<std::vector<double>> corr;
};

Moments moments(const Tensor& theta) {
  const std::size_t n = theta.shape()[0], k = theta.shape()[1];
  Moments m;
  m.mean.assign(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) m.mean[j] += theta.at({i, j}) / static_cast<double>(n);
  std::vector<std::vector<double>> cov(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b)
        cov[a][b] += (theta.at({i, a}) - m.mean[a]) * (theta.at({i, b}) - m.mean[b]) / static_cast<double>(n);
  for (std::size_t a = 0; a < k; ++a) m.sd.push_back(std::sqrt(cov[a][a]));
  m.corr = cov;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) m.corr[a][b] = cov[a][b] / (m.sd[a] * m.sd[b]);
  return m;
}

}  // namespace

TEST_CASE("gamma marginal") {
  Rng rng(1, Stream::oracle);
  TruePrior p;
  p.components = {GammaMarginal{5.0, 2.0}};
  const Moments m = moments(sample_true_prior(p, 10000, rng));
  CHECK(m.mean[0] >= 2.4);
  CHECK(m.mean[0] <= 2.6);
  // shape-rate: variance 5 / 4
  CHECK(m.sd[0] == doctest::Approx(std::sqrt(1.25)).epsilon(0.05));
}

TEST_CASE("two-piece skew normal") {
  Rng rng(2, Stream::oracle);
  TruePrior p;
  p.components = {SkewNormalMarginal{7.0, 1.3, 4.0}};
  const std::size_t n = 40000;
  const Tensor x = sample_true_prior(p, n, rng);
  // E[X] = loc + scale * sqrt(2/pi) * (g - 1/g), P(X < loc) = 1 / (1 + g^2)
  const double mean = 7.0 + 1.3 * std::sqrt(2.0 / M_PI) * (4.0 - 0.25);
  std::size_t below = 0;
  for (double v : x.values()) below += v < 7.0;
  CHECK(moments(x).mean[0] == doctest::Approx(mean).epsilon(0.01));
  CHECK(static_cast<double>(below) / n == doctest::Approx(1.0 / 17).epsilon(0.1));

  TruePrior sym;
  sym.components = {SkewNormalMarginal{1.0, 2.0, 1.0}};
  const Moments s = moments(sample_true_prior(sym, n, rng));
  CHECK(s.mean[0] == doctest::Approx(1.0).epsilon(0.02));
  CHECK(s.sd[0] == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("M4 oracle correlations") {
  const StudyConfig c = StudyConfig::preset("M4");
  Rng rng(3, Stream::oracle);
  const Moments m = moments(sample_true_prior(c.prior, 10000, rng));
  CHECK(std::abs(m.corr[0][1] - 0.3) < 0.03);
  CHECK(std::abs(m.corr[0][2] + 0.3) < 0.03);
  CHECK(std::abs(m.corr[1][2] + 0.2) < 0.03);
  CHECK(std::abs(m.corr[0][3]) < 0.03);
  CHECK(m.sd[1] == doctest::Approx(1.3).epsilon(0.03));
  CHECK(m.mean[0] == doctest::Approx(10.0).epsilon(0.01));
}

TEST_CASE("prior validation") {
  TruePrior p;
  p.components = {MvNormalBlock{{0, 0}, {{1, 1.5}, {1.5, 1}}, {1, 1}}};
  CHECK_THROWS_AS(p.validate(), DecompositionError);
  p.components = {GammaMarginal{-1.0, 2.0}};
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.components = {NormalMarginal{0.0, 0.0}};
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("expert statistics") {
  const StudyConfig m1 = StudyConfig::preset("M1");
  Rng rng(0, Stream::oracle);
  const ExpertData e1 = simulate_expert(m1.prior, m1.model, m1.plan, m1.expert_samples, rng);
  CHECK(e1.statistics.side == Side::expert);
  REQUIRE(e1.statistics.groups.size() == 3);
  // independent coefficients: empirical correlation near zero
  CHECK(std::abs(e1.statistics.find("corr")->row(0)[0]) < 0.05);
  const auto q0 = e1.statistics.find("y|x0")->row(0);
  for (double v : q0) CHECK(v == std::round(v));
  // eta at x0 is 0.1 - 0.1 * 0.918 ~ 0: median near 15
  CHECK(q0[2] >= 13.0);
  CHECK(q0[2] <= 17.0);

  const StudyConfig m2 = StudyConfig::preset("M2");
  const ExpertData e2 = simulate_expert(m2.prior, m2.model, m2.plan, m2.expert_samples, rng);
  const double median = e2.statistics.find("y|gr1")->row(0)[2];
  CHECK(median >= 9.0);
  CHECK(median <= 11.0);
  for (double r : e2.statistics.find("R2")->row(0)) {
    CHECK(r > 0.0);
    CHECK(r < 1.0);
  }
  CHECK(e2.statistics.find("corr")->width() == 6);

  CHECK_THROWS_AS(simulate_expert(m1.prior, m1.model, m1.plan, 999, rng), ConfigError);
  CHECK_THROWS_AS(simulate_expert(m2.prior, m1.model, m1.plan, 1000, rng), ConfigError);
}

TEST_CASE("expert files round trip") {
  const StudyConfig c = StudyConfig::preset("M4");
  Rng rng(5, Stream::oracle);
  ExpertData e = simulate_expert(c.prior, c.model, c.plan, 2000, rng);
  e.provenance["seed"] = 5;
  const auto path = std::filesystem::temp_directory_path() / "elicit_test_expert.json";
  save_expert(e, path);
  const ExpertData back = load_expert(path);
  CHECK(back.provenance == e.provenance);
  REQUIRE(back.statistics.groups.size() == e.statistics.groups.size());
  for (std::size_t g = 0; g < e.statistics.groups.size(); ++g) {
    CHECK(back.statistics.groups[g].statistic_names() == e.statistics.groups[g].statistic_names());
    CHECK(back.statistics.groups[g].row(0) == e.statistics.groups[g].row(0));
  }
  CHECK(prior_from_json(prior_to_json(c.prior)) == c.prior);

  {
    std::ofstream os(path);
    os << R"({"statistics": {"y|gr1": {"technique": "quantiles", "levels": [0.5], "values": [null]}}})";
  }
  CHECK_THROWS(load_expert(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_expert(path));
}

TEST_CASE("hyperparameters are addressable") {
  const StudyConfig c = StudyConfig::preset("M4");
  const auto names = c.model.parameter_names;
  const auto hp = c.prior.hyperparameters(names);
  // three locations, three scales, three correlations, two gamma parameters
  CHECK(hp.size() == 11);
  const TruePrior moved = c.prior.with("beta1_beta2.rho", -0.5, names);
  const auto& mv = std::get<MvNormalBlock>(moved.components[0]);
  CHECK(mv.correlation[1][2] == -0.5);
  CHECK(mv.correlation[2][1] == -0.5);
  CHECK(moved.with("sigma.rate", 3.0, names).hyperparameters(names).back().value == 3.0);
  CHECK_THROWS_AS(c.prior.with("beta9.loc", 0.0, names), ConfigError);
}
