#include "elicit/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "elicit/errors.hpp"
#include "elicit/log.hpp"

namespace elicit {

using ad::Tensor;

namespace {

void require_theta(const Tensor& theta, std::size_t k, const char* who) {
  if (theta.dim() != 3 || theta.shape()[2] != k) {
    throw ShapeError(std::string(who) + " expects theta [B, S, " + std::to_string(k) + "], got " +
                     ad::to_string(theta.shape()));
  }
}

Tensor column(const Tensor& theta, std::size_t k) { return ad::select(theta, 2, k); }

double type7_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<Tensor> group_means(const Tensor& theta, const DesignSpec& design) {
  const Tensor b0 = column(theta, 0);
  const Tensor b1 = column(theta, 1);
  const Tensor b2 = column(theta, 2);
  std::vector<Tensor> mu;
  for (const auto& g : design.groups) {
    Tensor m = b0;
    if (g[0] != 0.0) m = m + b1 * g[0];
    if (g[1] != 0.0) m = m + b2 * g[1];
    mu.push_back(m);
  }
  return mu;
}

void require_positive_sigma(const Tensor& sigma) {
  for (double s : sigma.values()) {
    if (!(s > 0)) {
      throw DomainError("non-positive sigma " + std::to_string(s) +
                            " reached the normal likelihood (positivity map broken?)",
                        0);
    }
  }
}

}  // namespace

DesignSpec DesignSpec::binomial(std::size_t n) {
  DesignSpec d;
  std::vector<double> raw(n);
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = static_cast<double>(i + 1);
    mean += raw[i];
  }
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : raw) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  d.x.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.x[i] = raw[i] / sd;
  d.x0 = type7_quantile(d.x, 0.25);
  d.x1 = type7_quantile(d.x, 0.75);
  return d;
}

DesignSpec DesignSpec::three_groups() {
  DesignSpec d;
  d.groups = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
  return d;
}

GenerativeModel GenerativeModel::binomial() {
  GenerativeModel m;
  m.kind = ModelKind::binomial_regression;
  m.design = DesignSpec::binomial();
  m.parameter_names = {"beta0", "beta1"};
  m.total_count = 30;
  return m;
}

GenerativeModel GenerativeModel::normal() {
  GenerativeModel m;
  m.kind = ModelKind::normal_regression;
  m.design = DesignSpec::three_groups();
  m.parameter_names = {"beta0", "beta1", "beta2", "sigma"};
  m.positivity_dims = {3};
  return m;
}

std::vector<std::string> GenerativeModel::target_names() const {
  if (kind == ModelKind::binomial_regression) return {"y|x0", "y|x1"};
  std::vector<std::string> out;
  for (std::size_t g = 0; g < design.groups.size(); ++g) out.push_back("y|gr" + std::to_string(g + 1));
  out.push_back("R2");
  return out;
}

void GenerativeModel::validate() const {
  if (kind == ModelKind::binomial_regression) {
    if (total_count < 1) throw ConfigError("binomial total_count must be >= 1");
    if (design.x.empty()) throw ConfigError("binomial design needs a continuous predictor");
    if (!(design.x0 < design.x1)) throw ConfigError("binomial design needs x0 < x1");
    if (parameter_names.size() != 2) throw ConfigError("binomial model has two parameters");
  } else {
    if (design.groups.empty()) throw ConfigError("normal design needs dummy-coded groups");
    if (parameter_names.size() != 4) throw ConfigError("normal model has four parameters");
    if (positivity_dims != std::vector<std::size_t>{3}) {
      throw ConfigError("normal model needs sigma (index 3) as positivity dim");
    }
  }
}

namespace {

// y = sum_k k * softmax((log Binom(k | N, sigmoid(eta)) + g_k) / tau) for each
// element of eta, with g_k standard Gumbel. One fused node: only the relaxed
// probabilities are kept for the backward pass, where
// dy/deta = (1/tau) sum_k p_k (k - y) (k - N sigmoid(eta)).
Tensor relaxed_binomial(const Tensor& eta, int total_count, double temperature, Rng& rng) {
  const std::size_t m = eta.size();
  const auto n = static_cast<std::size_t>(total_count) + 1;
  const double big_n = total_count;
  std::vector<double> log_choose(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double kd = static_cast<double>(k);
    log_choose[k] = std::lgamma(big_n + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(big_n - kd + 1.0);
  }
  auto probs = std::make_shared<std::vector<double>>(m * n);
  std::vector<double> y(m);
  const auto ev = eta.values();
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double e = ev[i];
    // log sigmoid(e) and log sigmoid(-e), stable in both tails
    const double lp = -(std::max(-e, 0.0) + std::log1p(std::exp(-std::abs(e))));
    const double lq = lp - e;
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const double kd = static_cast<double>(k);
      logits[k] = (log_choose[k] + kd * lp + (big_n - kd) * lq + rng.gumbel()) / temperature;
      hi = std::max(hi, logits[k]);
    }
    double* p = probs->data() + i * n;
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += (p[k] = std::exp(logits[k] - hi));
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      p[k] /= z;
      acc += static_cast<double>(k) * p[k];
    }
    y[i] = acc;
  }
  return Tensor(eta.shape(), std::move(y), {eta},
                [eta, probs, n, big_n, temperature](const ad::Node& self) {
                  auto& g = eta.node()->grad_buffer();
                  const auto& ev = eta.node()->values;
                  for (std::size_t i = 0; i < self.values.size(); ++i) {
                    if (self.grad[i] == 0.0) continue;
                    const double mu = big_n / (1.0 + std::exp(-ev[i]));
                    const double yi = self.values[i];
                    const double* p = probs->data() + i * n;
                    double d = 0.0;
                    for (std::size_t k = 0; k < n; ++k) {
                      const double kd = static_cast<double>(k);
                      d += p[k] * (kd - yi) * (kd - mu);
                    }
                    g[i] += self.grad[i] * d / temperature;
                  }
                });
}

}  // namespace

TargetQuantitySamples simulate_binomial(const Tensor& theta, const DesignSpec& design,
                                        int total_count, double temperature, Rng& rng) {
  if (!(temperature > 0)) throw ConfigError("Gumbel-softmax temperature must be positive");
  require_theta(theta, 2, "simulate_binomial");
  const Tensor b0 = column(theta, 0);
  const Tensor b1 = column(theta, 1);
  TargetQuantitySamples out;
  const std::pair<const char*, double> points[] = {{"y|x0", design.x0}, {"y|x1", design.x1}};
  for (const auto& [name, xv] : points) {
    out.add({name, relaxed_binomial(b0 + b1 * xv, total_count, temperature, rng), {}, false});
  }
  return out;
}

TargetQuantitySamples simulate_binomial_exact(const Tensor& theta, const DesignSpec& design,
                                              int total_count, Rng& rng) {
  require_theta(theta, 2, "simulate_binomial_exact");
  const std::size_t b = theta.shape()[0];
  const std::size_t s = theta.shape()[1];
  const auto tv = theta.values();
  TargetQuantitySamples out;
  const std::pair<const char*, double> points[] = {{"y|x0", design.x0}, {"y|x1", design.x1}};
  for (const auto& [name, xv] : points) {
    std::vector<double> y(b * s);
    for (std::size_t i = 0; i < b * s; ++i) {
      const double eta = tv[i * 2] + tv[i * 2 + 1] * xv;
      const double p = 1.0 / (1.0 + std::exp(-eta));
      y[i] = rng.binomial(total_count, p);
    }
    out.add({name, Tensor::from({b, s}, std::move(y)), {}, false});
  }
  return out;
}

TargetQuantitySamples simulate_normal(const Tensor& theta, const DesignSpec& design, Rng& rng) {
  require_theta(theta, 4, "simulate_normal");
  const std::size_t b = theta.shape()[0];
  const std::size_t s = theta.shape()[1];
  const Tensor sigma = column(theta, 3);
  require_positive_sigma(sigma);
  const auto mu = group_means(theta, design);
  TargetQuantitySamples out;
  for (std::size_t g = 0; g < mu.size(); ++g) {
    const Tensor eps = Tensor::from({b, s}, rng.normals(b * s));
    out.add({"y|gr" + std::to_string(g + 1), mu[g] + sigma * eps, {}, false});
  }
  return out;
}

Tensor compute_r2(const Tensor& theta, const DesignSpec& design) {
  require_theta(theta, 4, "compute_r2");
  const Tensor sigma = column(theta, 3);
  require_positive_sigma(sigma);
  std::vector<Tensor> mu;
  for (const Tensor& m : group_means(theta, design)) mu.push_back(ad::unsqueeze(m, -1));
  const Tensor between = ad::variance(ad::concat(mu, -1), -1);
  return between / (between + ad::square(sigma));
}

TargetQuantity compute_param_correlations(const Tensor& theta,
                                          const std::vector<std::string>& parameter_names) {
  if (theta.dim() != 3) throw ShapeError("correlations expect theta [B, S, K]");
  const std::size_t b = theta.shape()[0];
  const std::size_t s = theta.shape()[1];
  const std::size_t k = theta.shape()[2];
  if (s < 2) throw DomainError("correlations need at least two prior draws", 0);
  if (parameter_names.size() != k) throw ShapeError("parameter name count differs from K");

  const Tensor centered = theta - ad::mean(theta, 1, true);  // [B, S, K]
  const Tensor var = ad::mean(ad::square(centered), 1);      // [B, K]
  std::vector<Tensor> cols;
  for (std::size_t j = 0; j < k; ++j) cols.push_back(column(centered, j));

  TargetQuantity out;
  out.name = "corr";
  out.pointwise = true;
  std::vector<Tensor> pairs;
  bool degenerate = false;
  const auto vv = var.values();
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const Tensor cov = ad::mean(cols[i] * cols[j], 1);  // [B]
      std::vector<double> mask(b);
      std::vector<double> pad(b);
      for (std::size_t r = 0; r < b; ++r) {
        const bool ok = vv[r * k + i] > 0 && vv[r * k + j] > 0;
        degenerate = degenerate || !ok;
        mask[r] = ok ? 1.0 : 0.0;
        pad[r] = ok ? 0.0 : 1.0;
      }
      const Tensor den =
          ad::sqrt(ad::select(var, 1, i) * ad::select(var, 1, j)) + Tensor::vector(std::move(pad));
      pairs.push_back(ad::unsqueeze(cov * Tensor::vector(std::move(mask)) / den, -1));
      out.labels.push_back(parameter_names[i] + "_" + parameter_names[j]);
    }
  }
  if (degenerate) warn("zero-variance prior coordinate: correlation set to 0 (degenerate prior)");
  out.values = ad::concat(pairs, 1);
  return out;
}

TargetQuantitySamples simulate_targets(const GenerativeModel& model, const Tensor& theta,
                                       const SimulationOptions& options, Rng& rng) {
  TargetQuantitySamples out;
  if (model.kind == ModelKind::binomial_regression) {
    out = options.mode == SamplingMode::relaxed
              ? simulate_binomial(theta, model.design, model.total_count, options.temperature, rng)
              : simulate_binomial_exact(theta, model.design, model.total_count, rng);
  } else {
    out = simulate_normal(theta, model.design, rng);
    out.add({"R2", compute_r2(theta, model.design), {}, false});
  }
  out.add(compute_param_correlations(theta, model.parameter_names));
  return out;
}

}  // namespace elicit
