#pragma once

// Generative-model simulators. Prior draws come in as theta [B, S, K]; the
// simulators return the target quantities consumed by the elicitation layer.

#include <array>
#include <string>
#include <vector>

#include "elicit/elicitation.hpp"
#include "elicit/rng.hpp"
#include "elicit/tensor.hpp"

namespace elicit {

enum class ModelKind { binomial_regression, normal_regression };

struct DesignSpec {
  // Binomial: continuous predictor and the two query points.
  std::vector<double> x;
  double x0 = 0.0;
  double x1 = 0.0;
  // Normal: dummy codes (x1, x2) per group.
  std::vector<std::array<double, 2>> groups;

  // x = (1..n) / sd(1..n), query points at the 25% / 75% quantiles of x.
  static DesignSpec binomial(std::size_t n = 50);
  // Three-level factor: (0,0), (1,0), (0,1).
  static DesignSpec three_groups();

  bool operator==(const DesignSpec&) const = default;
};

struct GenerativeModel {
  ModelKind kind = ModelKind::binomial_regression;
  DesignSpec design;
  std::vector<std::string> parameter_names;
  std::vector<std::size_t> positivity_dims;
  int total_count = 30;

  static GenerativeModel binomial();
  static GenerativeModel normal();

  std::size_t dim() const { return parameter_names.size(); }
  // Distributional target names in simulation order.
  std::vector<std::string> target_names() const;
  void validate() const;
  bool operator==(const GenerativeModel&) const = default;
};

enum class SamplingMode {
  relaxed,  // Gumbel-softmax for discrete likelihoods; differentiable
  exact,    // hard draws; used for oracle and post-training evaluation
};

struct SimulationOptions {
  SamplingMode mode = SamplingMode::relaxed;
  double temperature = 1.0;
};

// y|x0 and y|x1 via the categorical Gumbel-softmax relaxation over {0..N}
// with expected-value readout. theta: [B, S, 2].
TargetQuantitySamples simulate_binomial(const ad::Tensor& theta, const DesignSpec& design,
                                        int total_count, double temperature, Rng& rng);
// Same targets with exact Binomial draws (not differentiable).
TargetQuantitySamples simulate_binomial_exact(const ad::Tensor& theta, const DesignSpec& design,
                                              int total_count, Rng& rng);

// y|gr1..3 with one reparameterized draw per prior sample and group.
// theta: [B, S, 4] = (beta0, beta1, beta2, sigma).
TargetQuantitySamples simulate_normal(const ad::Tensor& theta, const DesignSpec& design, Rng& rng);

// Per prior sample: Var_groups(mu) / (Var_groups(mu) + sigma^2), population
// variance over the group means. Returns [B, S].
ad::Tensor compute_r2(const ad::Tensor& theta, const DesignSpec& design);

// Pearson correlation across S for every parameter pair: [B, K(K-1)/2].
// Pairs with a zero-variance coordinate get 0 and a diagnostics warning.
TargetQuantity compute_param_correlations(const ad::Tensor& theta,
                                          const std::vector<std::string>& parameter_names);

// Every target quantity of the model, including R2 (normal) and "corr".
TargetQuantitySamples simulate_targets(const GenerativeModel& model, const ad::Tensor& theta,
                                       const SimulationOptions& options, Rng& rng);

}  // namespace elicit
