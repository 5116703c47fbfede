#pragma once

// Post-training evaluation: convergence slopes, loss-based model averaging,
// sensitivity sweeps over the oracle's hyperparameters and learned-vs-true
// comparison tables. Everything here is pure post-processing.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "elicit/elicitation.hpp"
#include "elicit/flow.hpp"
#include "elicit/models.hpp"
#include "elicit/oracle.hpp"
#include "elicit/trainer.hpp"

namespace elicit {

// OLS slope of loss against epoch index over the last `window` entries.
double loss_slope(std::span<const double> losses, std::size_t window);

struct SlopeEntry {
  std::uint64_t seed = 0;
  double slope = 0.0;
  double scaled = 0.0;     // |slope| * 100
  std::size_t rank = 0;    // 0 = flattest
  bool worst = false;      // among the highest-|slope| runs flagged for inspection
};

struct SlopeReport {
  std::vector<SlopeEntry> entries;  // in input order
  std::vector<std::size_t> ranking() const;  // entry indices, ascending |slope|
};

SlopeReport slope_report(std::span<const ReplicationResult> results, std::size_t window,
                         std::size_t flag_worst = 5);

struct AveragingWeights {
  double gamma = 1.0;
  std::vector<double> losses;
  std::vector<double> deltas;  // loss minus the minimum loss
  std::vector<double> weights;
};

// w_r = exp(-gamma * delta_r) / sum_v exp(-gamma * delta_v).
AveragingWeights averaging_weights(std::span<const double> losses, double gamma = 1.0);

// Finite mixture of trained flows with fixed weights.
class MixturePrior {
 public:
  MixturePrior(std::vector<std::shared_ptr<const JointPriorFlow>> flows, std::vector<double> weights);

  std::size_t dim() const;
  // Component index per draw is chosen with probability w_r; rows are
  // returned in draw order. Output is detached.
  ad::Tensor sample(std::size_t count, Rng& rng) const;
  // log sum_r w_r p_r(theta), one value per row of theta [N, K].
  std::vector<double> log_prob(const ad::Tensor& theta) const;

  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<std::shared_ptr<const JointPriorFlow>> flows_;
  std::vector<double> weights_;
};

ad::Tensor average_prior_sample(std::span<const ReplicationResult> results,
                                const AveragingWeights& weights, std::size_t count, Rng& rng);

using SensitivityGrid = std::vector<std::pair<std::string, std::vector<double>>>;

// Nine points per hyperparameter, centred on the true value: locations span
// +-3 marginal scales, positive quantities 0.25x..1.75x, correlations +-0.3.
SensitivityGrid default_sensitivity_grid(const TruePrior& prior,
                                         const std::vector<std::string>& parameter_names,
                                         std::size_t points = 9);

struct SensitivityRow {
  std::string hyperparameter;
  double value = 0.0;
  std::string statistic;
  std::string level;
  double result = 0.0;
};

// All grid points share one random stream seed, so curves are smooth in the
// swept value. Invalid priors are skipped with a warning.
std::vector<SensitivityRow> sensitivity_analysis(const TruePrior& prior, const GenerativeModel& model,
                                                 const ElicitationPlan& plan, const SensitivityGrid& grid,
                                                 std::size_t samples, std::uint64_t seed);

struct ComparisonRow {
  std::uint64_t seed = 0;
  std::string statistic;
  std::string level;
  double learned = 0.0;
  double truth = 0.0;
};

std::vector<ComparisonRow> comparison_table(std::span<const ReplicationResult> results,
                                            const ElicitedStatisticSet& expert);

// Largest |learned - true| / |true| over quantile rows of one seed.
double max_relative_quantile_error(std::span<const ComparisonRow> rows, std::uint64_t seed,
                                   const ElicitationPlan& plan);

// seed,slope,abs_slope_x100,rank,worst
void write_slopes_csv(const SlopeReport& report, const std::filesystem::path& path);
// seed,final_loss,delta,weight
void write_weights_csv(std::span<const std::uint64_t> seeds, const AveragingWeights& w,
                       const std::filesystem::path& path);
// hyperparameter,value,statistic,level,result
void write_sensitivity_csv(std::span<const SensitivityRow> rows, const std::filesystem::path& path);
// seed,statistic,level,learned,true
void write_comparison_csv(std::span<const ComparisonRow> rows, const std::filesystem::path& path);
// one column per parameter
void write_samples_csv(const ad::Tensor& theta, const std::vector<std::string>& parameter_names,
                       const std::filesystem::path& path);

}  // namespace elicit
