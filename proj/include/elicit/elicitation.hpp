#pragma once

// Elicitation techniques: turn samples of target quantities into elicited
// statistics. Model-side and expert-side statistics go through the same
// functions; only the number of batch rows differs.
//
// Statistic names follow "<target>:<technique>[:<level>]", e.g.
// "y|x0:quantiles:0.05" or "corr:moment:beta0_beta1".

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "elicit/tensor.hpp"

namespace elicit {

enum class Technique { quantiles, moment };

std::string_view to_string(Technique t);
Technique technique_from_string(std::string_view s);

struct PlanEntry {
  std::string target;
  Technique technique = Technique::quantiles;
  std::vector<double> levels;  // quantile levels; empty for moment points

  bool operator==(const PlanEntry&) const = default;
};

struct ElicitationPlan {
  std::vector<PlanEntry> entries;

  static std::vector<double> default_levels() { return {0.05, 0.25, 0.50, 0.75, 0.95}; }
  // One quantile entry per distributional target, then the grouped
  // parameter-correlation entry "corr".
  static ElicitationPlan standard(std::span<const std::string> targets);

  void validate() const;
  bool operator==(const ElicitationPlan&) const = default;
};

// Samples of one target quantity.
struct TargetQuantity {
  std::string name;
  // Distributional targets: [B, S]. Point targets (correlations): [B, P].
  ad::Tensor values;
  // Column labels for point targets (e.g. "beta0_beta1").
  std::vector<std::string> labels;
  bool pointwise = false;
};

struct TargetQuantitySamples {
  std::vector<TargetQuantity> targets;

  const TargetQuantity* find(std::string_view name) const;
  void add(TargetQuantity t) { targets.push_back(std::move(t)); }
};

enum class Side { model, expert };

struct StatisticGroup {
  std::string target;
  Technique technique = Technique::quantiles;
  // Quantile levels rendered as strings, or pair labels.
  std::vector<std::string> labels;
  // [B, p]; B = 1 on the expert side.
  ad::Tensor values;

  std::string name() const;
  std::vector<std::string> statistic_names() const;
  std::size_t rows() const { return values.shape()[0]; }
  std::size_t width() const { return values.shape()[1]; }
  // Row r as plain numbers.
  std::vector<double> row(std::size_t r) const;
};

struct ElicitedStatisticSet {
  Side side = Side::model;
  std::vector<StatisticGroup> groups;

  const StatisticGroup* find(std::string_view target) const;
};

// Linear interpolation between closest ranks at position p*(S-1), along the
// last axis: [..., S] -> [..., |levels|]. Differentiable via the sort.
ad::Tensor empirical_quantiles(const ad::Tensor& values, std::span<const double> levels);

ElicitedStatisticSet build_statistics(const TargetQuantitySamples& targets,
                                      const ElicitationPlan& plan, Side side);

std::string format_level(double level);

}  // namespace elicit
