#pragma once

#include <span>
#include <string>
#include <vector>

#include "elicit/elicitation.hpp"
#include "elicit/tensor.hpp"

namespace elicit {

enum class LossKind { mmd_energy, squared_error };

std::string_view to_string(LossKind k);
LossKind loss_kind_from_string(std::string_view s);

struct LossComponentSpec {
  std::string name;  // plan target the component compares
  LossKind kind = LossKind::mmd_energy;
  double weight = 1.0;
  bool operator==(const LossComponentSpec&) const = default;
};

struct LossReport {
  std::vector<std::string> names;
  std::vector<double> components;
  std::vector<double> weights;
  double total = 0.0;
};

struct TotalLoss {
  ad::Tensor total;
  LossReport report;
};

// Biased MMD^2 with the energy kernel k(a, b) = -||a - b||, clamped at zero.
// x: [n, d], y: [m, d].
ad::Tensor mmd_energy_biased(const ad::Tensor& x, const ad::Tensor& y);

// Row-wise energy MMD between sets of scalars: each row of x [B, p] is one
// sample set of p values, compared with the q values of y [q]. Returns the
// mean over rows of the per-row (clamped) biased MMD^2. Same kernel as
// mmd_energy_biased applied to column vectors.
ad::Tensor mmd_energy_rows(const ad::Tensor& x, const ad::Tensor& y);

// Mean over batch rows and columns of (t - target)^2; t: [B, p], target: [p].
ad::Tensor squared_error(const ad::Tensor& t, const ad::Tensor& target);

struct NamedLoss {
  std::string name;
  ad::Tensor value;
};

// Weighted sum; every component must have a spec with the same name.
TotalLoss total_loss(std::span<const NamedLoss> components,
                     std::span<const LossComponentSpec> specs);

// MMD (weight 1) for quantile groups, squared error (weight 0.1) for moment
// points.
std::vector<LossComponentSpec> default_loss_components(const ElicitationPlan& plan);

// Pairs every model group with its expert counterpart and returns the
// weighted total. Throws ConfigError naming the first mismatched statistic.
TotalLoss evaluate_loss(const ElicitedStatisticSet& model, const ElicitedStatisticSet& expert,
                        std::span<const LossComponentSpec> specs);

// Checks that the expert set provides every group of the plan with the
// right technique and width.
void check_expert_matches_plan(const ElicitedStatisticSet& expert, const ElicitationPlan& plan);

}  // namespace elicit
