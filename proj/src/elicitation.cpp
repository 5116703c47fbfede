#include "elicit/elicitation.hpp"

#include <cmath>
#include <sstream>

#include "elicit/errors.hpp"

namespace elicit {

std::string_view to_string(Technique t) {
  return t == Technique::quantiles ? "quantiles" : "moment";
}

Technique technique_from_string(std::string_view s) {
  if (s == "quantiles") return Technique::quantiles;
  if (s == "moment") return Technique::moment;
  throw ConfigError("unknown elicitation technique '" + std::string(s) + "'");
}

std::string format_level(double level) {
  std::ostringstream os;
  os << level;
  return os.str();
}

ElicitationPlan ElicitationPlan::standard(std::span<const std::string> targets) {
  ElicitationPlan plan;
  for (const std::string& t : targets) {
    plan.entries.push_back({t, Technique::quantiles, default_levels()});
  }
  plan.entries.push_back({"corr", Technique::moment, {}});
  return plan;
}

void ElicitationPlan::validate() const {
  if (entries.empty()) throw ConfigError("elicitation plan is empty");
  for (const PlanEntry& e : entries) {
    if (e.technique != Technique::quantiles) continue;
    if (e.levels.empty()) throw ConfigError("quantile entry '" + e.target + "' has no levels");
    for (std::size_t i = 0; i < e.levels.size(); ++i) {
      const double p = e.levels[i];
      if (!(p > 0.0 && p < 1.0)) {
        throw ConfigError("quantile level " + format_level(p) + " of '" + e.target +
                          "' outside (0, 1)");
      }
      if (i > 0 && !(p > e.levels[i - 1])) {
        throw ConfigError("quantile levels of '" + e.target + "' not strictly increasing");
      }
    }
  }
}

const TargetQuantity* TargetQuantitySamples::find(std::string_view name) const {
  for (const TargetQuantity& t : targets) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string StatisticGroup::name() const {
  return target + ":" + std::string(to_string(technique));
}

std::vector<std::string> StatisticGroup::statistic_names() const {
  std::vector<std::string> out;
  for (const std::string& l : labels) out.push_back(name() + ":" + l);
  return out;
}

std::vector<double> StatisticGroup::row(std::size_t r) const {
  const std::size_t w = width();
  const auto v = values.values();
  return {v.begin() + static_cast<std::ptrdiff_t>(r * w),
          v.begin() + static_cast<std::ptrdiff_t>((r + 1) * w)};
}

const StatisticGroup* ElicitedStatisticSet::find(std::string_view target) const {
  for (const StatisticGroup& g : groups) {
    if (g.target == target) return &g;
  }
  return nullptr;
}

ad::Tensor empirical_quantiles(const ad::Tensor& values, std::span<const double> levels) {
  if (values.dim() < 1) throw ShapeError("quantiles need rank >= 1 input");
  const std::size_t s = values.shape().back();
  if (s < 2) throw DomainError("quantiles need at least two samples", 0);
  std::vector<std::size_t> lo(levels.size());
  std::vector<std::size_t> hi(levels.size());
  std::vector<double> frac(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double p = levels[i];
    if (!(p > 0.0 && p < 1.0)) {
      throw ConfigError("quantile level " + format_level(p) + " outside (0, 1)");
    }
    const double pos = p * static_cast<double>(s - 1);
    lo[i] = static_cast<std::size_t>(std::floor(pos));
    hi[i] = std::min(lo[i] + 1, s - 1);
    frac[i] = pos - static_cast<double>(lo[i]);
  }
  const ad::Tensor sorted = ad::sort_with_gradient(values).sorted;
  const ad::Tensor w_hi = ad::Tensor::vector(frac);
  std::vector<double> one_minus(frac.size());
  for (std::size_t i = 0; i < frac.size(); ++i) one_minus[i] = 1.0 - frac[i];
  const ad::Tensor w_lo = ad::Tensor::vector(std::move(one_minus));
  return ad::take(sorted, -1, lo) * w_lo + ad::take(sorted, -1, hi) * w_hi;
}

ElicitedStatisticSet build_statistics(const TargetQuantitySamples& targets,
                                      const ElicitationPlan& plan, Side side) {
  plan.validate();
  ElicitedStatisticSet out;
  out.side = side;
  for (const PlanEntry& e : plan.entries) {
    const TargetQuantity* t = targets.find(e.target);
    if (t == nullptr) throw ConfigError("plan target '" + e.target + "' was not simulated");
    StatisticGroup g;
    g.target = e.target;
    g.technique = e.technique;
    if (e.technique == Technique::quantiles) {
      if (t->pointwise) {
        throw ConfigError("quantiles requested for point target '" + e.target + "'");
      }
      g.values = empirical_quantiles(t->values, e.levels);
      for (double p : e.levels) g.labels.push_back(format_level(p));
    } else {
      if (!t->pointwise) {
        throw ConfigError("moment point requested for distributional target '" + e.target + "'");
      }
      g.values = t->values;
      g.labels = t->labels;
    }
    out.groups.push_back(std::move(g));
  }
  return out;
}

}  // namespace elicit
