#include "elicit/loss.hpp"

#include <cmath>

#include "elicit/errors.hpp"

namespace elicit {

using ad::Tensor;

std::string_view to_string(LossKind k) {
  return k == LossKind::mmd_energy ? "mmd_energy" : "squared_error";
}

LossKind loss_kind_from_string(std::string_view s) {
  if (s == "mmd_energy") return LossKind::mmd_energy;
  if (s == "squared_error") return LossKind::squared_error;
  throw ConfigError("unknown loss kind '" + std::string(s) + "'");
}

Tensor mmd_energy_biased(const Tensor& x, const Tensor& y) {
  if (x.dim() != 2 || y.dim() != 2 || x.shape()[1] != y.shape()[1]) {
    throw ShapeError("mmd expects [n, d] and [m, d], got " + ad::to_string(x.shape()) + " and " +
                     ad::to_string(y.shape()));
  }
  if (x.shape()[0] == 0 || y.shape()[0] == 0) throw ShapeError("mmd needs non-empty sample sets");
  // k = -dist, so MMD^2 = 2 E|x-y| - E|x-x'| - E|y-y'|.
  const Tensor xx = ad::mean_all(ad::pairwise_distance(x, x));
  const Tensor yy = ad::mean_all(ad::pairwise_distance(y, y));
  const Tensor xy = ad::mean_all(ad::pairwise_distance(x, y));
  const Tensor mmd = 2.0 * xy - xx - yy;
  if (mmd.item() < 0.0 && mmd.item() > -1e-12) return mmd * 0.0;
  return ad::relu(mmd);
}

Tensor mmd_energy_rows(const Tensor& x, const Tensor& y) {
  if (x.dim() != 2 || y.dim() != 1) {
    throw ShapeError("row-wise mmd expects [B, p] and [q], got " + ad::to_string(x.shape()) + " and " +
                     ad::to_string(y.shape()));
  }
  const std::size_t b = x.shape()[0];
  const std::size_t p = x.shape()[1];
  const std::size_t q = y.shape()[0];
  if (b == 0 || p == 0 || q == 0) throw ShapeError("mmd needs non-empty sample sets");
  const auto xv = x.values();
  const auto yv = y.values();

  double yy = 0;
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < q; ++j) yy += std::abs(yv[i] - yv[j]);
  }
  yy /= static_cast<double>(q * q);

  std::vector<char> active(b, 1);
  double total = 0;
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = xv.data() + r * p;
    double xx = 0, xy = 0;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) xx += std::abs(row[i] - row[j]);
      for (std::size_t j = 0; j < q; ++j) xy += std::abs(row[i] - yv[j]);
    }
    const double mmd = 2.0 * xy / static_cast<double>(p * q) - xx / static_cast<double>(p * p) - yy;
    if (mmd > 0) {
      total += mmd;
    } else {
      active[r] = 0;
    }
  }
  total /= static_cast<double>(b);

  return Tensor({}, {total}, {x, y}, [x, y, b, p, q, active](const ad::Node& self) {
    const auto& xv = x.node()->values;
    const auto& yv = y.node()->values;
    const double g = self.grad[0] / static_cast<double>(b);
    const double cxx = g / static_cast<double>(p * p);
    const double cxy = 2.0 * g / static_cast<double>(p * q);
    const double cyy = g / static_cast<double>(q * q);
    std::vector<double>* gx = x.requires_grad() ? &x.node()->grad_buffer() : nullptr;
    std::vector<double>* gy = y.requires_grad() ? &y.node()->grad_buffer() : nullptr;
    auto sign = [](double d) { return static_cast<double>((d > 0) - (d < 0)); };
    std::size_t live = 0;
    for (std::size_t r = 0; r < b; ++r) {
      if (!active[r]) continue;
      ++live;
      const double* row = xv.data() + r * p;
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
          // d|xi - xj| appears twice in the double sum, once per ordering.
          const double s = sign(row[i] - row[j]);
          if (gx) (*gx)[r * p + i] -= 2.0 * cxx * s;
        }
        for (std::size_t j = 0; j < q; ++j) {
          const double s = sign(row[i] - yv[j]);
          if (gx) (*gx)[r * p + i] += cxy * s;
          if (gy) (*gy)[j] -= cxy * s;
        }
      }
    }
    if (gy && live > 0) {
      for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) {
          (*gy)[i] -= 2.0 * cyy * static_cast<double>(live) * sign(yv[i] - yv[j]);
        }
      }
    }
  });
}

Tensor squared_error(const Tensor& t, const Tensor& target) {
  if (t.dim() != 2 || target.dim() != 1 || t.shape()[1] != target.shape()[0]) {
    throw ShapeError("squared_error expects [B, p] and [p], got " + ad::to_string(t.shape()) +
                     " and " + ad::to_string(target.shape()));
  }
  return ad::mean_all(ad::square(t - target));
}

TotalLoss total_loss(std::span<const NamedLoss> components,
                     std::span<const LossComponentSpec> specs) {
  TotalLoss out;
  Tensor total = Tensor::scalar(0.0);
  for (const NamedLoss& c : components) {
    const LossComponentSpec* spec = nullptr;
    for (const auto& s : specs) {
      if (s.name == c.name) spec = &s;
    }
    if (spec == nullptr) throw ConfigError("no loss weight for component '" + c.name + "'");
    if (spec->weight < 0) throw ConfigError("negative loss weight for '" + c.name + "'");
    total = total + c.value * spec->weight;
    out.report.names.push_back(c.name);
    out.report.components.push_back(c.value.item());
    out.report.weights.push_back(spec->weight);
  }
  out.report.total = total.item();
  out.total = total;
  return out;
}

std::vector<LossComponentSpec> default_loss_components(const ElicitationPlan& plan) {
  std::vector<LossComponentSpec> out;
  for (const PlanEntry& e : plan.entries) {
    if (e.technique == Technique::quantiles) {
      out.push_back({e.target, LossKind::mmd_energy, 1.0});
    } else {
      out.push_back({e.target, LossKind::squared_error, 0.1});
    }
  }
  return out;
}

void check_expert_matches_plan(const ElicitedStatisticSet& expert, const ElicitationPlan& plan) {
  for (const PlanEntry& e : plan.entries) {
    const StatisticGroup* g = expert.find(e.target);
    if (g == nullptr) throw ConfigError("expert data lacks statistic '" + e.target + "'");
    if (g->technique != e.technique) {
      throw ConfigError("expert statistic '" + e.target + "' uses technique " +
                        std::string(to_string(g->technique)));
    }
    if (e.technique == Technique::quantiles && g->width() != e.levels.size()) {
      throw ConfigError("expert statistic '" + e.target + "' has " + std::to_string(g->width()) +
                        " quantiles, plan expects " + std::to_string(e.levels.size()));
    }
  }
  for (const StatisticGroup& g : expert.groups) {
    bool planned = false;
    for (const PlanEntry& e : plan.entries) planned = planned || e.target == g.target;
    if (!planned) throw ConfigError("expert statistic '" + g.target + "' is not in the plan");
  }
}

TotalLoss evaluate_loss(const ElicitedStatisticSet& model, const ElicitedStatisticSet& expert,
                        std::span<const LossComponentSpec> specs) {
  std::vector<NamedLoss> parts;
  for (const StatisticGroup& g : model.groups) {
    const StatisticGroup* e = expert.find(g.target);
    if (e == nullptr) throw ConfigError("expert data lacks statistic '" + g.target + "'");
    if (e->width() != g.width()) {
      throw ConfigError("statistic '" + g.target + "' width differs between model and expert");
    }
    const LossComponentSpec* spec = nullptr;
    for (const auto& s : specs) {
      if (s.name == g.target) spec = &s;
    }
    if (spec == nullptr) throw ConfigError("no loss component for statistic '" + g.target + "'");
    const Tensor target = e->values.detach();
    if (spec->kind == LossKind::mmd_energy) {
      parts.push_back({g.target, mmd_energy_rows(g.values, ad::reshape(target, {e->width()}))});
    } else {
      parts.push_back({g.target, squared_error(g.values, ad::reshape(target, {e->width()}))});
    }
  }
  return total_loss(parts, specs);
}

}  // namespace elicit
