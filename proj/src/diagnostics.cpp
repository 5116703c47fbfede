#include "elicit/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "elicit/errors.hpp"
#include "elicit/log.hpp"

namespace elicit {

using ad::Tensor;

namespace {

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

}  // namespace

// ------------------------------------------------------------------ slopes

double loss_slope(std::span<const double> losses, std::size_t window) {
  if (window < 2) throw ConfigError("slope window must be at least 2");
  if (window > losses.size()) {
    throw ConfigError("slope window " + std::to_string(window) + " exceeds trajectory length " +
                      std::to_string(losses.size()));
  }
  const auto tail = losses.subspan(losses.size() - window);
  const double n = static_cast<double>(window);
  const double xbar = (n - 1.0) / 2.0;
  const double ybar = std::accumulate(tail.begin(), tail.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < window; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (tail[i] - ybar);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

std::vector<std::size_t> SlopeReport::ranking() const {
  std::vector<std::size_t> idx(entries.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[entries[i].rank] = i;
  return idx;
}

SlopeReport slope_report(std::span<const ReplicationResult> results, std::size_t window,
                         std::size_t flag_worst) {
  SlopeReport rep;
  for (const auto& r : results) {
    const auto totals = r.trajectory.totals();
    SlopeEntry e;
    e.seed = r.seed;
    e.slope = loss_slope(totals, window);
    e.scaled = std::abs(e.slope) * 100.0;
    rep.entries.push_back(e);
  }
  std::vector<std::size_t> order(rep.entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rep.entries[a].scaled < rep.entries[b].scaled;
  });
  for (std::size_t k = 0; k < order.size(); ++k) {
    rep.entries[order[k]].rank = k;
    rep.entries[order[k]].worst = k + flag_worst >= order.size();
  }
  return rep;
}

// --------------------------------------------------------------- averaging

AveragingWeights averaging_weights(std::span<const double> losses, double gamma) {
  if (losses.empty()) throw ConfigError("averaging needs at least one loss");
  for (double l : losses) {
    if (!std::isfinite(l)) throw ConfigError("averaging needs finite losses");
  }
  AveragingWeights w;
  w.gamma = gamma;
  w.losses.assign(losses.begin(), losses.end());
  const double lmin = *std::min_element(losses.begin(), losses.end());
  double z = 0;
  for (double l : losses) {
    w.deltas.push_back(l - lmin);
    w.weights.push_back(std::exp(-gamma * (l - lmin)));
    z += w.weights.back();
  }
  for (double& x : w.weights) x /= z;
  return w;
}

MixturePrior::MixturePrior(std::vector<std::shared_ptr<const JointPriorFlow>> flows,
                           std::vector<double> weights)
    : flows_(std::move(flows)), weights_(std::move(weights)) {
  if (flows_.empty() || flows_.size() != weights_.size()) {
    throw ConfigError("mixture needs one weight per flow");
  }
  for (const auto& f : flows_) {
    if (!f) throw ConfigError("mixture component has no flow");
    if (f->config().dim_theta != flows_.front()->config().dim_theta) {
      throw ConfigError("mixture components differ in dimension");
    }
  }
}

std::size_t MixturePrior::dim() const { return flows_.front()->config().dim_theta; }

Tensor MixturePrior::sample(std::size_t count, Rng& rng) const {
  const std::size_t k = dim();
  std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
  std::vector<std::size_t> label(count);
  std::vector<std::size_t> per(flows_.size(), 0);
  for (auto& l : label) ++per[l = pick(rng.engine())];

  std::vector<double> out(count * k);
  for (std::size_t r = 0; r < flows_.size(); ++r) {
    if (per[r] == 0) continue;
    const Tensor draws = flows_[r]->sample(per[r], rng);
    const auto v = draws.values();
    std::size_t next = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (label[i] != r) continue;
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(next * k), k,
                  out.begin() + static_cast<std::ptrdiff_t>(i * k));
      ++next;
    }
  }
  return Tensor::from({count, k}, std::move(out));
}

std::vector<double> MixturePrior::log_prob(const Tensor& theta) const {
  const std::size_t n = theta.shape()[0];
  std::vector<std::vector<double>> parts;
  for (const auto& f : flows_) {
    const Tensor lp = f->log_prob(theta.detach());
    parts.emplace_back(lp.values().begin(), lp.values().end());
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < parts.size(); ++r) {
      if (weights_[r] > 0) m = std::max(m, parts[r][i]);
    }
    if (!std::isfinite(m)) {
      out[i] = m;
      continue;
    }
    double s = 0;
    for (std::size_t r = 0; r < parts.size(); ++r) {
      if (weights_[r] > 0) s += weights_[r] * std::exp(parts[r][i] - m);
    }
    out[i] = m + std::log(s);
  }
  return out;
}

Tensor average_prior_sample(std::span<const ReplicationResult> results, const AveragingWeights& weights,
                            std::size_t count, Rng& rng) {
  if (results.size() != weights.weights.size()) {
    throw ConfigError("averaging weights do not match the results");
  }
  std::vector<std::shared_ptr<const JointPriorFlow>> flows;
  for (const auto& r : results) {
    if (!r.flow) throw ConfigError("no trained flow available for seed " + std::to_string(r.seed));
    flows.push_back(r.flow);
  }
  return MixturePrior(std::move(flows), weights.weights).sample(count, rng);
}

// ------------------------------------------------------------- sensitivity

SensitivityGrid default_sensitivity_grid(const TruePrior& prior,
                                         const std::vector<std::string>& parameter_names,
                                         std::size_t points) {
  if (points < 1) throw ConfigError("sensitivity grid needs at least one point");
  SensitivityGrid grid;
  const double half = static_cast<double>(points - 1) / 2.0;
  for (const Hyperparameter& h : prior.hyperparameters(parameter_names)) {
    std::vector<double> values;
    for (std::size_t i = 0; i < points; ++i) {
      const double t = points == 1 ? 0.0 : (static_cast<double>(i) - half) / half;  // [-1, 1]
      switch (h.kind) {
        case Hyperparameter::Kind::location:
          values.push_back(h.value + 3.0 * h.reference_scale * t);
          break;
        case Hyperparameter::Kind::positive:
          values.push_back(h.value * (1.0 + 0.75 * t));
          break;
        case Hyperparameter::Kind::correlation:
          values.push_back(h.value + 0.3 * t);
          break;
      }
    }
    grid.emplace_back(h.name, std::move(values));
  }
  return grid;
}

std::vector<SensitivityRow> sensitivity_analysis(const TruePrior& prior, const GenerativeModel& model,
                                                 const ElicitationPlan& plan, const SensitivityGrid& grid,
                                                 std::size_t samples, std::uint64_t seed) {
  prior.validate();
  std::vector<SensitivityRow> rows;
  for (const auto& [name, values] : grid) {
    for (double v : values) {
      ElicitedStatisticSet stats;
      try {
        const TruePrior p = prior.with(name, v, model.parameter_names);
        p.validate();
        Rng rng(seed, Stream::oracle);
        const Tensor theta = sample_true_prior(p, samples, rng);
        stats = forward_statistics(theta, model, plan, rng);
      } catch (const DomainError& e) {
        warn("sensitivity: skipping " + name + " = " + num(v) + ": " + e.what());
        continue;
      } catch (const ConfigError& e) {
        warn("sensitivity: skipping " + name + " = " + num(v) + ": " + e.what());
        continue;
      }
      for (const StatisticGroup& g : stats.groups) {
        const auto row = g.row(0);
        for (std::size_t j = 0; j < row.size(); ++j) {
          rows.push_back({name, v, g.target, g.labels[j], row[j]});
        }
      }
    }
  }
  return rows;
}

// -------------------------------------------------------------- comparison

std::vector<ComparisonRow> comparison_table(std::span<const ReplicationResult> results,
                                            const ElicitedStatisticSet& expert) {
  if (expert.groups.empty()) throw ConfigError("expert statistic set is empty");
  if (results.empty()) throw ConfigError("no replication results to compare");
  std::vector<ComparisonRow> rows;
  for (const auto& r : results) {
    for (const StatisticGroup& e : expert.groups) {
      const StatisticGroup* m = r.final_statistics.find(e.target);
      if (m == nullptr) {
        throw ConfigError("seed " + std::to_string(r.seed) + " lacks statistic '" + e.target + "'");
      }
      if (m->width() != e.width()) {
        throw ConfigError("statistic '" + e.target + "' width differs for seed " + std::to_string(r.seed));
      }
      const auto learned = m->row(0);
      const auto truth = e.row(0);
      for (std::size_t j = 0; j < truth.size(); ++j) {
        rows.push_back({r.seed, e.target, e.labels[j], learned[j], truth[j]});
      }
    }
  }
  return rows;
}

double max_relative_quantile_error(std::span<const ComparisonRow> rows, std::uint64_t seed,
                                   const ElicitationPlan& plan) {
  double worst = 0.0;
  for (const auto& row : rows) {
    if (row.seed != seed) continue;
    bool quantile = false;
    for (const auto& e : plan.entries) {
      quantile = quantile || (e.target == row.statistic && e.technique == Technique::quantiles);
    }
    if (!quantile) continue;
    const double denom = std::abs(row.truth);
    const double err = denom > 0 ? std::abs(row.learned - row.truth) / denom
                                 : (row.learned == row.truth ? 0.0 : std::numeric_limits<double>::infinity());
    worst = std::max(worst, err);
  }
  return worst;
}

// -------------------------------------------------------------------- csv

void write_slopes_csv(const SlopeReport& report, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "seed,slope,abs_slope_x100,rank,worst\n";
  for (const auto& e : report.entries) {
    os << e.seed << ',' << num(e.slope) << ',' << num(e.scaled) << ',' << e.rank << ','
       << (e.worst ? 1 : 0) << '\n';
  }
}

void write_weights_csv(std::span<const std::uint64_t> seeds, const AveragingWeights& w,
                       const std::filesystem::path& path) {
  if (seeds.size() != w.weights.size()) throw ConfigError("one seed per weight expected");
  auto os = open_csv(path);
  os << "seed,final_loss,delta,weight\n";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    os << seeds[i] << ',' << num(w.losses[i]) << ',' << num(w.deltas[i]) << ',' << num(w.weights[i])
       << '\n';
  }
}

void write_sensitivity_csv(std::span<const SensitivityRow> rows, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "hyperparameter,value,statistic,level,result\n";
  for (const auto& r : rows) {
    os << r.hyperparameter << ',' << num(r.value) << ',' << r.statistic << ',' << r.level << ','
       << num(r.result) << '\n';
  }
}

void write_comparison_csv(std::span<const ComparisonRow> rows, const std::filesystem::path& path) {
  auto os = open_csv(path);
  os << "seed,statistic,level,learned,true\n";
  for (const auto& r : rows) {
    os << r.seed << ',' << r.statistic << ',' << r.level << ',' << num(r.learned) << ','
       << num(r.truth) << '\n';
  }
}

void write_samples_csv(const Tensor& theta, const std::vector<std::string>& parameter_names,
                       const std::filesystem::path& path) {
  if (theta.dim() != 2 || theta.shape()[1] != parameter_names.size()) {
    throw ShapeError("samples must be [N, K] with one name per column");
  }
  auto os = open_csv(path);
  for (std::size_t j = 0; j < parameter_names.size(); ++j) os << (j ? "," : "") << parameter_names[j];
  os << '\n';
  const auto v = theta.values();
  const std::size_t k = parameter_names.size();
  for (std::size_t i = 0; i < theta.shape()[0]; ++i) {
    for (std::size_t j = 0; j < k; ++j) os << (j ? "," : "") << num(v[i * k + j]);
    os << '\n';
  }
}

}  // namespace elicit
