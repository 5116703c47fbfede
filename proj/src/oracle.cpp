#include "elicit/oracle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <fstream>

#include "elicit/errors.hpp"

namespace elicit {

using ad::Tensor;
using json = nlohmann::ordered_json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t component_dim(const PriorComponent& c) {
  if (const auto* mv = std::get_if<MvNormalBlock>(&c)) return mv->mean.size();
  return 1;
}

Eigen::MatrixXd cholesky_factor(const MvNormalBlock& mv) {
  const auto k = static_cast<Eigen::Index>(mv.mean.size());
  Eigen::MatrixXd cov(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      cov(i, j) = mv.sd[static_cast<std::size_t>(i)] *
                  mv.correlation[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                  mv.sd[static_cast<std::size_t>(j)];
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw DecompositionError("multivariate normal covariance is not positive definite");
  }
  return llt.matrixL();
}

void require_positive(double v, const std::string& what) {
  if (!(v > 0) || !std::isfinite(v)) {
    throw ConfigError(what + " must be positive and finite, got " + std::to_string(v));
  }
}

}  // namespace

std::size_t TruePrior::dim() const {
  std::size_t k = 0;
  for (const auto& c : components) k += component_dim(c);
  return k;
}

void TruePrior::validate() const {
  if (components.empty()) throw ConfigError("true prior has no components");
  for (const auto& c : components) {
    std::visit(overloaded{
                   [](const NormalMarginal& n) { require_positive(n.scale, "normal scale"); },
                   [](const SkewNormalMarginal& s) {
                     require_positive(s.scale, "skew-normal scale");
                     require_positive(s.shape, "skew-normal shape");
                   },
                   [](const GammaMarginal& g) {
                     require_positive(g.concentration, "gamma concentration");
                     require_positive(g.rate, "gamma rate");
                   },
                   [](const MvNormalBlock& mv) {
                     const std::size_t k = mv.mean.size();
                     if (k == 0 || mv.sd.size() != k || mv.correlation.size() != k) {
                       throw ConfigError("multivariate normal block dimensions disagree");
                     }
                     for (std::size_t i = 0; i < k; ++i) {
                       require_positive(mv.sd[i], "multivariate normal sd");
                       if (mv.correlation[i].size() != k) {
                         throw ConfigError("correlation matrix is not square");
                       }
                       if (std::abs(mv.correlation[i][i] - 1.0) > 1e-12) {
                         throw ConfigError("correlation matrix needs a unit diagonal");
                       }
                       for (std::size_t j = 0; j < k; ++j) {
                         if (std::abs(mv.correlation[i][j] - mv.correlation[j][i]) > 1e-12) {
                           throw ConfigError("correlation matrix is not symmetric");
                         }
                       }
                     }
                     cholesky_factor(mv);
                   },
               },
               c);
  }
}

std::vector<Hyperparameter> TruePrior::hyperparameters(
    const std::vector<std::string>& names) const {
  if (names.size() != dim()) throw ConfigError("parameter names do not match prior dimension");
  using Kind = Hyperparameter::Kind;
  std::vector<Hyperparameter> out;
  std::size_t col = 0;
  for (const auto& c : components) {
    std::visit(overloaded{
                   [&](const NormalMarginal& n) {
                     out.push_back({names[col] + ".loc", n.loc, Kind::location, n.scale});
                     out.push_back({names[col] + ".scale", n.scale, Kind::positive, n.scale});
                   },
                   [&](const SkewNormalMarginal& s) {
                     out.push_back({names[col] + ".loc", s.loc, Kind::location, s.scale});
                     out.push_back({names[col] + ".scale", s.scale, Kind::positive, s.scale});
                     out.push_back({names[col] + ".shape", s.shape, Kind::positive, s.shape});
                   },
                   [&](const GammaMarginal& g) {
                     out.push_back({names[col] + ".concentration", g.concentration, Kind::positive,
                                    g.concentration});
                     out.push_back({names[col] + ".rate", g.rate, Kind::positive, g.rate});
                   },
                   [&](const MvNormalBlock& mv) {
                     const std::size_t k = mv.mean.size();
                     for (std::size_t i = 0; i < k; ++i) {
                       out.push_back({names[col + i] + ".loc", mv.mean[i], Kind::location, mv.sd[i]});
                       out.push_back({names[col + i] + ".scale", mv.sd[i], Kind::positive, mv.sd[i]});
                     }
                     for (std::size_t i = 0; i < k; ++i)
                       for (std::size_t j = i + 1; j < k; ++j)
                         out.push_back({names[col + i] + "_" + names[col + j] + ".rho",
                                        mv.correlation[i][j], Kind::correlation, 1.0});
                   },
               },
               c);
    col += component_dim(c);
  }
  return out;
}

TruePrior TruePrior::with(const std::string& hyperparameter, double value,
                          const std::vector<std::string>& names) const {
  if (names.size() != dim()) throw ConfigError("parameter names do not match prior dimension");
  TruePrior out = *this;
  bool found = false;
  std::size_t col = 0;
  for (auto& c : out.components) {
    auto hit = [&](const std::string& name) {
      if (name != hyperparameter) return false;
      found = true;
      return true;
    };
    std::visit(overloaded{
                   [&](NormalMarginal& n) {
                     if (hit(names[col] + ".loc")) n.loc = value;
                     if (hit(names[col] + ".scale")) n.scale = value;
                   },
                   [&](SkewNormalMarginal& s) {
                     if (hit(names[col] + ".loc")) s.loc = value;
                     if (hit(names[col] + ".scale")) s.scale = value;
                     if (hit(names[col] + ".shape")) s.shape = value;
                   },
                   [&](GammaMarginal& g) {
                     if (hit(names[col] + ".concentration")) g.concentration = value;
                     if (hit(names[col] + ".rate")) g.rate = value;
                   },
                   [&](MvNormalBlock& mv) {
                     const std::size_t k = mv.mean.size();
                     for (std::size_t i = 0; i < k; ++i) {
                       if (hit(names[col + i] + ".loc")) mv.mean[i] = value;
                       if (hit(names[col + i] + ".scale")) mv.sd[i] = value;
                       for (std::size_t j = i + 1; j < k; ++j) {
                         if (hit(names[col + i] + "_" + names[col + j] + ".rho")) {
                           mv.correlation[i][j] = mv.correlation[j][i] = value;
                         }
                       }
                     }
                   },
               },
               c);
    col += component_dim(c);
  }
  if (!found) throw ConfigError("unknown hyperparameter '" + hyperparameter + "'");
  return out;
}

Tensor sample_true_prior(const TruePrior& prior, std::size_t count, Rng& rng) {
  prior.validate();
  const std::size_t k = prior.dim();
  std::vector<double> out(count * k);
  std::size_t col = 0;
  for (const auto& c : prior.components) {
    std::visit(overloaded{
                   [&](const NormalMarginal& n) {
                     for (std::size_t i = 0; i < count; ++i)
                       out[i * k + col] = n.loc + n.scale * rng.normal();
                   },
                   [&](const SkewNormalMarginal& s) {
                     const double g2 = s.shape * s.shape;
                     const double p_right = g2 / (1.0 + g2);
                     for (std::size_t i = 0; i < count; ++i) {
                       const double z = std::abs(rng.normal());
                       const bool right = rng.uniform() < p_right;
                       out[i * k + col] = right ? s.loc + s.scale * s.shape * z
                                                : s.loc - s.scale * z / s.shape;
                     }
                   },
                   [&](const GammaMarginal& g) {
                     for (std::size_t i = 0; i < count; ++i)
                       out[i * k + col] = rng.gamma(g.concentration, g.rate);
                   },
                   [&](const MvNormalBlock& mv) {
                     const Eigen::MatrixXd l = cholesky_factor(mv);
                     const auto m = static_cast<Eigen::Index>(mv.mean.size());
                     Eigen::VectorXd z(m);
                     for (std::size_t i = 0; i < count; ++i) {
                       for (Eigen::Index j = 0; j < m; ++j) z(j) = rng.normal();
                       const Eigen::VectorXd x = l * z;
                       for (Eigen::Index j = 0; j < m; ++j)
                         out[i * k + col + static_cast<std::size_t>(j)] =
                             mv.mean[static_cast<std::size_t>(j)] + x(j);
                     }
                   },
               },
               c);
    col += component_dim(c);
  }
  return Tensor::from({count, k}, std::move(out));
}

ElicitedStatisticSet forward_statistics(const Tensor& theta, const GenerativeModel& model,
                                        const ElicitationPlan& plan, Rng& rng) {
  if (theta.dim() != 2) throw ShapeError("forward_statistics expects theta [S, K]");
  const Tensor batched = ad::reshape(theta.detach(), {1, theta.shape()[0], theta.shape()[1]});
  const auto targets = simulate_targets(model, batched, {SamplingMode::exact, 1.0}, rng);
  return build_statistics(targets, plan, Side::expert);
}

ExpertData simulate_expert(const TruePrior& prior, const GenerativeModel& model,
                           const ElicitationPlan& plan, std::size_t samples, Rng& rng) {
  if (samples < 1000) {
    throw ConfigError("expert simulation needs S >= 1000 for stable statistics, got " +
                      std::to_string(samples));
  }
  if (prior.dim() != model.dim()) {
    throw ConfigError("true prior dimension " + std::to_string(prior.dim()) +
                      " does not match the model's " + std::to_string(model.dim()) + " parameters");
  }
  model.validate();
  const Tensor theta = sample_true_prior(prior, samples, rng);
  ExpertData out;
  out.statistics = forward_statistics(theta, model, plan, rng);
  out.provenance["oracle"] = prior_to_json(prior);
  out.provenance["samples"] = samples;
  out.provenance["correlations"] = "empirical";
  out.provenance["sampling"] = "exact";
  return out;
}

// ------------------------------------------------------------------- JSON

json statistics_to_json(const ElicitedStatisticSet& stats) {
  json out = json::object();
  for (const StatisticGroup& g : stats.groups) {
    json entry;
    entry["technique"] = std::string(to_string(g.technique));
    if (g.technique == Technique::quantiles) {
      std::vector<double> levels;
      for (const std::string& l : g.labels) levels.push_back(std::stod(l));
      entry["levels"] = levels;
    } else {
      entry["levels"] = g.labels;
    }
    if (g.rows() == 1) {
      entry["values"] = g.row(0);
    } else {
      json rows = json::array();
      for (std::size_t r = 0; r < g.rows(); ++r) rows.push_back(g.row(r));
      entry["values"] = rows;
    }
    out[g.target] = entry;
  }
  return out;
}

ElicitedStatisticSet statistics_from_json(const json& j, Side side) {
  ElicitedStatisticSet out;
  out.side = side;
  for (const auto& [target, entry] : j.items()) {
    StatisticGroup g;
    g.target = target;
    g.technique = technique_from_string(entry.at("technique").get<std::string>());
    for (const auto& l : entry.at("levels")) {
      g.labels.push_back(l.is_number() ? format_level(l.get<double>()) : l.get<std::string>());
    }
    const json& vals = entry.at("values");
    std::vector<double> flat;
    std::size_t rows = 1;
    if (!vals.empty() && vals.front().is_array()) {
      rows = vals.size();
      for (const auto& r : vals)
        for (const auto& v : r) flat.push_back(v.get<double>());
    } else {
      for (const auto& v : vals) flat.push_back(v.get<double>());
    }
    if (flat.size() != rows * g.labels.size()) {
      throw ConfigError("statistic '" + target + "' has " + std::to_string(flat.size()) +
                        " values for " + std::to_string(g.labels.size()) + " levels");
    }
    g.values = Tensor::from({rows, g.labels.size()}, std::move(flat));
    out.groups.push_back(std::move(g));
  }
  return out;
}

json expert_to_json(const ExpertData& expert) {
  json out;
  out["statistics"] = statistics_to_json(expert.statistics);
  out["provenance"] = expert.provenance;
  return out;
}

ExpertData expert_from_json(const json& j) {
  ExpertData out;
  out.statistics = statistics_from_json(j.at("statistics"), Side::expert);
  if (j.contains("provenance")) out.provenance = j.at("provenance");
  for (const StatisticGroup& g : out.statistics.groups) {
    for (double v : g.values.values()) {
      if (!std::isfinite(v)) throw ConfigError("expert statistic '" + g.target + "' is not finite");
    }
  }
  return out;
}

void save_expert(const ExpertData& expert, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << expert_to_json(expert).dump(2) << '\n';
}

ExpertData load_expert(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open expert file " + path.string());
  return expert_from_json(json::parse(is));
}

json prior_to_json(const TruePrior& prior) {
  json arr = json::array();
  for (const auto& c : prior.components) {
    std::visit(overloaded{
                   [&](const NormalMarginal& n) {
                     arr.push_back({{"type", "normal"}, {"loc", n.loc}, {"scale", n.scale}});
                   },
                   [&](const SkewNormalMarginal& s) {
                     arr.push_back({{"type", "skew_normal"},
                                    {"loc", s.loc},
                                    {"scale", s.scale},
                                    {"shape", s.shape}});
                   },
                   [&](const GammaMarginal& g) {
                     arr.push_back({{"type", "gamma"},
                                    {"concentration", g.concentration},
                                    {"rate", g.rate}});
                   },
                   [&](const MvNormalBlock& mv) {
                     arr.push_back({{"type", "mv_normal"},
                                    {"mean", mv.mean},
                                    {"correlation", mv.correlation},
                                    {"sd", mv.sd}});
                   },
               },
               c);
  }
  return arr;
}

TruePrior prior_from_json(const json& j) {
  TruePrior out;
  for (const auto& c : j) {
    const auto type = c.at("type").get<std::string>();
    if (type == "normal") {
      out.components.emplace_back(NormalMarginal{c.at("loc").get<double>(), c.at("scale").get<double>()});
    } else if (type == "skew_normal") {
      out.components.emplace_back(SkewNormalMarginal{
          c.at("loc").get<double>(), c.at("scale").get<double>(), c.at("shape").get<double>()});
    } else if (type == "gamma") {
      out.components.emplace_back(
          GammaMarginal{c.at("concentration").get<double>(), c.at("rate").get<double>()});
    } else if (type == "mv_normal") {
      out.components.emplace_back(MvNormalBlock{
          c.at("mean").get<std::vector<double>>(),
          c.at("correlation").get<std::vector<std::vector<double>>>(),
          c.at("sd").get<std::vector<double>>()});
    } else {
      throw ConfigError("unknown prior component type '" + type + "'");
    }
  }
  return out;
}

}  // namespace elicit
