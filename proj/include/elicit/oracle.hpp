#pragma once

// Ground-truth ("oracle") priors and the simulated expert built from them.

#include <cstddef>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "elicit/elicitation.hpp"
#include "elicit/models.hpp"
#include "elicit/rng.hpp"
#include "elicit/tensor.hpp"
#include "json.hpp"

namespace elicit {

struct NormalMarginal {
  double loc = 0.0;
  double scale = 1.0;
  bool operator==(const NormalMarginal&) const = default;
};

// Two-piece (Fernandez-Steel) skew normal; shape > 1 skews right and
// shape == 1 is Normal(loc, scale).
struct SkewNormalMarginal {
  double loc = 0.0;
  double scale = 1.0;
  double shape = 1.0;
  bool operator==(const SkewNormalMarginal&) const = default;
};

// Shape-rate parameterization: mean = concentration / rate.
struct GammaMarginal {
  double concentration = 1.0;
  double rate = 1.0;
  bool operator==(const GammaMarginal&) const = default;
};

// Multivariate normal block with covariance D(sd) R D(sd).
struct MvNormalBlock {
  std::vector<double> mean;
  std::vector<std::vector<double>> correlation;
  std::vector<double> sd;
  bool operator==(const MvNormalBlock&) const = default;
};

using PriorComponent = std::variant<NormalMarginal, SkewNormalMarginal, GammaMarginal, MvNormalBlock>;

// One scalar hyperparameter of a TruePrior, addressable for sensitivity sweeps.
struct Hyperparameter {
  std::string name;   // e.g. "beta0.loc", "sigma.rate", "beta0_beta1.rho"
  double value = 0.0;
  enum class Kind { location, positive, correlation } kind = Kind::location;
  double reference_scale = 1.0;  // spread of the owning marginal
};

// Components cover parameter columns left to right.
struct TruePrior {
  std::vector<PriorComponent> components;

  std::size_t dim() const;
  void validate() const;
  std::vector<Hyperparameter> hyperparameters(const std::vector<std::string>& parameter_names) const;
  TruePrior with(const std::string& hyperparameter, double value,
                 const std::vector<std::string>& parameter_names) const;
  bool operator==(const TruePrior&) const = default;
};

// [count, K] independent draws.
ad::Tensor sample_true_prior(const TruePrior& prior, std::size_t count, Rng& rng);

struct ExpertData {
  ElicitedStatisticSet statistics;  // side == expert, one row per group
  nlohmann::ordered_json provenance;
};

// Forward simulation (exact sampling) from the oracle; S >= 1000.
ExpertData simulate_expert(const TruePrior& prior, const GenerativeModel& model,
                           const ElicitationPlan& plan, std::size_t samples, Rng& rng);

// Same forward pipeline for an arbitrary prior sample [S, K].
ElicitedStatisticSet forward_statistics(const ad::Tensor& theta, const GenerativeModel& model,
                                        const ElicitationPlan& plan, Rng& rng);

// {"statistics": {target: {technique, levels, values}}, "provenance": {...}}
nlohmann::ordered_json statistics_to_json(const ElicitedStatisticSet& stats);
ElicitedStatisticSet statistics_from_json(const nlohmann::ordered_json& j, Side side);
nlohmann::ordered_json expert_to_json(const ExpertData& expert);
ExpertData expert_from_json(const nlohmann::ordered_json& j);
void save_expert(const ExpertData& expert, const std::filesystem::path& path);
ExpertData load_expert(const std::filesystem::path& path);

nlohmann::ordered_json prior_to_json(const TruePrior& prior);
TruePrior prior_from_json(const nlohmann::ordered_json& j);

}  // namespace elicit
