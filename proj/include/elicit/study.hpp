#pragma once

// Study configuration: the bundled M1-M4 presets and their TOML / JSON forms.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "elicit/flow.hpp"
#include "elicit/loss.hpp"
#include "elicit/models.hpp"
#include "elicit/oracle.hpp"
#include "elicit/trainer.hpp"
#include "json.hpp"

namespace elicit {

struct StudyConfig {
  std::string study = "M1";
  TruePrior prior;
  GenerativeModel model;
  ElicitationPlan plan;
  FlowConfig flow;
  TrainConfig train;
  std::vector<LossComponentSpec> losses;
  std::vector<std::uint64_t> seeds;
  std::size_t expert_samples = 10000;
  double averaging_gamma = 1.0;
  std::size_t slope_window = 100;
  std::filesystem::path output = "runs";

  // Gumbel-softmax temperature used by the presets. At 1.0 the relaxed
  // counts are visibly under-dispersed and the learned binomial prior
  // settles wide; 0.05 stays within a few percent of exact sampling.
  static constexpr double default_temperature = 0.05;

  // "M1" (binomial), "M2" (independent normal), "M3" (skew normal),
  // "M4" (correlated normal).
  static StudyConfig preset(std::string_view id);
  static std::vector<std::string> preset_ids() { return {"M1", "M2", "M3", "M4"}; }

  // Desk-scale overrides: 2 blocks x 64 units, B = 32, S = 100,
  // 400 (binomial) / 800 (normal) epochs, learning rate 5e-4.
  StudyConfig reduced() const;

  void validate() const;
  TrainProblem problem(const ExpertData& expert) const;

  nlohmann::ordered_json to_json() const;
  static StudyConfig from_json(const nlohmann::ordered_json& j);
  std::string to_toml() const;
  static StudyConfig from_toml(std::string_view text);
  // Dispatches on extension: .toml or .json.
  static StudyConfig load(const std::filesystem::path& path);

  bool operator==(const StudyConfig&) const = default;
};

// Stable 64-bit FNV-1a of the canonical JSON form, as hex.
std::string config_hash(const StudyConfig& cfg);

// Parses "1..30", "1,2,5" or "7".
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace elicit
