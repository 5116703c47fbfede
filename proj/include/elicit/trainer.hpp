#pragma once

// Mini-batch stochastic gradient training of the flow prior.
//
// One epoch is one Adam step on one freshly simulated batch: B * S draws from
// the flow, forward simulation of the target quantities, elicited statistics
// per batch element, and the weighted total loss against the expert.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "elicit/flow.hpp"
#include "elicit/loss.hpp"
#include "elicit/models.hpp"
#include "elicit/oracle.hpp"

namespace elicit {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t samples_per_prior = 200;
  std::size_t epochs = 600;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double temperature = 1.0;
  bool clip_gradients = false;
  double clip_norm = 100.0;
  // Prior draws for the post-training statistics.
  std::size_t eval_samples = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

class Adam {
 public:
  Adam(std::vector<ad::Tensor*> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-7);

  void zero_grad();
  // Applies one update from the accumulated gradients.
  void step();
  // Global L2 norm of the current gradients.
  double grad_norm() const;
  void scale_grads(double factor);
  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0;
  std::vector<double> components;
  std::vector<double> means;  // marginal prior means, averaged over the batch
  std::vector<double> sds;
};

struct TrainingTrajectory {
  std::vector<std::string> component_names;
  std::vector<std::string> parameter_names;
  std::vector<EpochRecord> epochs;

  std::vector<double> totals() const;
  // Columns: epoch, loss_total, loss_<component>..., mean_<param>..., sd_<param>...
  void write_csv(const std::filesystem::path& path) const;
  static TrainingTrajectory read_csv(const std::filesystem::path& path);
  bool operator==(const TrainingTrajectory& o) const;
};

struct ReplicationResult {
  std::uint64_t seed = 0;
  std::shared_ptr<const JointPriorFlow> flow;
  std::filesystem::path checkpoint;
  // Model-side statistics recomputed post-training by exact forward
  // simulation with eval_samples prior draws.
  ElicitedStatisticSet final_statistics;
  TrainingTrajectory trajectory;
  double final_loss = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t epoch, std::optional<LossReport> last_finite);
  std::size_t epoch() const noexcept { return epoch_; }
  const std::optional<LossReport>& last_finite() const noexcept { return last_; }

 private:
  std::size_t epoch_;
  std::optional<LossReport> last_;
};

struct TrainProblem {
  GenerativeModel model;
  ElicitationPlan plan;
  ExpertData expert;
  FlowConfig flow;
  std::vector<LossComponentSpec> losses;
};

// One model-side evaluation of the training objective (no update).
TotalLoss training_objective(const JointPriorFlow& flow, const TrainProblem& problem,
                             std::size_t batch_size, std::size_t samples_per_prior,
                             double temperature, Rng& rng, ad::Tensor* theta_out = nullptr);

// Trains `flow` in place and returns the replication summary. With zero
// epochs the initial loss is logged once at epoch 0 and no update is made.
ReplicationResult train(std::shared_ptr<JointPriorFlow> flow, const TrainProblem& problem,
                        const TrainConfig& cfg);

struct ReplicationFailure {
  std::uint64_t seed = 0;
  std::string message;
  bool diverged = false;
};

struct ReplicationBatch {
  std::vector<ReplicationResult> results;  // survivors, in seed order
  std::vector<ReplicationFailure> failures;
  std::vector<std::string> warnings;
};

// Independent runs, one per seed (flow init, training and evaluation streams
// derived from the seed). Runs execute on up to `threads` workers.
ReplicationBatch run_replications(const TrainProblem& problem, const std::vector<std::uint64_t>& seeds,
                                  const TrainConfig& cfg, std::size_t threads = 1);

}  // namespace elicit
