#pragma once

// Normalizing-flow joint prior built from affine coupling blocks over a
// standard normal base.
//
// Each block, in the normalizing direction (parameters -> base), applies
//   1. a per-coordinate affine normalization  x * exp(log_scale) + bias
//   2. an affine coupling of the first half conditioned on the second half
//   3. an affine coupling of the second half conditioned on the (updated)
//      first half
//   4. a fixed coordinate permutation.
// Coupling scales pass through a soft atan clamp. Sampling runs the inverse
// of every block in reverse order and finally maps declared positivity
// coordinates through softplus.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "elicit/rng.hpp"
#include "elicit/tensor.hpp"

namespace elicit {

struct FlowConfig {
  std::size_t dim_theta = 2;
  std::size_t num_blocks = 3;
  std::size_t hidden_units = 128;
  std::size_t hidden_layers = 2;
  double scale_clamp = 1.9;
  std::vector<std::size_t> positivity_dims;

  void validate() const;
  bool operator==(const FlowConfig&) const = default;
};

// Fully connected ReLU network; the output layer is linear.
class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out, Rng& rng);

  ad::Tensor operator()(const ad::Tensor& x) const;
  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;

 private:
  std::vector<ad::Tensor> weights_;
  std::vector<ad::Tensor> biases_;
};

class CouplingBlock {
 public:
  CouplingBlock(std::size_t dim, const FlowConfig& cfg, std::vector<std::size_t> permutation,
                Rng& rng);

  // Normalizing direction; adds this block's log|det J| to log_det ([N]).
  ad::Tensor forward(const ad::Tensor& x, ad::Tensor& log_det) const;
  // Generative direction.
  ad::Tensor inverse(const ad::Tensor& y) const;

  const std::vector<std::size_t>& permutation() const { return permutation_; }
  std::size_t active_size() const { return first_.size(); }
  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;

 private:
  friend class JointPriorFlow;
  ad::Tensor clamp_scale(const ad::Tensor& raw) const;

  double clamp_;
  std::vector<std::size_t> first_;
  std::vector<std::size_t> second_;
  std::vector<std::size_t> permutation_;
  std::vector<std::size_t> inverse_permutation_;
  ad::Tensor norm_log_scale_;
  ad::Tensor norm_bias_;
  DenseNet scale_first_, shift_first_;    // conditioned on the second half
  DenseNet scale_second_, shift_second_;  // conditioned on the first half
};

class JointPriorFlow {
 public:
  // Builds a near-identity flow; permutations and weights come from `seed`.
  JointPriorFlow(FlowConfig cfg, std::uint64_t seed);
  // Parameters are graph leaves shared by handle; copies would alias them.
  JointPriorFlow(const JointPriorFlow&) = delete;
  JointPriorFlow& operator=(const JointPriorFlow&) = delete;
  JointPriorFlow(JointPriorFlow&&) = default;
  JointPriorFlow& operator=(JointPriorFlow&&) = default;

  const FlowConfig& config() const { return cfg_; }

  // Draws count samples, shape [count, K], differentiable w.r.t. parameters.
  ad::Tensor sample(std::size_t count, Rng& rng) const;
  // Pushes base draws u [N, K] through the generative direction.
  ad::Tensor generate(const ad::Tensor& u) const;

  struct Normalized {
    ad::Tensor u;
    ad::Tensor log_det;
  };
  // Maps parameters theta [N, K] to the base space.
  Normalized forward_normalizing(const ad::Tensor& theta) const;
  ad::Tensor log_prob(const ad::Tensor& theta) const;

  std::vector<ad::Tensor*> parameters();
  std::vector<const ad::Tensor*> parameters() const;
  std::size_t parameter_count() const;
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }

  // Binary checkpoint: "EFLW" magic, uint32 version, uint64 header length,
  // JSON header (config + parameter shapes), then every parameter array in
  // declaration order as little-endian float64.
  void save(const std::filesystem::path& path) const;
  static JointPriorFlow load(const std::filesystem::path& path);

 private:
  FlowConfig cfg_;
  std::vector<CouplingBlock> blocks_;
};

}  // namespace elicit
