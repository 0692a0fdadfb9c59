#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stylespace/tensor/tape.hpp"

namespace stylespace {

enum class OptimizerKind { kAdam, kRmsProp };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double rms_decay = 0.99;
  double epsilon = 1e-8;
};

/// Adam (bias-corrected) or RMSprop. Moment buffers are keyed by parameter
/// name so state can be checkpointed and restored independently of the
/// parameter objects.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Applies one update to every listed parameter. Throws if a parameter has
  /// no gradient from the preceding backward pass.
  void step(const std::vector<Parameter<T>*>& params);

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return steps_; }

  /// Moment buffers as named tensors ("m/<param>", "v/<param>") for checkpoints.
  std::map<std::string, Tensor<T>> state() const;
  void restore(const std::map<std::string, Tensor<T>>& state, std::uint64_t steps);

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor<T>> first_;
  std::map<std::string, Tensor<T>> second_;
};

}  // namespace stylespace
