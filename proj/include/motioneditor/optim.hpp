// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

enum class OptimizerKind { kAdam, kSgd };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 3e-5;  // constant; no schedule
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators, one pair per parameter slot. Shapes are fixed by
/// the first step.
class OptimizerState {
 public:
  explicit OptimizerState(OptimizerConfig config = {}) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  int64_t step_count() const { return step_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  friend std::vector<Tensor> adam_step(std::span<const Tensor>, std::span<const Tensor>, OptimizerState&);
  friend std::vector<Tensor> optimizer_step(std::span<const Tensor>, std::span<const Tensor>, OptimizerState&);

  OptimizerConfig config_;
  int64_t step_ = 0;
  std::vector<Tensor> m_, v_;
};

/// One Adam update. Returns the new parameter values; params are untouched.
std::vector<Tensor> adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, OptimizerState& state);

/// Dispatches on state.config().kind.
std::vector<Tensor> optimizer_step(std::span<const Tensor> params, std::span<const Tensor> grads,
                                   OptimizerState& state);

}  // namespace motioneditor
