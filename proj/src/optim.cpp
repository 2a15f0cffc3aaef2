// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace motioneditor {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

namespace {

void check_slots(std::span<const Tensor> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("optimizer: parameter/gradient count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw DimensionError("optimizer: parameter " + std::to_string(i) + " has shape " + shape_str(params[i].shape()) +
                           " but gradient " + shape_str(grads[i].shape()));
    }
  }
}

}  // namespace

std::vector<Tensor> adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, OptimizerState& state) {
  check_slots(params, grads);
  if (state.m_.empty()) {
    for (const auto& p : params) {
      state.m_.push_back(Tensor::zeros(p.shape()));
      state.v_.push_back(Tensor::zeros(p.shape()));
    }
  } else {
    if (state.m_.size() != params.size()) throw DimensionError("adam: parameter count changed between steps");
    for (size_t i = 0; i < params.size(); ++i) {
      if (state.m_[i].shape() != params[i].shape()) throw DimensionError("adam: moment shape mismatch");
    }
  }
  const auto& c = state.config_;
  ++state.step_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_));

  std::vector<Tensor> updated;
  updated.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m_old = state.m_[i].data();
    auto v_old = state.v_[i].data();
    std::vector<float> np(p.size()), nm(p.size()), nv(p.size());
    for (size_t j = 0; j < p.size(); ++j) {
      const double m = c.beta1 * m_old[j] + (1.0 - c.beta1) * g[j];
      const double v = c.beta2 * v_old[j] + (1.0 - c.beta2) * static_cast<double>(g[j]) * g[j];
      nm[j] = static_cast<float>(m);
      nv[j] = static_cast<float>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      np[j] = static_cast<float>(p[j] - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
    updated.emplace_back(params[i].shape(), std::move(np));
    state.m_[i] = Tensor(params[i].shape(), std::move(nm));
    state.v_[i] = Tensor(params[i].shape(), std::move(nv));
  }
  return updated;
}

std::vector<Tensor> optimizer_step(std::span<const Tensor> params, std::span<const Tensor> grads,
                                   OptimizerState& state) {
  if (state.config_.kind == OptimizerKind::kAdam) return adam_step(params, grads, state);
  check_slots(params, grads);
  ++state.step_;
  std::vector<Tensor> updated;
  for (size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    std::vector<float> np(p.size());
    for (size_t j = 0; j < p.size(); ++j) np[j] = static_cast<float>(p[j] - state.config_.lr * g[j]);
    updated.emplace_back(params[i].shape(), std::move(np));
  }
  return updated;
}

}  // namespace motioneditor
