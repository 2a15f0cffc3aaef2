// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

/// Timestep standing for the clean sample (alpha_bar = 1).
inline constexpr int kCleanStep = -1;

struct NoiseSchedule {
  int T = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> alpha_bar;  // cumulative product of (1 - beta)

  /// alpha_bar at t, with kCleanStep mapping to 1.
  double at(int t) const;
  std::string to_json() const;
};

/// Linear beta ramp from beta_min to beta_max over T steps.
NoiseSchedule make_schedule(int T = 1000, double beta_min = 1e-4, double beta_max = 2e-2);

/// K evenly strided timesteps 0, T/K, 2T/K, ... in increasing order.
std::vector<int> strided_timesteps(const NoiseSchedule& s, int steps);

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);
/// Same marginal with alpha_bar given directly.
Tensor q_sample_ab(const Tensor& x0, double alpha_bar, const Tensor& eps);

/// Mean squared error between predicted and true noise (differentiable).
Tensor training_loss(const Tensor& eps_pred, const Tensor& eps_true);

/// Deterministic DDIM update from t to t_prev < t (t_prev may be kCleanStep).
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& s);
/// DDIM inversion from t to t_next > t (t may be kCleanStep).
Tensor ddim_invert_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_next, const NoiseSchedule& s);
/// The shared closed form, moving from alpha_bar `from` to alpha_bar `to`.
Tensor ddim_transfer(const Tensor& x, const Tensor& eps_pred, double from, double to);

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale);

struct Trajectory {
  std::vector<int> timesteps;
  std::vector<Tensor> latents;

  const Tensor& final_latent() const { return latents.back(); }
};

/// Noise prediction for latent x at timestep t.
using EpsFn = std::function<Tensor(const Tensor& x, int t)>;

/// Clean sample -> noise along the strided schedule. Each step evaluates eps
/// on the current latent at the destination timestep. Each refinement
/// re-evaluates eps at the proposed destination latent, iterating towards the
/// exact inverse of the sampler step.
Trajectory ddim_invert(const Tensor& x0, const std::vector<int>& timesteps, const NoiseSchedule& s,
                       const EpsFn& eps, int refinements = 0);
/// Noise at timesteps.back() -> clean sample. Each step evaluates eps on the
/// current latent at its own timestep.
Trajectory ddim_sample(const Tensor& x_T, const std::vector<int>& timesteps, const NoiseSchedule& s,
                       const EpsFn& eps);

}  // namespace motioneditor
