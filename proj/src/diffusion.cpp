// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace motioneditor {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
  }
}

}  // namespace

double NoiseSchedule::at(int t) const {
  if (t == kCleanStep) return 1.0;
  if (t < 0 || t >= T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  return alpha_bar[static_cast<size_t>(t)];
}

std::string NoiseSchedule::to_json() const {
  nlohmann::json j;
  j["T"] = T;
  j["beta_min"] = beta_min;
  j["beta_max"] = beta_max;
  j["alpha_bar"] = alpha_bar;
  return j.dump();
}

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 2) throw std::invalid_argument("schedule needs T >= 2, got " + std::to_string(T));
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw std::invalid_argument("schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s{T, beta_min, beta_max, {}};
  s.alpha_bar.reserve(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double beta = beta_min + (beta_max - beta_min) * t / (T - 1);
    prod *= 1.0 - beta;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

std::vector<int> strided_timesteps(const NoiseSchedule& s, int steps) {
  if (steps < 1 || steps > s.T) {
    throw std::invalid_argument("sampling steps must be in [1, " + std::to_string(s.T) + "], got " +
                                std::to_string(steps));
  }
  const int stride = s.T / steps;
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) ts.push_back(i * stride);
  return ts;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (t == kCleanStep) throw std::out_of_range("q_sample needs a noisy timestep");
  return q_sample_ab(x0, s.at(t), eps);
}

Tensor q_sample_ab(const Tensor& x0, double alpha_bar, const Tensor& eps) {
  require_same(x0, eps, "q_sample");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  auto xs = x0.data();
  auto es = eps.data();
  std::vector<float> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * xs[i] + b * es[i]);
  return Tensor(x0.shape(), std::move(out));
}

Tensor training_loss(const Tensor& eps_pred, const Tensor& eps_true) {
  require_same(eps_pred, eps_true, "training_loss");
  return mse(eps_pred, eps_true);
}

Tensor ddim_transfer(const Tensor& x, const Tensor& eps_pred, double from, double to) {
  require_same(x, eps_pred, "ddim");
  const double sf = std::sqrt(from), nf = std::sqrt(1.0 - from);
  const double st = std::sqrt(to), nt = std::sqrt(1.0 - to);
  auto xs = x.data();
  auto es = eps_pred.data();
  std::vector<float> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x0 = (xs[i] - nf * es[i]) / sf;
    out[i] = static_cast<float>(st * x0 + nt * es[i]);
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& s) {
  if (!(t > t_prev)) {
    throw std::invalid_argument("ddim_step needs t > t_prev, got " + std::to_string(t) + " -> " + std::to_string(t_prev));
  }
  return ddim_transfer(x_t, eps_pred, s.at(t), s.at(t_prev));
}

Tensor ddim_invert_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_next, const NoiseSchedule& s) {
  if (!(t_next > t)) {
    throw std::invalid_argument("ddim_invert_step needs t_next > t, got " + std::to_string(t) + " -> " +
                                std::to_string(t_next));
  }
  return ddim_transfer(x_t, eps_pred, s.at(t), s.at(t_next));
}

Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double scale) {
  require_same(eps_uncond, eps_cond, "cfg_combine");
  if (!(scale >= 0.0)) throw std::invalid_argument("guidance scale must be >= 0");
  if (scale == 1.0) return eps_cond.detached();
  if (scale == 0.0) return eps_uncond.detached();
  auto u = eps_uncond.data();
  auto c = eps_cond.data();
  std::vector<float> out(u.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(u[i] + scale * (static_cast<double>(c[i]) - u[i]));
  return Tensor(eps_cond.shape(), std::move(out));
}

Trajectory ddim_invert(const Tensor& x0, const std::vector<int>& timesteps, const NoiseSchedule& s,
                       const EpsFn& eps, int refinements) {
  if (refinements < 0) throw std::invalid_argument("inversion refinements must be non-negative");
  if (timesteps.empty()) throw std::invalid_argument("inversion needs at least one timestep");
  Trajectory traj{{kCleanStep}, {x0}};
  int cur = kCleanStep;
  Tensor x = x0;
  for (int t : timesteps) {
    Tensor next = ddim_invert_step(x, eps(x, t), cur, t, s);
    for (int r = 0; r < refinements; ++r) next = ddim_transfer(x, eps(next, t), s.at(cur), s.at(t));
    x = next;
    traj.timesteps.push_back(t);
    traj.latents.push_back(x);
    cur = t;
  }
  return traj;
}

Trajectory ddim_sample(const Tensor& x_T, const std::vector<int>& timesteps, const NoiseSchedule& s,
                       const EpsFn& eps) {
  if (timesteps.empty()) throw std::invalid_argument("sampling needs at least one timestep");
  Trajectory traj{{timesteps.back()}, {x_T}};
  Tensor x = x_T;
  for (size_t i = timesteps.size(); i-- > 0;) {
    const int t = timesteps[i];
    const int prev = i == 0 ? kCleanStep : timesteps[i - 1];
    x = ddim_step(x, eps(x, t), t, prev, s);
    traj.timesteps.push_back(prev);
    traj.latents.push_back(x);
  }
  return traj;
}

}  // namespace motioneditor
