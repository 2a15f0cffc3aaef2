// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/pipeline.hpp"

#include <cmath>
#include <sstream>

#include "motioneditor/autodiff.hpp"
#include "motioneditor/optim.hpp"

namespace motioneditor {

namespace {

void check_frames(const std::vector<Raster>& frames, int64_t F, const std::string& what) {
  if (static_cast<int64_t>(frames.size()) != F) {
    throw std::invalid_argument(what + ": " + std::to_string(frames.size()) + " frames for a " + std::to_string(F) +
                                "-frame video");
  }
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

}  // namespace

Tensor ModelPredictor::embed(const std::string& prompt) const { return embed_prompt(prompt, model_.unet, model_.config); }

Tensor ModelPredictor::predict(const Tensor& x, int t, const Tensor& text, const Tensor* skeletons,
                               ForwardContext& ctx) const {
  if (skeletons == nullptr) return unet_forward(model_, x, t, text, nullptr, ctx);
  const auto control = controlnet_forward(x, t, *skeletons, model_.control, model_.config);
  return unet_forward(model_, x, t, text, &control, ctx);
}

Tensor OraclePredictor::embed(const std::string&) const { return Tensor::zeros({1, 1}); }

Tensor OraclePredictor::predict(const Tensor& x, int t, const Tensor&, const Tensor*, ForwardContext&) const {
  if (x.shape() != x0_.shape()) throw DimensionError("oracle: latent shape " + shape_str(x.shape()));
  const double ab = schedule_.at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<float> out(static_cast<size_t>(x.numel()));
  for (int64_t i = 0; i < x.numel(); ++i) out[static_cast<size_t>(i)] = static_cast<float>((x[i] - a * x0_[i]) / b);
  return Tensor(x.shape(), std::move(out));
}

Tensor stack_rasters(const std::vector<Raster>& frames, float scale) {
  if (frames.empty()) throw std::invalid_argument("no frames to stack");
  std::vector<Tensor> parts;
  for (const auto& r : frames) {
    if (r.height != frames[0].height || r.width != frames[0].width) {
      throw DimensionError("frame rasters differ in size");
    }
    parts.push_back(reshape(r.to_tensor(scale), {1, 1, r.height, r.width}));
  }
  return concat(parts, 0);
}

TrainResult one_shot_train(Model& m, const Tensor& source, const std::vector<Raster>& skeletons,
                           const std::string& prompt, const TrainConfig& config, const NoiseSchedule& s) {
  check_frames(skeletons, source.dim(0), "training skeletons");
  if (config.steps < 0) throw std::invalid_argument("training steps must be non-negative");
  Rng rng = Rng(config.seed).fork("train");
  const Tensor text = embed_prompt(prompt, m.unet, m.config);
  const Tensor pose = stack_rasters(skeletons, 1.0f / 255.0f);
  OptimizerConfig oc;
  oc.lr = config.lr;
  OptimizerState state(oc);
  const NamedTensors frozen = m.frozen();

  TrainResult result;
  for (int step = 0; step < config.steps; ++step) {
    const int t = static_cast<int>(rng.uniform_int(0, s.T));
    const Tensor eps = rng.normal_tensor(source.shape());
    const Tensor x_t = q_sample(source, t, eps, s);
    const auto control = controlnet_forward(x_t, t, pose, m.control, m.config);

    Tape tape;
    std::vector<Tensor> params, watched;
    for (const auto& [name, value] : m.trainable()) {
      params.push_back(value);
      watched.push_back(tape.watch(value));
    }
    Model trial = m;
    trial.assign_trainable(watched);
    ForwardContext ctx;
    const Tensor loss = training_loss(unet_forward(trial, x_t, t, text, &control, ctx), eps);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (t=" << t << "): loss " << value;
      throw TrainingDiverged(msg.str());
    }
    const Gradients grads = tape.backward(loss);
    for (const auto& [name, f] : frozen) {
      if (auto g = grads.of(f)) result.frozen_grad_norm = std::max(result.frozen_grad_norm, l2_norm(*g));
    }
    std::vector<Tensor> g;
    for (const auto& w : watched) g.push_back(grads.of_or_zeros(w));
    m.assign_trainable(adam_step(params, g, state));
    result.losses.push_back(value);
    result.timesteps.push_back(t);
  }
  return result;
}

Trajectory invert(const NoisePredictor& p, const Tensor& source, const std::vector<Raster>& skeletons,
                  const std::string& prompt, int steps, const NoiseSchedule& s, int refinements) {
  check_frames(skeletons, source.dim(0), "inversion skeletons");
  const Tensor text = p.embed(prompt);
  const Tensor pose = stack_rasters(skeletons, 1.0f / 255.0f);
  return ddim_invert(
      source, strided_timesteps(s, steps), s,
      [&](const Tensor& x, int t) {
        ForwardContext ctx;
        return p.predict(x, t, text, &pose, ctx);
      },
      refinements);
}

Tensor reconstruct(const NoisePredictor& p, const Tensor& source, const std::vector<Raster>& skeletons,
                   const std::string& prompt, int steps, const NoiseSchedule& s, int refinements) {
  const Trajectory inv = invert(p, source, skeletons, prompt, steps, s, refinements);
  const Tensor text = p.embed(prompt);
  const Tensor pose = stack_rasters(skeletons, 1.0f / 255.0f);
  return ddim_sample(inv.final_latent(), strided_timesteps(s, steps), s,
                     [&](const Tensor& x, int t) {
                       ForwardContext ctx;
                       return p.predict(x, t, text, &pose, ctx);
                     })
      .final_latent();
}

void EditJob::validate() const {
  if (source.rank() != 4) throw DimensionError("edit job: source latents must be [F, C, s, s]");
  const int64_t F = source.dim(0);
  check_frames(source_masks, F, "source masks");
  check_frames(source_skeletons, F, "source skeletons");
  check_frames(reference_masks, F, "reference masks");
  check_frames(reference_skeletons, F, "reference skeletons");
  if (sampler.steps < 1) throw std::invalid_argument("sampler steps must be positive");
  if (sampler.inversion_refinements < 0) throw std::invalid_argument("inversion refinements must be non-negative");
  if (sampler.guidance < 0.0) throw std::invalid_argument("guidance scale must be non-negative");
  if (injection.step_fraction < 0.0 || injection.step_fraction > 1.0) {
    throw std::invalid_argument("injection step fraction must lie in [0, 1]");
  }
}

std::array<Tensor, 2> token_masks(const std::vector<Raster>& masks, const NetworkConfig& c) {
  std::array<Tensor, 2> out;
  for (int level = 0; level < 2; ++level) {
    const int64_t side = c.level_size(level);
    std::vector<Tensor> rows;
    for (const auto& m : masks) rows.push_back(reshape(downsample_mask(m.to_tensor(), side, side), {1, side * side}));
    out[static_cast<size_t>(level)] = concat(rows, 0);
  }
  return out;
}

EditResult edit(const NoisePredictor& p, const EditJob& job, const NetworkConfig& c, const NoiseSchedule& s) {
  job.validate();
  const int64_t F = job.source.dim(0);
  EditResult result;
  std::vector<Raster> target_skeletons;
  for (int64_t f = 0; f < F; ++f) {
    const auto i = static_cast<size_t>(f);
    try {
      result.alignment.push_back(
          align(job.source_skeletons[i], job.source_masks[i], job.reference_skeletons[i], job.reference_masks[i]));
    } catch (const std::exception& e) {
      throw std::invalid_argument("alignment failed at frame " + std::to_string(f) + ": " + e.what());
    }
    target_skeletons.push_back(result.alignment.back().skeleton);
  }

  const int steps = job.sampler.steps;
  const std::vector<int> timesteps = strided_timesteps(s, steps);
  result.inversion =
      invert(p, job.source, job.source_skeletons, job.source_prompt, steps, s, job.sampler.inversion_refinements);
  const Tensor& x_T = result.inversion.final_latent();

  const Tensor source_text = p.embed(job.source_prompt);
  const Tensor source_pose = stack_rasters(job.source_skeletons, 1.0f / 255.0f);
  ReconCache cache;
  result.reconstruction = ddim_sample(x_T, timesteps, s, [&](const Tensor& x, int t) {
                            ForwardContext ctx;
                            ctx.role = Role::kReconstruct;
                            ctx.cache = &cache;
                            ctx.injection = job.injection;
                            return p.predict(x, t, source_text, job.recon_control ? &source_pose : nullptr, ctx);
                          }).final_latent();
  result.cache_entries = cache.cs_entries() + cache.temporal_entries();

  const Tensor target_text = p.embed(job.target_prompt);
  const Tensor null_text = p.embed("");
  const Tensor target_pose = stack_rasters(target_skeletons, 1.0f / 255.0f);
  const auto masks = token_masks(job.source_masks, c);
  const int injected_steps = static_cast<int>(std::ceil(job.injection.step_fraction * steps - 1e-9));
  int index = 0;
  result.edited = ddim_sample(x_T, timesteps, s, [&](const Tensor& x, int t) {
                    ForwardContext ctx;
                    ctx.role = Role::kEdit;
                    ctx.cache = &cache;
                    ctx.injection = job.injection;
                    ctx.inject_this_step = index++ >= steps - injected_steps;
                    ctx.masks = masks;
                    const Tensor cond = p.predict(x, t, target_text, &target_pose, ctx);
                    if (job.sampler.guidance == 1.0) return cond;
                    const Tensor uncond = p.predict(x, t, null_text, &target_pose, ctx);
                    return cfg_combine(uncond, cond, job.sampler.guidance);
                  }).final_latent();
  result.edit_cache_writes = cache.cs_entries() + cache.temporal_entries() - result.cache_entries;
  result.coverage = cache.distinct_cs_reads();
  return result;
}

}  // namespace motioneditor
