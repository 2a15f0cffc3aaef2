// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motioneditor/diffusion.hpp"
#include "motioneditor/network.hpp"
#include "motioneditor/skeleton.hpp"

namespace motioneditor {

struct SamplerConfig {
  int steps = 50;
  double guidance = 7.5;
  int inversion_refinements = 0;  // fixed-point passes per inversion step
};

struct TrainConfig {
  int steps = 300;
  double lr = 3e-5;
  uint64_t seed = 0;
};

/// Noise prediction used by the inversion and sampling loops.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor embed(const std::string& prompt) const = 0;
  /// skeletons [F, 1, S, S] or null for no pose conditioning.
  virtual Tensor predict(const Tensor& x, int t, const Tensor& text, const Tensor* skeletons,
                         ForwardContext& ctx) const = 0;
};

class ModelPredictor : public NoisePredictor {
 public:
  explicit ModelPredictor(const Model& m) : model_(m) {}
  Tensor embed(const std::string& prompt) const override;
  Tensor predict(const Tensor& x, int t, const Tensor& text, const Tensor* skeletons,
                 ForwardContext& ctx) const override;

 private:
  const Model& model_;
};

/// Returns the exact noise that maps the known clean sample to x; conditioning
/// and context are ignored.
class OraclePredictor : public NoisePredictor {
 public:
  OraclePredictor(Tensor x0, NoiseSchedule s) : x0_(std::move(x0)), schedule_(std::move(s)) {}
  Tensor embed(const std::string& prompt) const override;
  Tensor predict(const Tensor& x, int t, const Tensor& text, const Tensor* skeletons,
                 ForwardContext& ctx) const override;

 private:
  Tensor x0_;
  NoiseSchedule schedule_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::vector<double> losses;
  std::vector<int> timesteps;
  /// Largest gradient norm seen on any frozen tensor over all steps.
  double frozen_grad_norm = 0.0;
};

/// Stacks per-frame rasters into [F, 1, H, W], scaled by `scale`.
Tensor stack_rasters(const std::vector<Raster>& frames, float scale);

/// Fits the temporal attention and adapter weights of `m` to one video.
TrainResult one_shot_train(Model& m, const Tensor& source, const std::vector<Raster>& skeletons,
                           const std::string& prompt, const TrainConfig& config, const NoiseSchedule& s);

Trajectory invert(const NoisePredictor& p, const Tensor& source, const std::vector<Raster>& skeletons,
                  const std::string& prompt, int steps, const NoiseSchedule& s, int refinements = 0);

Tensor reconstruct(const NoisePredictor& p, const Tensor& source, const std::vector<Raster>& skeletons,
                   const std::string& prompt, int steps, const NoiseSchedule& s, int refinements = 0);

struct EditJob {
  Tensor source;  // [F, C, s, s] latents
  std::vector<Raster> source_masks, source_skeletons;
  std::vector<Raster> reference_masks, reference_skeletons;
  std::string source_prompt, target_prompt;
  SamplerConfig sampler;
  InjectionConfig injection;
  bool recon_control = true;  // source skeletons condition the reconstruction branch

  void validate() const;
};

struct EditResult {
  Tensor edited;
  Tensor reconstruction;
  Trajectory inversion;
  std::vector<AlignResult> alignment;
  /// Distinct (layer, timestep, frame) cache entries the editing branch read.
  size_t coverage = 0;
  size_t cache_entries = 0;
  /// Cache entries written while the editing branch ran; always zero.
  size_t edit_cache_writes = 0;
};

/// Per-level [F, N] token masks from image-resolution masks.
std::array<Tensor, 2> token_masks(const std::vector<Raster>& masks, const NetworkConfig& c);

EditResult edit(const NoisePredictor& p, const EditJob& job, const NetworkConfig& c, const NoiseSchedule& s);

}  // namespace motioneditor
