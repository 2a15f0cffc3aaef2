// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "motioneditor/adapter.hpp"
#include "motioneditor/attention.hpp"
#include "motioneditor/gradcheck.hpp"
#include "motioneditor/injection.hpp"
#include "motioneditor/rng.hpp"

namespace motioneditor {

struct NetworkConfig {
  int64_t image_size = 32;       // input frames are image_size x image_size
  int64_t latent_factor = 4;     // toy encoder pooling factor
  int64_t latent_channels = 4;
  int64_t frames = 8;
  std::array<int64_t, 2> widths{32, 64};
  int64_t text_dim = 32;
  int64_t time_dim = 32;
  std::array<int64_t, 3> pose_channels{16, 32, 64};

  int64_t latent_size() const { return image_size / latent_factor; }
  /// Spatial side of level 0 and level 1.
  int64_t level_size(int level) const { return latent_size() >> level; }
  void validate() const;
};

/// conv -> time embedding -> SiLU, then CS, text cross and temporal attention
/// sub-blocks, each pre-normalized with a residual.
struct BlockWeights {
  Tensor conv_w, conv_b, time_w;
  Tensor ln1_gamma, ln1_beta;
  ProjectionSet cs;
  Tensor ln2_gamma, ln2_beta;
  ProjectionSet text;
  Tensor ln3_gamma, ln3_beta;
  ProjectionSet temporal;

  static BlockWeights init(Rng& rng, int64_t cin, int64_t d, const NetworkConfig& c);
  void visit(const ParamVisitor& frozen, const ParamVisitor& trainable);
};

struct UNetWeights {
  BlockWeights enc0, enc1, mid, dec1, dec0;
  Tensor out_w, out_b;
  Tensor uncond_text;  // [1, text_dim] reserved unconditional embedding

  static UNetWeights init(Rng& rng, const NetworkConfig& c);
  BlockWeights& block(const std::string& layer);
  const BlockWeights& block(const std::string& layer) const;
};

struct ControlWeights {
  Tensor pose1_w, pose1_b, pose2_w, pose2_b, pose3_w, pose3_b;
  Tensor conv0_w, conv0_b, time0_w;
  Tensor conv1_w, conv1_b, time1_w;
  Tensor zero0_w, zero0_b, zero1_w, zero1_b;  // zero at construction

  static ControlWeights init(Rng& rng, const NetworkConfig& c);
  void visit(const ParamVisitor& f);
};

/// Everything the pipeline runs: U-Net, ControlNet and the two adapters.
struct Model {
  NetworkConfig config;
  UNetWeights unet;
  ControlWeights control;
  std::array<AdapterWeights, 2> adapters;

  static Model init(uint64_t seed, const NetworkConfig& config = {});
  /// Frozen tensors first, then trainable ones (temporal attention of every
  /// U-Net block and both adapters).
  void visit(const ParamVisitor& frozen, const ParamVisitor& trainable);
  NamedTensors trainable() const;
  NamedTensors frozen() const;
  void assign_trainable(const std::vector<Tensor>& values);
  /// Replaces the named tensors (frozen or trainable); unknown names throw.
  void assign(const NamedTensors& values);
  Tensor param(const std::string& name) const;
  /// FNV-1a over the bytes of every frozen tensor.
  uint64_t frozen_checksum() const;
};

/// Stands in for a pre-trained ControlNet: fills the zero output convolutions
/// with seeded values so conditioning has an effect.
void pretrained_control_stand_in(Model& m, uint64_t seed);

Tensor sinusoidal_embedding(int t, int64_t dim);
/// Whitespace tokens hashed to fixed Gaussian vectors; an empty prompt gives
/// the reserved unconditional embedding.
Tensor embed_prompt(const std::string& prompt, const UNetWeights& w, const NetworkConfig& c);

/// 4x average pool of [F, 3, S, S] frames in [0, 1] plus a mean channel,
/// mapped to [-1, 1]: [F, latent_channels, S/4, S/4].
Tensor toy_encode(const Tensor& frames, const NetworkConfig& c);

/// Strided-convolution pose pyramid for [F, 1, S, S] skeleton maps in [0, 1]:
/// level 0 [F, w0, s0, s0], level 1 [F, w1, s1, s1].
std::array<Tensor, 2> pose_encode(const Tensor& skeletons, const ControlWeights& w, const NetworkConfig& c);

/// Block residuals matching the two skip activations.
std::array<Tensor, 2> controlnet_forward(const Tensor& z, int t, const Tensor& skeletons, const ControlWeights& w,
                                         const NetworkConfig& c);

enum class Role { kPlain, kReconstruct, kEdit };

/// Per-layer attention outputs: layer id, sub-block ("cs", "text",
/// "temporal"), value.
using AttentionProbe = std::function<void(const std::string& layer, const std::string& kind, const Tensor& out)>;

struct ForwardContext {
  Role role = Role::kPlain;
  ReconCache* cache = nullptr;
  InjectionConfig injection;
  bool inject_this_step = true;
  /// Source masks per level as [F, N] token masks (editing role).
  std::array<Tensor, 2> masks;
  AttentionProbe probe;
};

/// Noise prediction for z [F, C, s, s]. control may be null.
Tensor unet_forward(const Model& m, const Tensor& z, int t, const Tensor& text, const std::array<Tensor, 2>* control,
                    ForwardContext& ctx);

/// Finite-difference check of the conditioned U-Net output with respect to
/// the named parameters, on a seeded two-frame fixture.
GradCheckReport unet_grad_check(const Model& m, const std::vector<std::string>& params,
                                const GradCheckOptions& options = {});

/// The U-Net layer each level's masks apply to.
int layer_level(const std::string& layer);

/// [F, d, h, w] <-> [F, h*w, d]
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, int64_t h, int64_t w);

}  // namespace motioneditor
