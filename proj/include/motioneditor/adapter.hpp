// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

#include "motioneditor/attention.hpp"
#include "motioneditor/gradcheck.hpp"
#include "motioneditor/rng.hpp"

namespace motioneditor {

/// Callback over named parameter slots; may replace the tensor in place.
using ParamVisitor = std::function<void(const std::string& name, Tensor& value)>;

void visit_projections(const std::string& prefix, ProjectionSet& p, const ParamVisitor& f);

/// One motion adapter for a block of width d.
struct AdapterWeights {
  Tensor ln_m_gamma, ln_m_beta;  // before cross-attention, pose side
  Tensor ln_z_gamma, ln_z_beta;  // before cross-attention, latent side
  Tensor ln_t_gamma, ln_t_beta;  // before temporal attention
  ProjectionSet cross;
  ProjectionSet temporal;
  Tensor conv1, conv2;  // [d, d, 3] temporal kernels
  Tensor out_proj;      // [d, d], zero at construction

  static AdapterWeights init(Rng& rng, int64_t d);
  int64_t width() const { return out_proj.dim(0); }
  void visit(const ParamVisitor& f);
  NamedTensors named() const;
  /// Inverse of named(): takes values in the same order.
  void assign(const std::vector<Tensor>& values);
};

/// temporal_attention(LN(content_cross_attention(LN m, LN z))) for [F, N, d].
Tensor adapter_global(const Tensor& m, const Tensor& z, const AdapterWeights& w);
/// conv2(conv1(m)) along frames.
Tensor adapter_local(const Tensor& m, const AdapterWeights& w);
/// (global + local) W_out + m.
Tensor adapter_forward(const Tensor& m, const Tensor& z, const AdapterWeights& w);

/// Finite-difference check of every adapter parameter on a small seeded
/// fixture (F=3, N=4, d = w.width()).
GradCheckReport adapter_grad_check(const AdapterWeights& w, const GradCheckOptions& options = {});

}  // namespace motioneditor
