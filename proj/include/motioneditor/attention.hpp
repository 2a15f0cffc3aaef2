// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "motioneditor/rng.hpp"
#include "motioneditor/tensor.hpp"

namespace motioneditor {

/// Single-head projections in row-vector convention: q = x W_q. wk and wv
/// may map from a different input width (text cross-attention).
struct ProjectionSet {
  Tensor wq, wk, wv, wo;

  static ProjectionSet random(Rng& rng, int64_t d, double stddev, int64_t kv_width = 0);
  static ProjectionSet identity(int64_t d);
  int64_t width() const { return wq.dim(1); }
};

/// softmax(Q K^T / sqrt(d)) for Q[.., n_q, d], K[.., n_k, d].
Tensor attention_weights(const Tensor& q, const Tensor& k);
/// softmax(Q K^T / sqrt(d)) V. Rank 2 or batched rank 3.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v);

/// attend(x W_q, x W_k, x W_v) W_o on x[.., n, d].
Tensor self_attention(const Tensor& x, const ProjectionSet& p);

/// Current-frame queries against [previous; current] keys and values.
Tensor cs_attention(const Tensor& z_prev, const Tensor& z_cur, const ProjectionSet& p);
/// Keys/values of frame i are [z_{i-1}; z_i] with z_{-1} := z_0. z[F, N, d].
Tensor cs_attention_video(const Tensor& z, const ProjectionSet& p);
/// [z_{i-1}; z_i] stacked per frame: [F, 2N, d].
Tensor cs_context(const Tensor& z);

/// Self-attention across frames at each location. x[F, d] (one location) or
/// x[F, N, d].
Tensor temporal_attention(const Tensor& x, const ProjectionSet& p);

/// Queries from m, keys/values from z. m[n_m, d], z[n_z, d] or batched.
Tensor content_cross_attention(const Tensor& m, const Tensor& z, const ProjectionSet& p);

}  // namespace motioneditor
