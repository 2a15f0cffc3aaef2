// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/attention.hpp"

#include <cmath>

namespace motioneditor {

namespace {

Tensor eye(int64_t d) {
  std::vector<float> v(static_cast<size_t>(d * d), 0.0f);
  for (int64_t i = 0; i < d; ++i) v[static_cast<size_t>(i * d + i)] = 1.0f;
  return Tensor({d, d}, std::move(v));
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() == 2) return transpose(x);
  return permute(x, {0, 2, 1});
}

void require_rank23(const Tensor& t, const char* what) {
  if (t.rank() != 2 && t.rank() != 3) {
    throw DimensionError(std::string("attention: ") + what + " must be rank 2 or 3, got " + shape_str(t.shape()));
  }
}

}  // namespace

ProjectionSet ProjectionSet::random(Rng& rng, int64_t d, double stddev, int64_t kv_width) {
  const int64_t kv = kv_width > 0 ? kv_width : d;
  return {rng.normal_tensor({d, d}, stddev), rng.normal_tensor({kv, d}, stddev), rng.normal_tensor({kv, d}, stddev),
          rng.normal_tensor({d, d}, stddev)};
}

ProjectionSet ProjectionSet::identity(int64_t d) { return {eye(d), eye(d), eye(d), eye(d)}; }

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  require_rank23(q, "queries");
  require_rank23(k, "keys");
  if (q.rank() != k.rank() || q.dim(-1) != k.dim(-1) || (q.rank() == 3 && q.dim(0) != k.dim(0))) {
    throw DimensionError("attention: query " + shape_str(q.shape()) + " and key " + shape_str(k.shape()) +
                         " widths differ");
  }
  const float inv = static_cast<float>(1.0 / std::sqrt(static_cast<double>(q.dim(-1))));
  const Tensor kt = transpose_last(k);
  const Tensor logits = q.rank() == 2 ? matmul(q, kt) : bmm(q, kt);
  return softmax(scale(logits, inv), q.rank() - 1);
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (k.shape().size() != v.shape().size() || k.dim(-2) != v.dim(-2)) {
    throw DimensionError("attention: key " + shape_str(k.shape()) + " and value " + shape_str(v.shape()) +
                         " token counts differ");
  }
  if (k.dim(-2) == 0) throw DimensionError("attention: no keys");
  const Tensor w = attention_weights(q, k);
  return q.rank() == 2 ? matmul(w, v) : bmm(w, v);
}

Tensor self_attention(const Tensor& x, const ProjectionSet& p) {
  return linear(attend(linear(x, p.wq), linear(x, p.wk), linear(x, p.wv)), p.wo);
}

Tensor cs_attention(const Tensor& z_prev, const Tensor& z_cur, const ProjectionSet& p) {
  if (z_prev.shape() != z_cur.shape() || z_cur.rank() != 2) {
    throw DimensionError("cs_attention: frames " + shape_str(z_prev.shape()) + " and " + shape_str(z_cur.shape()) +
                         " must be matching [N, d]");
  }
  const Tensor ctx = concat({z_prev, z_cur}, 0);
  return linear(attend(linear(z_cur, p.wq), linear(ctx, p.wk), linear(ctx, p.wv)), p.wo);
}

Tensor cs_context(const Tensor& z) {
  if (z.rank() != 3) throw DimensionError("cs_attention: expected [F, N, d], got " + shape_str(z.shape()));
  const int64_t F = z.dim(0);
  const Tensor prev = F == 1 ? z : concat({slice(z, 0, 0, 1), slice(z, 0, 0, F - 1)}, 0);
  return concat({prev, z}, 1);
}

Tensor cs_attention_video(const Tensor& z, const ProjectionSet& p) {
  const Tensor ctx = cs_context(z);
  return linear(attend(linear(z, p.wq), linear(ctx, p.wk), linear(ctx, p.wv)), p.wo);
}

Tensor temporal_attention(const Tensor& x, const ProjectionSet& p) {
  if (x.rank() == 2) return self_attention(x, p);
  if (x.rank() != 3) throw DimensionError("temporal_attention: expected [F, N, d], got " + shape_str(x.shape()));
  const Tensor per_location = permute(x, {1, 0, 2});
  return permute(self_attention(per_location, p), {1, 0, 2});
}

Tensor content_cross_attention(const Tensor& m, const Tensor& z, const ProjectionSet& p) {
  if (m.dim(-1) != z.dim(-1) || m.rank() != z.rank()) {
    throw DimensionError("content_cross_attention: pose " + shape_str(m.shape()) + " and latent " +
                         shape_str(z.shape()) + " widths differ");
  }
  return linear(attend(linear(m, p.wq), linear(z, p.wk), linear(z, p.wv)), p.wo);
}

}  // namespace motioneditor
