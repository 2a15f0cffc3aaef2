// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "motioneditor/autodiff.hpp"

namespace motioneditor {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

// ============================================================================
// Tensor
// ============================================================================

Tensor::Tensor() : data_(std::make_shared<const std::vector<float>>(1, 0.0f)) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)) {
  for (int64_t e : shape_) {
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
  }
  if (static_cast<int64_t>(data.size()) != shape_numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape_));
  }
  data_ = std::make_shared<const std::vector<float>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0f); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::full(Shape shape, float value) {
  const int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<float>(static_cast<size_t>(std::max<int64_t>(n, 0)), value));
}

Tensor Tensor::scalar(float value) { return Tensor({}, {value}); }

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor({static_cast<int64_t>(values.size())}, std::vector<float>(values));
}

Tensor Tensor::from2d(std::initializer_list<std::initializer_list<float>> rows) {
  std::vector<float> data;
  const int64_t cols = rows.size() ? static_cast<int64_t>(rows.begin()->size()) : 0;
  for (const auto& r : rows) {
    if (static_cast<int64_t>(r.size()) != cols) throw DimensionError("ragged rows in from2d");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({static_cast<int64_t>(rows.size()), cols}, std::move(data));
}

int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<size_t>(axis)];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) throw DimensionError("index rank mismatch");
  int64_t flat = 0;
  size_t i = 0;
  for (int64_t v : index) {
    if (v < 0 || v >= shape_[i]) throw DimensionError("index out of range for " + shape_str(shape_));
    flat = flat * shape_[i] + v;
    ++i;
  }
  return (*data_)[static_cast<size_t>(flat)];
}

float Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_->data(), other.data_->data(), data_->size() * sizeof(float)) == 0;
}

bool Tensor::all_finite() const {
  return std::all_of(data_->begin(), data_->end(), [](float v) { return std::isfinite(v); });
}

// ============================================================================
// Raw kernels (no tape)
// ============================================================================

namespace {

Tensor make(Shape shape, std::vector<float> data) { return Tensor(std::move(shape), std::move(data)); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return axis;
}

template <class F>
Tensor map_raw(const Tensor& a, F f) {
  std::vector<float> out(static_cast<size_t>(a.numel()));
  auto d = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return make(a.shape(), std::move(out));
}

template <class F>
Tensor zip_raw(const Tensor& a, const Tensor& b, F f) {
  std::vector<float> out(static_cast<size_t>(a.numel()));
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return make(a.shape(), std::move(out));
}

Tensor add_raw(const Tensor& a, const Tensor& b) { return zip_raw(a, b, [](float x, float y) { return x + y; }); }
Tensor mul_raw(const Tensor& a, const Tensor& b) { return zip_raw(a, b, [](float x, float y) { return x * y; }); }
Tensor neg_raw(const Tensor& a) { return map_raw(a, [](float x) { return -x; }); }
Tensor scale_raw(const Tensor& a, float s) { return map_raw(a, [s](float x) { return x * s; }); }

// C[m x n] = A[m x k] * B[k x n], double accumulation. Rows are processed in
// groups of four sharing each B row; every element still sums over p in order.
void gemm_nn(const float* A, const float* B, float* C, int64_t m, int64_t k, int64_t n) {
  const auto un = static_cast<size_t>(n);
  std::vector<double> acc(4 * un);
  int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::fill(acc.begin(), acc.end(), 0.0);
    double* __restrict a0 = acc.data();
    double* __restrict a1 = a0 + un;
    double* __restrict a2 = a1 + un;
    double* __restrict a3 = a2 + un;
    for (int64_t p = 0; p < k; ++p) {
      const double x0 = A[i * k + p], x1 = A[(i + 1) * k + p], x2 = A[(i + 2) * k + p], x3 = A[(i + 3) * k + p];
      const float* __restrict brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) {
        const double b = brow[j];
        a0[j] += x0 * b;
        a1[j] += x1 * b;
        a2[j] += x2 * b;
        a3[j] += x3 * b;
      }
    }
    for (int64_t r = 0; r < 4; ++r)
      for (int64_t j = 0; j < n; ++j) C[(i + r) * n + j] = static_cast<float>(acc[static_cast<size_t>(r * n + j)]);
  }
  for (; i < m; ++i) {
    std::fill(acc.begin(), acc.begin() + n, 0.0);
    const float* arow = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double a = arow[p];
      const float* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += a * brow[j];
    }
    for (int64_t j = 0; j < n; ++j) C[i * n + j] = static_cast<float>(acc[static_cast<size_t>(j)]);
  }
}

std::vector<float> transpose_buf(const float* A, int64_t rows, int64_t cols) {
  std::vector<float> t(static_cast<size_t>(rows * cols));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) t[static_cast<size_t>(j * rows + i)] = A[i * cols + j];
  return t;
}

// op(A) * op(B) for 2-D tensors; ta/tb request the transposed operand.
Tensor matmul_raw(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const int64_t m = ta ? a.dim(1) : a.dim(0);
  const int64_t k = ta ? a.dim(0) : a.dim(1);
  const int64_t kb = tb ? b.dim(1) : b.dim(0);
  const int64_t n = tb ? b.dim(0) : b.dim(1);
  if (k != kb) throw DimensionError("matmul: inner extents differ");
  std::vector<float> abuf, bbuf;
  const float* A = a.data().data();
  const float* B = b.data().data();
  if (ta) {
    abuf = transpose_buf(A, a.dim(0), a.dim(1));
    A = abuf.data();
  }
  if (tb) {
    bbuf = transpose_buf(B, b.dim(0), b.dim(1));
    B = bbuf.data();
  }
  std::vector<float> out(static_cast<size_t>(m * n));
  gemm_nn(A, B, out.data(), m, k, n);
  return make({m, n}, std::move(out));
}

Tensor bmm_raw(const Tensor& a, bool ta, const Tensor& b, bool tb) {
  const int64_t batch = a.dim(0);
  const int64_t ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
  const int64_t m = ta ? ac : ar, k = ta ? ar : ac, n = tb ? br : bc;
  std::vector<float> out(static_cast<size_t>(batch * m * n));
  for (int64_t s = 0; s < batch; ++s) {
    const float* A = a.data().data() + s * ar * ac;
    const float* B = b.data().data() + s * br * bc;
    std::vector<float> abuf, bbuf;
    if (ta) {
      abuf = transpose_buf(A, ar, ac);
      A = abuf.data();
    }
    if (tb) {
      bbuf = transpose_buf(B, br, bc);
      B = bbuf.data();
    }
    gemm_nn(A, B, out.data() + s * m * n, m, k, n);
  }
  return make({batch, m, n}, std::move(out));
}

Tensor permute_raw(const Tensor& x, const std::vector<int>& axes) {
  const int r = x.rank();
  Shape out_shape(static_cast<size_t>(r));
  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  std::vector<int64_t> src_stride(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  std::vector<float> out(static_cast<size_t>(x.numel()));
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  auto src = x.data();
  int64_t offset = 0;
  for (size_t flat = 0; flat < out.size(); ++flat) {
    out[flat] = src[static_cast<size_t>(offset)];
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) {
        offset += src_stride[d];
        break;
      }
      offset -= src_stride[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  return make(std::move(out_shape), std::move(out));
}

struct AxisSplit {
  int64_t outer, extent, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Tensor slice_raw(const Tensor& x, int axis, int64_t start, int64_t length) {
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;
  std::vector<float> out(static_cast<size_t>(sp.outer * length * sp.inner));
  auto src = x.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    const float* from = src.data() + (o * sp.extent + start) * sp.inner;
    std::copy(from, from + length * sp.inner, out.data() + o * length * sp.inner);
  }
  return make(std::move(out_shape), std::move(out));
}

Tensor concat_raw(const std::vector<Tensor>& parts, int axis) {
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) total += p.shape()[static_cast<size_t>(axis)];
  out_shape[static_cast<size_t>(axis)] = total;
  const AxisSplit sp = split_at(out_shape, axis);
  std::vector<float> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t ext = p.shape()[static_cast<size_t>(axis)];
    auto src = p.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::copy(src.data() + o * ext * sp.inner, src.data() + (o + 1) * ext * sp.inner,
                out.data() + (o * total + offset) * sp.inner);
    }
    offset += ext;
  }
  return make(std::move(out_shape), std::move(out));
}

// Zero tensor of `shape` with `g` written at [start, start+len) along axis.
Tensor pad_into(const Shape& shape, int axis, int64_t start, const Tensor& g) {
  const AxisSplit sp = split_at(shape, axis);
  const int64_t len = g.shape()[static_cast<size_t>(axis)];
  std::vector<float> out(static_cast<size_t>(shape_numel(shape)), 0.0f);
  auto src = g.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    std::copy(src.data() + o * len * sp.inner, src.data() + (o + 1) * len * sp.inner,
              out.data() + (o * sp.extent + start) * sp.inner);
  }
  return make(shape, std::move(out));
}

// Sums x over every axis except `axis`, which has extent n, yielding [n].
Tensor reduce_to_axis(const Tensor& x, int axis) {
  const AxisSplit sp = split_at(x.shape(), axis);
  std::vector<double> acc(static_cast<size_t>(sp.extent), 0.0);
  auto d = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t e = 0; e < sp.extent; ++e) {
      const float* p = d.data() + (o * sp.extent + e) * sp.inner;
      double s = 0.0;
      for (int64_t i = 0; i < sp.inner; ++i) s += p[i];
      acc[static_cast<size_t>(e)] += s;
    }
  std::vector<float> out(acc.begin(), acc.end());
  return make({sp.extent}, std::move(out));
}

std::vector<float> im2col(const float* x, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
                          int64_t Ho, int64_t Wo) {
  std::vector<float> cols(static_cast<size_t>(C * k * k * Ho * Wo), 0.0f);
  for (int64_t c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols.data() + ((c * k + ky) * k + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            row[oy * Wo + ox] = x[(c * H + iy) * W + ix];
          }
        }
      }
  return cols;
}

void col2im_add(const float* cols, float* x, int64_t C, int64_t H, int64_t W, int k, int stride, int pad,
                int64_t Ho, int64_t Wo) {
  for (int64_t c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            x[(c * H + iy) * W + ix] += row[oy * Wo + ox];
          }
        }
      }
}

struct TemporalDims {
  int64_t frames, cin, cout, spatial, taps;
  bool depthwise;
};

TemporalDims temporal_dims(const Tensor& x, const Tensor& kernel) {
  if (x.rank() < 2) throw DimensionError("conv_temporal: input must be [F, C, ...], got " + shape_str(x.shape()));
  TemporalDims d{};
  d.frames = x.dim(0);
  d.cin = x.dim(1);
  d.spatial = x.numel() / (d.frames * d.cin);
  if (kernel.rank() == 1) {
    d.depthwise = true;
    d.taps = kernel.dim(0);
    d.cout = d.cin;
  } else if (kernel.rank() == 3) {
    d.depthwise = false;
    d.cout = kernel.dim(0);
    d.taps = kernel.dim(2);
    if (kernel.dim(1) != d.cin) {
      throw DimensionError("conv_temporal: kernel " + shape_str(kernel.shape()) + " does not match input " +
                           shape_str(x.shape()));
    }
  } else {
    throw DimensionError("conv_temporal: kernel must be [k] or [Cout, C, k], got " + shape_str(kernel.shape()));
  }
  if (d.taps % 2 == 0) throw DimensionError("conv_temporal: kernel width must be odd, got " + std::to_string(d.taps));
  return d;
}

// Full-kernel temporal convolution with kernel K[Cout, Cin, k].
std::vector<float> temporal_forward(const float* x, const float* K, const TemporalDims& d) {
  const int64_t r = d.taps / 2;
  std::vector<float> out(static_cast<size_t>(d.frames * d.cout * d.spatial));
  std::vector<double> acc(static_cast<size_t>(d.spatial));
  for (int64_t f = 0; f < d.frames; ++f)
    for (int64_t o = 0; o < d.cout; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int64_t j = 0; j < d.taps; ++j) {
        const int64_t src = f + j - r;
        if (src < 0 || src >= d.frames) continue;
        for (int64_t c = 0; c < d.cin; ++c) {
          const double kv = K[(o * d.cin + c) * d.taps + j];
          const float* xs = x + (src * d.cin + c) * d.spatial;
          for (int64_t s = 0; s < d.spatial; ++s) acc[static_cast<size_t>(s)] += kv * xs[s];
        }
      }
      float* dst = out.data() + (f * d.cout + o) * d.spatial;
      for (int64_t s = 0; s < d.spatial; ++s) dst[s] = static_cast<float>(acc[static_cast<size_t>(s)]);
    }
  return out;
}

// Expands a per-channel kernel [k] into a diagonal [C, C, k] kernel.
std::vector<float> expand_depthwise(const Tensor& kernel, int64_t channels) {
  const int64_t k = kernel.dim(0);
  std::vector<float> full(static_cast<size_t>(channels * channels * k), 0.0f);
  for (int64_t c = 0; c < channels; ++c)
    for (int64_t j = 0; j < k; ++j) full[static_cast<size_t>((c * channels + c) * k + j)] = kernel[j];
  return full;
}

}  // namespace

// ============================================================================
// Elementwise
// ============================================================================

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return detail::record("add", {&a, &b}, add_raw(a, b), [](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, ctx.grad());
    if (ctx.wants(1)) ctx.set(1, ctx.grad());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return detail::record("sub", {&a, &b}, zip_raw(a, b, [](float x, float y) { return x - y; }),
                        [](BackwardContext& ctx) {
                          if (ctx.wants(0)) ctx.set(0, ctx.grad());
                          if (ctx.wants(1)) ctx.set(1, neg_raw(ctx.grad()));
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor ad = a.detached(), bd = b.detached();
  return detail::record("mul", {&a, &b}, mul_raw(a, b), [ad, bd](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, mul_raw(ctx.grad(), bd));
    if (ctx.wants(1)) ctx.set(1, mul_raw(ctx.grad(), ad));
  });
}

Tensor scale(const Tensor& a, float s) {
  return detail::record("scale", {&a}, scale_raw(a, s), [s](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, scale_raw(ctx.grad(), s));
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.dim(-1) != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  const int64_t n = bias.dim(0);
  std::vector<float> out = x.to_vector();
  auto b = bias.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] += b[i % static_cast<size_t>(n)];
  const int last = x.rank() - 1;
  return detail::record("add_bias", {&x, &bias}, make(x.shape(), std::move(out)), [last](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, ctx.grad());
    if (ctx.wants(1)) ctx.set(1, reduce_to_axis(ctx.grad(), last));
  });
}

Tensor add_channel(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() < 2 || x.dim(1) != bias.dim(0)) {
    throw DimensionError("add_channel: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), 1);
  std::vector<float> out = x.to_vector();
  auto b = bias.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t c = 0; c < sp.extent; ++c) {
      float* p = out.data() + (o * sp.extent + c) * sp.inner;
      for (int64_t i = 0; i < sp.inner; ++i) p[i] += b[c];
    }
  return detail::record("add_channel", {&x, &bias}, make(x.shape(), std::move(out)), [](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, ctx.grad());
    if (ctx.wants(1)) ctx.set(1, reduce_to_axis(ctx.grad(), 1));
  });
}

// ============================================================================
// Products
// ============================================================================

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor ad = a.detached(), bd = b.detached();
  return detail::record("matmul", {&a, &b}, matmul_raw(a, false, b, false), [ad, bd](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, matmul_raw(ctx.grad(), false, bd, true));
    if (ctx.wants(1)) ctx.set(1, matmul_raw(ad, true, ctx.grad(), false));
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor ad = a.detached(), bd = b.detached();
  return detail::record("bmm", {&a, &b}, bmm_raw(a, false, b, false), [ad, bd](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, bmm_raw(ctx.grad(), false, bd, true));
    if (ctx.wants(1)) ctx.set(1, bmm_raw(ad, true, ctx.grad(), false));
  });
}

Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.rank() < 1 || x.dim(-1) != w.dim(0)) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  if (x.rank() == 2) return matmul(x, w);
  const int64_t k = w.dim(0);
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  return reshape(matmul(reshape(x, {x.numel() / k, k}), w), std::move(out_shape));
}

// ============================================================================
// Layout
// ============================================================================

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  if (static_cast<int>(axes.size()) != x.rank()) throw DimensionError("permute: axes/rank mismatch");
  std::vector<int> inverse(axes.size(), -1);
  for (size_t i = 0; i < axes.size(); ++i) {
    const int a = axes[i];
    if (a < 0 || a >= x.rank() || inverse[static_cast<size_t>(a)] != -1) {
      throw DimensionError("permute: invalid axis permutation");
    }
    inverse[static_cast<size_t>(a)] = static_cast<int>(i);
  }
  return detail::record("permute", {&x}, permute_raw(x, axes), [inverse](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, permute_raw(ctx.grad(), inverse));
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Shape in_shape = x.shape();
  Tensor out(std::move(shape), x.to_vector());
  return detail::record("reshape", {&x}, std::move(out), [in_shape](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, Tensor(in_shape, ctx.grad().to_vector()));
  });
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const int64_t ext = x.dim(axis);
  if (start < 0 || length <= 0 || start + length > ext) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside extent " + std::to_string(ext) + " of " + shape_str(x.shape()));
  }
  Shape in_shape = x.shape();
  return detail::record("slice", {&x}, slice_raw(x, axis, start, length),
                        [in_shape, axis, start](BackwardContext& ctx) {
                          if (ctx.wants(0)) ctx.set(0, pad_into(in_shape, axis, start, ctx.grad()));
                        });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: empty part list");
  axis = normalize_axis(axis, parts[0].rank(), "concat");
  for (const auto& p : parts) {
    bool ok = p.rank() == parts[0].rank();
    for (int i = 0; ok && i < p.rank(); ++i) ok = (i == axis) || p.shape()[i] == parts[0].shape()[i];
    if (!ok) {
      throw DimensionError("concat: incompatible extents " + shape_str(parts[0].shape()) + " and " +
                           shape_str(p.shape()) + " on axis " + std::to_string(axis));
    }
  }
  std::vector<const Tensor*> inputs;
  std::vector<int64_t> starts, lengths;
  int64_t offset = 0;
  for (const auto& p : parts) {
    inputs.push_back(&p);
    starts.push_back(offset);
    lengths.push_back(p.shape()[static_cast<size_t>(axis)]);
    offset += lengths.back();
  }
  return detail::record("concat", inputs, concat_raw(parts, axis), [axis, starts, lengths](BackwardContext& ctx) {
    for (size_t i = 0; i < starts.size(); ++i) {
      if (ctx.wants(i)) ctx.set(i, slice_raw(ctx.grad(), axis, starts[i], lengths[i]));
    }
  });
}

Tensor select_rows(const Tensor& x, const std::vector<int64_t>& rows) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("select_rows: expected rank 2 or 3");
  if (rows.empty()) throw DimensionError("select_rows: empty row list");
  const int axis = x.rank() - 2;
  const AxisSplit sp = split_at(x.shape(), axis);
  for (int64_t r : rows) {
    if (r < 0 || r >= sp.extent) throw DimensionError("select_rows: row index out of range");
  }
  const int64_t n_out = static_cast<int64_t>(rows.size());
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = n_out;
  std::vector<float> out(static_cast<size_t>(sp.outer * n_out * sp.inner));
  auto src = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < n_out; ++i) {
      const float* from = src.data() + (o * sp.extent + rows[static_cast<size_t>(i)]) * sp.inner;
      std::copy(from, from + sp.inner, out.data() + (o * n_out + i) * sp.inner);
    }
  Shape in_shape = x.shape();
  return detail::record("select_rows", {&x}, make(std::move(out_shape), std::move(out)),
                        [in_shape, rows, sp, n_out](BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          std::vector<float> g(static_cast<size_t>(shape_numel(in_shape)), 0.0f);
                          auto gd = ctx.grad().data();
                          for (int64_t o = 0; o < sp.outer; ++o)
                            for (int64_t i = 0; i < n_out; ++i) {
                              float* to = g.data() + (o * sp.extent + rows[static_cast<size_t>(i)]) * sp.inner;
                              const float* from = gd.data() + (o * n_out + i) * sp.inner;
                              for (int64_t j = 0; j < sp.inner; ++j) to[j] += from[j];
                            }
                          ctx.set(0, make(in_shape, std::move(g)));
                        });
}

// ============================================================================
// Reductions
// ============================================================================

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  Shape in_shape = x.shape();
  return detail::record("sum", {&x}, Tensor::scalar(static_cast<float>(s)), [in_shape](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, Tensor::full(in_shape, ctx.grad().item()));
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  Shape in_shape = x.shape();
  return detail::record("mean", {&x}, Tensor::scalar(static_cast<float>(s / n)), [in_shape, n](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.set(0, Tensor::full(in_shape, static_cast<float>(ctx.grad().item() / n)));
  });
}

// ============================================================================
// Nonlinearities
// ============================================================================

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), axis);
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto src = x.data();
  std::vector<double> e(static_cast<size_t>(sp.extent));
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      const int64_t base = o * sp.extent * sp.inner + i;
      float mx = src[static_cast<size_t>(base)];
      for (int64_t k = 1; k < sp.extent; ++k) mx = std::max(mx, src[static_cast<size_t>(base + k * sp.inner)]);
      double z = 0.0;
      for (int64_t k = 0; k < sp.extent; ++k) {
        e[static_cast<size_t>(k)] = std::exp(static_cast<double>(src[static_cast<size_t>(base + k * sp.inner)]) - mx);
        z += e[static_cast<size_t>(k)];
      }
      for (int64_t k = 0; k < sp.extent; ++k)
        out[static_cast<size_t>(base + k * sp.inner)] = static_cast<float>(e[static_cast<size_t>(k)] / z);
    }
  Tensor y = make(x.shape(), std::move(out));
  return detail::record("softmax", {&x}, y, [y, sp](BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    auto yd = y.data();
    auto gd = ctx.grad().data();
    std::vector<float> gx(yd.size());
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        const int64_t base = o * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (int64_t k = 0; k < sp.extent; ++k) {
          const size_t at = static_cast<size_t>(base + k * sp.inner);
          dot += static_cast<double>(gd[at]) * yd[at];
        }
        for (int64_t k = 0; k < sp.extent; ++k) {
          const size_t at = static_cast<size_t>(base + k * sp.inner);
          gx[at] = static_cast<float>(yd[at] * (gd[at] - dot));
        }
      }
    ctx.set(0, make(y.shape(), std::move(gx)));
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  constexpr double kEps = 1e-5;
  const int64_t n = x.dim(-1);
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match " + shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / n;
  auto src = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<float> out(static_cast<size_t>(x.numel()));
  std::vector<float> xhat(out.size());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* p = src.data() + r * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += p[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (p[j] - mu) * (p[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kEps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < n; ++j) {
      const double h = (p[j] - mu) * is;
      xhat[static_cast<size_t>(r * n + j)] = static_cast<float>(h);
      out[static_cast<size_t>(r * n + j)] = static_cast<float>(h * gm[j] + bt[j]);
    }
  }
  Tensor xh = make(x.shape(), std::move(xhat));
  Tensor gd = gamma.detached();
  return detail::record(
      "layer_norm", {&x, &gamma, &beta}, make(x.shape(), std::move(out)),
      [xh, gd, inv_std, n, rows](BackwardContext& ctx) {
        auto g = ctx.grad().data();
        auto h = xh.data();
        auto gm = gd.data();
        if (ctx.wants(0)) {
          std::vector<float> gx(g.size());
          for (int64_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (int64_t j = 0; j < n; ++j) {
              const double dh = static_cast<double>(g[static_cast<size_t>(r * n + j)]) * gm[j];
              s1 += dh;
              s2 += dh * h[static_cast<size_t>(r * n + j)];
            }
            const double is = inv_std[static_cast<size_t>(r)];
            for (int64_t j = 0; j < n; ++j) {
              const size_t at = static_cast<size_t>(r * n + j);
              const double dh = static_cast<double>(g[at]) * gm[j];
              gx[at] = static_cast<float>(is / n * (n * dh - s1 - h[at] * s2));
            }
          }
          ctx.set(0, make(xh.shape(), std::move(gx)));
        }
        if (ctx.wants(1) || ctx.wants(2)) {
          std::vector<double> dg(static_cast<size_t>(n), 0.0), db(static_cast<size_t>(n), 0.0);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < n; ++j) {
              const size_t at = static_cast<size_t>(r * n + j);
              dg[static_cast<size_t>(j)] += static_cast<double>(g[at]) * h[at];
              db[static_cast<size_t>(j)] += g[at];
            }
          if (ctx.wants(1)) ctx.set(1, make({n}, std::vector<float>(dg.begin(), dg.end())));
          if (ctx.wants(2)) ctx.set(2, make({n}, std::vector<float>(db.begin(), db.end())));
        }
      });
}

Tensor silu(const Tensor& x) {
  Tensor xd = x.detached();
  Tensor y = map_raw(x, [](float v) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
    return static_cast<float>(v * s);
  });
  return detail::record("silu", {&x}, y, [xd](BackwardContext& ctx) {
    if (!ctx.wants(0)) return;
    ctx.set(0, zip_raw(ctx.grad(), xd, [](float g, float v) {
              const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
              return static_cast<float>(g * s * (1.0 + v * (1.0 - s)));
            }));
  });
}

// ============================================================================
// Convolutions and resampling
// ============================================================================

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3) ||
      bias.shape() != Shape{w.dim(0)}) {
    throw DimensionError("conv2d: incompatible input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                         ", bias " + shape_str(bias.shape()));
  }
  if (stride < 1 || padding < 0) throw DimensionError("conv2d: invalid stride/padding");
  const int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  const int64_t Ho = (H + 2 * padding - k) / stride + 1;
  const int64_t Wo = (W + 2 * padding - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw DimensionError("conv2d: kernel larger than padded input");
  const int64_t P = Ho * Wo, KK = C * k * k;
  std::vector<float> out(static_cast<size_t>(F * Co * P));
  auto b = bias.data();
  for (int64_t f = 0; f < F; ++f) {
    auto cols = im2col(x.data().data() + f * C * H * W, C, H, W, k, stride, padding, Ho, Wo);
    float* dst = out.data() + f * Co * P;
    gemm_nn(w.data().data(), cols.data(), dst, Co, KK, P);
    for (int64_t o = 0; o < Co; ++o)
      for (int64_t p = 0; p < P; ++p) dst[o * P + p] += b[o];
  }
  Tensor xd = x.detached(), wd = w.detached();
  return detail::record(
      "conv2d", {&x, &w, &bias}, make({F, Co, Ho, Wo}, std::move(out)),
      [xd, wd, stride, padding, F, C, H, W, Co, k, Ho, Wo](BackwardContext& ctx) {
        const int64_t P = Ho * Wo, KK = C * k * k;
        auto g = ctx.grad().data();
        std::vector<float> gx, gw;
        std::vector<double> gw_acc;
        if (ctx.wants(0)) gx.assign(static_cast<size_t>(F * C * H * W), 0.0f);
        if (ctx.wants(1)) gw_acc.assign(static_cast<size_t>(Co * KK), 0.0);
        std::vector<float> wt;
        if (ctx.wants(0)) wt = transpose_buf(wd.data().data(), Co, KK);
        for (int64_t f = 0; f < F; ++f) {
          const float* gf = g.data() + f * Co * P;
          if (ctx.wants(1)) {
            auto cols = im2col(xd.data().data() + f * C * H * W, C, H, W, k, stride, padding, Ho, Wo);
            for (int64_t o = 0; o < Co; ++o)
              for (int64_t q = 0; q < KK; ++q) {
                double s = 0.0;
                const float* gr = gf + o * P;
                const float* cr = cols.data() + q * P;
                for (int64_t p = 0; p < P; ++p) s += static_cast<double>(gr[p]) * cr[p];
                gw_acc[static_cast<size_t>(o * KK + q)] += s;
              }
          }
          if (ctx.wants(0)) {
            std::vector<float> gcols(static_cast<size_t>(KK * P));
            gemm_nn(wt.data(), gf, gcols.data(), KK, Co, P);
            col2im_add(gcols.data(), gx.data() + f * C * H * W, C, H, W, k, stride, padding, Ho, Wo);
          }
        }
        if (ctx.wants(0)) ctx.set(0, make({F, C, H, W}, std::move(gx)));
        if (ctx.wants(1)) {
          gw.assign(gw_acc.begin(), gw_acc.end());
          ctx.set(1, make(wd.shape(), std::move(gw)));
        }
        if (ctx.wants(2)) ctx.set(2, reduce_to_axis(ctx.grad(), 1));
      });
}

Tensor conv_temporal(const Tensor& x, const Tensor& kernel) {
  const TemporalDims d = temporal_dims(x, kernel);
  std::vector<float> full = d.depthwise ? expand_depthwise(kernel, d.cin) : kernel.to_vector();
  Shape out_shape = x.shape();
  out_shape[1] = d.cout;
  Tensor y = make(out_shape, temporal_forward(x.data().data(), full.data(), d));
  Tensor xd = x.detached();
  auto K = std::make_shared<const std::vector<float>>(std::move(full));
  return detail::record("conv_temporal", {&x, &kernel}, std::move(y), [xd, K, d](BackwardContext& ctx) {
    const int64_t r = d.taps / 2;
    auto g = ctx.grad().data();
    auto xv = xd.data();
    if (ctx.wants(0)) {
      std::vector<float> gx(static_cast<size_t>(d.frames * d.cin * d.spatial));
      std::vector<double> acc(static_cast<size_t>(d.spatial));
      for (int64_t f = 0; f < d.frames; ++f)
        for (int64_t c = 0; c < d.cin; ++c) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int64_t j = 0; j < d.taps; ++j) {
            const int64_t of = f - j + r;  // output frame reading input frame f through tap j
            if (of < 0 || of >= d.frames) continue;
            for (int64_t o = 0; o < d.cout; ++o) {
              const double kv = (*K)[static_cast<size_t>((o * d.cin + c) * d.taps + j)];
              const float* gs = g.data() + (of * d.cout + o) * d.spatial;
              for (int64_t s = 0; s < d.spatial; ++s) acc[static_cast<size_t>(s)] += kv * gs[s];
            }
          }
          float* dst = gx.data() + (f * d.cin + c) * d.spatial;
          for (int64_t s = 0; s < d.spatial; ++s) dst[s] = static_cast<float>(acc[static_cast<size_t>(s)]);
        }
      ctx.set(0, make(xd.shape(), std::move(gx)));
    }
    if (ctx.wants(1)) {
      std::vector<double> gk(static_cast<size_t>(d.cout * d.cin * d.taps), 0.0);
      for (int64_t f = 0; f < d.frames; ++f)
        for (int64_t j = 0; j < d.taps; ++j) {
          const int64_t src = f + j - r;
          if (src < 0 || src >= d.frames) continue;
          for (int64_t o = 0; o < d.cout; ++o) {
            const float* gs = g.data() + (f * d.cout + o) * d.spatial;
            for (int64_t c = 0; c < d.cin; ++c) {
              if (d.depthwise && c != o) continue;
              const float* xs = xv.data() + (src * d.cin + c) * d.spatial;
              double s = 0.0;
              for (int64_t q = 0; q < d.spatial; ++q) s += static_cast<double>(gs[q]) * xs[q];
              gk[static_cast<size_t>((o * d.cin + c) * d.taps + j)] += s;
            }
          }
        }
      if (d.depthwise) {
        std::vector<float> gt(static_cast<size_t>(d.taps), 0.0f);
        for (int64_t j = 0; j < d.taps; ++j) {
          double s = 0.0;
          for (int64_t c = 0; c < d.cin; ++c) s += gk[static_cast<size_t>((c * d.cin + c) * d.taps + j)];
          gt[static_cast<size_t>(j)] = static_cast<float>(s);
        }
        ctx.set(1, make({d.taps}, std::move(gt)));
      } else {
        ctx.set(1, make({d.cout, d.cin, d.taps}, std::vector<float>(gk.begin(), gk.end())));
      }
    }
  });
}

Tensor avg_pool2d(const Tensor& x, int factor) {
  if (x.rank() != 4 || factor < 1 || x.dim(2) % factor || x.dim(3) % factor) {
    throw DimensionError("avg_pool2d: input " + shape_str(x.shape()) + " not divisible by " + std::to_string(factor));
  }
  const int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H / factor, Wo = W / factor;
  const double inv = 1.0 / (factor * factor);
  std::vector<float> out(static_cast<size_t>(F * C * Ho * Wo));
  auto src = x.data();
  for (int64_t fc = 0; fc < F * C; ++fc)
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            s += src[static_cast<size_t>((fc * H + oy * factor + dy) * W + ox * factor + dx)];
        out[static_cast<size_t>((fc * Ho + oy) * Wo + ox)] = static_cast<float>(s * inv);
      }
  Shape in_shape = x.shape();
  return detail::record("avg_pool2d", {&x}, make({F, C, Ho, Wo}, std::move(out)),
                        [in_shape, factor, inv](BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          const int64_t H = in_shape[2], W = in_shape[3];
                          const int64_t Ho = H / factor, Wo = W / factor;
                          auto g = ctx.grad().data();
                          std::vector<float> gx(static_cast<size_t>(shape_numel(in_shape)));
                          for (size_t i = 0; i < gx.size(); ++i) {
                            const int64_t xw = static_cast<int64_t>(i) % W;
                            const int64_t yh = (static_cast<int64_t>(i) / W) % H;
                            const int64_t fc = static_cast<int64_t>(i) / (W * H);
                            gx[i] = static_cast<float>(
                                g[static_cast<size_t>((fc * Ho + yh / factor) * Wo + xw / factor)] * inv);
                          }
                          ctx.set(0, make(in_shape, std::move(gx)));
                        });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (x.rank() != 4 || factor < 1) throw DimensionError("upsample_nearest: expected [F, C, H, W] input");
  const int64_t F = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H * factor, Wo = W * factor;
  std::vector<float> out(static_cast<size_t>(F * C * Ho * Wo));
  auto src = x.data();
  for (int64_t fc = 0; fc < F * C; ++fc)
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox)
        out[static_cast<size_t>((fc * Ho + oy) * Wo + ox)] =
            src[static_cast<size_t>((fc * H + oy / factor) * W + ox / factor)];
  Shape in_shape = x.shape();
  return detail::record("upsample_nearest", {&x}, make({F, C, Ho, Wo}, std::move(out)),
                        [in_shape, factor](BackwardContext& ctx) {
                          if (!ctx.wants(0)) return;
                          const int64_t H = in_shape[2], W = in_shape[3];
                          const int64_t Ho = H * factor, Wo = W * factor;
                          auto g = ctx.grad().data();
                          std::vector<double> acc(static_cast<size_t>(shape_numel(in_shape)), 0.0);
                          for (size_t i = 0; i < g.size(); ++i) {
                            const int64_t ox = static_cast<int64_t>(i) % Wo;
                            const int64_t oy = (static_cast<int64_t>(i) / Wo) % Ho;
                            const int64_t fc = static_cast<int64_t>(i) / (Wo * Ho);
                            acc[static_cast<size_t>((fc * H + oy / factor) * W + ox / factor)] += g[i];
                          }
                          ctx.set(0, make(in_shape, std::vector<float>(acc.begin(), acc.end())));
                        });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  Tensor d = sub(pred, target);
  return mean(mul(d, d));
}

}  // namespace motioneditor
