// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace motioneditor {

using Shape = std::vector<int64_t>;

class Tape;

/// Raised when operand shapes violate an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major float32 array. Values are immutable after construction;
/// copies share storage. A tensor produced from tracked inputs carries the
/// tape node that recorded it.
class Tensor {
 public:
  Tensor();  // scalar zero
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);
  static Tensor from(std::initializer_list<float> values);  // rank 1
  static Tensor from2d(std::initializer_list<std::initializer_list<float>> rows);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(data_->size()); }

  std::span<const float> data() const { return *data_; }
  std::vector<float> to_vector() const { return *data_; }
  float operator[](int64_t flat) const { return (*data_)[static_cast<size_t>(flat)]; }
  float at(std::initializer_list<int64_t> index) const;
  float item() const;

  bool tracked() const { return tape_ != nullptr; }
  int node() const { return node_; }
  Tape* tape() const { return tape_; }
  /// Same values, no tape node.
  Tensor detached() const;

  bool bit_equal(const Tensor& other) const;
  bool all_finite() const;

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<const std::vector<float>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// ============================================================================
// Differentiable primitives. Every op records a backward rule when any input
// is tracked; untracked inputs receive no gradient.
// ============================================================================

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

/// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[F, C, ...] + bias[C]
Tensor add_channel(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched product a[B, m, k] x b[B, k, n].
Tensor bmm(const Tensor& a, const Tensor& b);
/// x[..., k] x w[k, n] -> [..., n]
Tensor linear(const Tensor& x, const Tensor& w);

Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Rows of x[n, d] (or x[B, n, d] along axis 1) in the given order.
Tensor select_rows(const Tensor& x, const std::vector<int64_t>& rows);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);
/// Normalizes over the last axis; eps = 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
Tensor silu(const Tensor& x);

/// x[F, Cin, H, W] * w[Cout, Cin, k, k] + bias[Cout], zero padded.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding);

/// Convolution along axis 0 of x[F, C, ...] with zero "same" padding,
/// independently at every trailing index. kernel is either [k] (applied per
/// channel) or [Cout, C, k]. k must be odd.
Tensor conv_temporal(const Tensor& x, const Tensor& kernel);

Tensor avg_pool2d(const Tensor& x, int factor);
Tensor upsample_nearest(const Tensor& x, int factor);

/// mean((pred - target)^2)
Tensor mse(const Tensor& pred, const Tensor& target);

}  // namespace motioneditor
