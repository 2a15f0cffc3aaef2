// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

/// Handed to a backward rule: the upstream gradient and one output slot per
/// recorded input. Slots of untracked inputs are never read.
class BackwardContext {
 public:
  BackwardContext(const Tensor& grad, const std::vector<bool>& wants,
                  std::vector<std::optional<Tensor>>& out)
      : grad_(grad), wants_(wants), out_(out) {}

  const Tensor& grad() const { return grad_; }
  bool wants(size_t input) const { return wants_[input]; }
  void set(size_t input, Tensor g) { out_[input] = std::move(g); }

 private:
  const Tensor& grad_;
  const std::vector<bool>& wants_;
  std::vector<std::optional<Tensor>>& out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::optional<Tensor>> by_node) : by_node_(std::move(by_node)) {}

  /// Gradient for a watched tensor, or nullopt when the loss does not reach it.
  std::optional<Tensor> of(const Tensor& t) const;
  Tensor of_or_zeros(const Tensor& t) const;

 private:
  std::vector<std::optional<Tensor>> by_node_;
};

/// Records primitive applications in topological order. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf node; the returned tensor shares storage with t.
  Tensor watch(const Tensor& t);

  Gradients backward(const Tensor& loss) const;

  size_t size() const { return nodes_.size(); }
  const std::string& op_name(int node) const { return nodes_.at(static_cast<size_t>(node)).op; }

  /// Test harness: multiplies every gradient emitted by `op`'s backward rule.
  void corrupt_backward(std::string op, float factor) { corruption_[std::move(op)] = factor; }

  /// Appends a node for `out`, computed from `inputs`, and returns `out`
  /// attached to it. Inputs not tracked on this tape get node -1.
  Tensor record(std::string op, const std::vector<const Tensor*>& inputs, Tensor out, BackwardFn fn);

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    Shape shape;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::map<std::string, float> corruption_;
};

namespace detail {
/// Records on the tape of the first tracked input; returns `out` unchanged if
/// no input is tracked.
Tensor record(const char* op, const std::vector<const Tensor*>& inputs, Tensor out, BackwardFn fn);
}  // namespace detail

/// Free-function form of Tape::backward.
Gradients backward(const Tape& tape, const Tensor& loss);

}  // namespace motioneditor
