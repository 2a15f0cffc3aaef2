// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/autodiff.hpp"

#include <algorithm>

namespace motioneditor {

std::optional<Tensor> Gradients::of(const Tensor& t) const {
  if (!t.tracked() || t.node() < 0 || static_cast<size_t>(t.node()) >= by_node_.size()) return std::nullopt;
  return by_node_[static_cast<size_t>(t.node())];
}

Tensor Gradients::of_or_zeros(const Tensor& t) const {
  auto g = of(t);
  return g ? *g : Tensor::zeros(t.shape());
}

Tensor Tape::watch(const Tensor& t) {
  Tensor out = t.detached();
  nodes_.push_back(Node{"leaf", {}, t.shape(), nullptr});
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size() - 1);
  return out;
}

Tensor Tape::record(std::string op, const std::vector<const Tensor*>& inputs, Tensor out, BackwardFn fn) {
  Node node{std::move(op), {}, out.shape(), std::move(fn)};
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) node.inputs.push_back(in->tape() == this ? in->node() : -1);
  nodes_.push_back(std::move(node));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size() - 1);
  return out;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.numel() != 1) throw DimensionError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (loss.tape() != this || loss.node() < 0) throw std::invalid_argument("backward: loss is not recorded on this tape");

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  grads[static_cast<size_t>(loss.node())] = Tensor::ones(loss.shape());

  for (int i = loss.node(); i >= 0; --i) {
    const Node& node = nodes_[static_cast<size_t>(i)];
    if (!grads[static_cast<size_t>(i)] || !node.backward) continue;
    std::vector<bool> wants(node.inputs.size());
    bool any = false;
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      wants[k] = node.inputs[k] >= 0;
      any = any || wants[k];
    }
    if (!any) continue;
    std::vector<std::optional<Tensor>> input_grads(node.inputs.size());
    BackwardContext ctx(*grads[static_cast<size_t>(i)], wants, input_grads);
    node.backward(ctx);

    auto corrupt = corruption_.find(node.op);
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      if (!wants[k] || !input_grads[k]) continue;
      Tensor g = *input_grads[k];
      const int target = node.inputs[k];
      if (g.shape() != nodes_[static_cast<size_t>(target)].shape) {
        throw DimensionError("backward rule of '" + node.op + "' produced gradient " + shape_str(g.shape()) +
                             " for input of shape " + shape_str(nodes_[static_cast<size_t>(target)].shape));
      }
      if (corrupt != corruption_.end()) {
        std::vector<float> v = g.to_vector();
        for (float& x : v) x *= corrupt->second;
        g = Tensor(g.shape(), std::move(v));
      }
      auto& slot = grads[static_cast<size_t>(target)];
      if (!slot) {
        slot = g.detached();
      } else {
        std::vector<float> acc = slot->to_vector();
        auto gd = g.data();
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += gd[j];
        slot = Tensor(g.shape(), std::move(acc));
      }
    }
  }
  return Gradients(std::move(grads));
}

Gradients backward(const Tape& tape, const Tensor& loss) { return tape.backward(loss); }

namespace detail {

Tensor record(const char* op, const std::vector<const Tensor*>& inputs, Tensor out, BackwardFn fn) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (in->tracked()) {
      if (tape && in->tape() != tape) throw std::invalid_argument(std::string(op) + ": inputs tracked on different tapes");
      tape = in->tape();
    }
  }
  if (!tape) return out;
  return tape->record(op, inputs, std::move(out), std::move(fn));
}

}  // namespace detail
}  // namespace motioneditor
