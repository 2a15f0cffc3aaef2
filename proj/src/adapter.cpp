// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/adapter.hpp"

#include <cmath>

namespace motioneditor {

void visit_projections(const std::string& prefix, ProjectionSet& p, const ParamVisitor& f) {
  f(prefix + ".wq", p.wq);
  f(prefix + ".wk", p.wk);
  f(prefix + ".wv", p.wv);
  f(prefix + ".wo", p.wo);
}

AdapterWeights AdapterWeights::init(Rng& rng, int64_t d) {
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double conv = 1.0 / std::sqrt(3.0 * static_cast<double>(d));
  AdapterWeights w;
  w.ln_m_gamma = w.ln_z_gamma = w.ln_t_gamma = Tensor::ones({d});
  w.ln_m_beta = w.ln_z_beta = w.ln_t_beta = Tensor::zeros({d});
  w.cross = ProjectionSet::random(rng, d, proj);
  w.temporal = ProjectionSet::random(rng, d, proj);
  w.conv1 = rng.normal_tensor({d, d, 3}, conv);
  w.conv2 = rng.normal_tensor({d, d, 3}, conv);
  w.out_proj = Tensor::zeros({d, d});
  return w;
}

void AdapterWeights::visit(const ParamVisitor& f) {
  f("ln_m.gamma", ln_m_gamma);
  f("ln_m.beta", ln_m_beta);
  f("ln_z.gamma", ln_z_gamma);
  f("ln_z.beta", ln_z_beta);
  f("ln_t.gamma", ln_t_gamma);
  f("ln_t.beta", ln_t_beta);
  visit_projections("cross", cross, f);
  visit_projections("temporal", temporal, f);
  f("conv1", conv1);
  f("conv2", conv2);
  f("out_proj", out_proj);
}

NamedTensors AdapterWeights::named() const {
  NamedTensors out;
  AdapterWeights copy = *this;
  copy.visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

void AdapterWeights::assign(const std::vector<Tensor>& values) {
  size_t i = 0;
  visit([&](const std::string& name, Tensor& t) {
    if (i >= values.size() || values[i].shape() != t.shape()) {
      throw DimensionError("adapter parameter " + name + " expects " + shape_str(t.shape()));
    }
    t = values[i++];
  });
  if (i != values.size()) throw DimensionError("adapter: too many parameter values");
}

Tensor adapter_global(const Tensor& m, const Tensor& z, const AdapterWeights& w) {
  const Tensor cross = content_cross_attention(layer_norm(m, w.ln_m_gamma, w.ln_m_beta),
                                               layer_norm(z, w.ln_z_gamma, w.ln_z_beta), w.cross);
  return temporal_attention(layer_norm(cross, w.ln_t_gamma, w.ln_t_beta), w.temporal);
}

Tensor adapter_local(const Tensor& m, const AdapterWeights& w) {
  const Tensor channels_first = permute(m, {0, 2, 1});
  return permute(conv_temporal(conv_temporal(channels_first, w.conv1), w.conv2), {0, 2, 1});
}

Tensor adapter_forward(const Tensor& m, const Tensor& z, const AdapterWeights& w) {
  if (m.shape() != z.shape() || m.rank() != 3 || m.dim(2) != w.width()) {
    throw DimensionError("adapter: control " + shape_str(m.shape()) + " and latent " + shape_str(z.shape()) +
                         " must both be [F, N, " + std::to_string(w.width()) + "]");
  }
  return add(linear(add(adapter_global(m, z, w), adapter_local(m, w)), w.out_proj), m);
}

GradCheckReport adapter_grad_check(const AdapterWeights& w, const GradCheckOptions& options) {
  Rng rng(options.seed ^ 0xada97e4ULL);
  const int64_t d = w.width();
  const Tensor m = rng.normal_tensor({3, 4, d});
  const Tensor z = rng.normal_tensor({3, 4, d});
  return grad_check(
      w.named(),
      [&](const std::vector<Tensor>& values) {
        AdapterWeights trial = w;
        trial.assign(values);
        return adapter_forward(m, z, trial);
      },
      options);
}

}  // namespace motioneditor
