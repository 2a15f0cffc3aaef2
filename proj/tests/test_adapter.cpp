// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "motioneditor/adapter.hpp"

using namespace motioneditor;

namespace {

AdapterWeights trained_like(Rng& rng, int64_t d) {
  AdapterWeights w = AdapterWeights::init(rng, d);
  w.out_proj = rng.normal_tensor({d, d}, 0.3);
  w.ln_t_beta = rng.normal_tensor({d}, 0.1);
  return w;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

// Layer norm over the last axis, written out in double.
Tensor ref_layer_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
  const int64_t d = x.dim(-1), rows = x.numel() / d;
  std::vector<float> out(static_cast<size_t>(x.numel()));
  for (int64_t r = 0; r < rows; ++r) {
    double mu = 0.0, var = 0.0;
    for (int64_t c = 0; c < d; ++c) mu += x[r * d + c];
    mu /= d;
    for (int64_t c = 0; c < d; ++c) var += std::pow(x[r * d + c] - mu, 2);
    var /= d;
    for (int64_t c = 0; c < d; ++c) {
      out[static_cast<size_t>(r * d + c)] = static_cast<float>((x[r * d + c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c]);
    }
  }
  return Tensor(x.shape(), std::move(out));
}

// Frame-axis convolution of m[F, N, d] with kernel[d_out, d_in, 3], zero padded.
Tensor ref_conv(const Tensor& m, const Tensor& k) {
  const int64_t F = m.dim(0), N = m.dim(1), d = m.dim(2);
  std::vector<float> out(static_cast<size_t>(m.numel()));
  for (int64_t f = 0; f < F; ++f)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < d; ++o) {
        double s = 0.0;
        for (int64_t j = 0; j < 3; ++j) {
          const int64_t src = f + j - 1;
          if (src < 0 || src >= F) continue;
          for (int64_t c = 0; c < d; ++c) s += static_cast<double>(k.at({o, c, j})) * m.at({src, n, c});
        }
        out[static_cast<size_t>((f * N + n) * d + o)] = static_cast<float>(s);
      }
  return Tensor(m.shape(), std::move(out));
}

}  // namespace

TEST_CASE("zero output projection makes the adapter an exact identity") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t F = rng.uniform_int(1, 9), N = rng.uniform_int(1, 17), d = 2 * rng.uniform_int(1, 9);
    AdapterWeights w = AdapterWeights::init(rng, d);
    const Tensor m = rng.normal_tensor({F, N, d}, 2.0), z = rng.normal_tensor({F, N, d});
    CHECK(adapter_forward(m, z, w).bit_equal(m));
  }
}

TEST_CASE("single frame with delta kernels and identity attention") {
  Rng rng(2);
  AdapterWeights w = AdapterWeights::init(rng, 8);
  w.cross = w.temporal = ProjectionSet::identity(8);
  std::vector<float> delta(8 * 8 * 3, 0.0f);
  for (int c = 0; c < 8; ++c) delta[static_cast<size_t>((c * 8 + c) * 3 + 1)] = 1.0f;
  w.conv1 = w.conv2 = Tensor({8, 8, 3}, delta);
  w.out_proj = ProjectionSet::identity(8).wo;
  const Tensor m = rng.normal_tensor({1, 5, 8}), z = rng.normal_tensor({1, 5, 8});
  const Tensor out = adapter_forward(m, z, w);
  CHECK(out.shape() == m.shape());
  CHECK(out.all_finite());
  CHECK(adapter_local(m, w).bit_equal(m));
}

TEST_CASE("adapter output matches the documented composition") {
  Rng rng(3);
  const AdapterWeights w = trained_like(rng, 8);
  const Tensor m = rng.normal_tensor({3, 4, 8}), z = rng.normal_tensor({3, 4, 8});
  const Tensor cross = content_cross_attention(ref_layer_norm(m, w.ln_m_gamma, w.ln_m_beta),
                                               ref_layer_norm(z, w.ln_z_gamma, w.ln_z_beta), w.cross);
  const Tensor global = temporal_attention(ref_layer_norm(cross, w.ln_t_gamma, w.ln_t_beta), w.temporal);
  const Tensor local = ref_conv(ref_conv(m, w.conv1), w.conv2);
  const Tensor want = add(linear(add(global, local), w.out_proj), m);
  CHECK(max_diff(adapter_forward(m, z, w), want) <= 1e-5);
  CHECK_THROWS_AS(adapter_forward(m, rng.normal_tensor({3, 5, 8}), w), DimensionError);
}

TEST_CASE("adapter output depends on the latent content") {
  Rng rng(4);
  const AdapterWeights w = trained_like(rng, 8);
  const Tensor m = rng.normal_tensor({3, 4, 8});
  const Tensor a = adapter_forward(m, rng.normal_tensor({3, 4, 8}), w);
  const Tensor b = adapter_forward(m, rng.normal_tensor({3, 4, 8}), w);
  CHECK(max_diff(a, b) > 1e-3);
}

TEST_CASE("local path has a two-frame receptive radius") {
  Rng rng(5);
  const AdapterWeights w = trained_like(rng, 4);
  const Tensor m = rng.normal_tensor({8, 3, 4});
  std::vector<float> bumped = m.to_vector();
  for (int64_t i = 0; i < 3 * 4; ++i) bumped[static_cast<size_t>(2 * 12 + i)] += 1.0f;
  const Tensor a = adapter_local(m, w), b = adapter_local(Tensor(m.shape(), bumped), w);
  for (int64_t f = 0; f < 8; ++f) {
    const bool changed = max_diff(slice(a, 0, f, 1), slice(b, 0, f, 1)) > 0.0;
    CHECK(changed == (std::abs(f - 2) <= 2));
  }
}

TEST_CASE("adapter gradient check") {
  Rng rng(6);
  AdapterWeights zero = AdapterWeights::init(rng, 4);
  zero.visit([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape()); });
  const auto z = adapter_grad_check(zero);
  CHECK_MESSAGE(z.passed(), z.summary());

  const AdapterWeights w = trained_like(rng, 6);
  GradCheckOptions opts;
  opts.samples_per_param = 6;
  const auto r = adapter_grad_check(w, opts);
  CHECK_MESSAGE(r.passed(), r.summary());

  opts.corrupt_backward["conv_temporal"] = 1.5f;
  const auto bad = adapter_grad_check(w, opts);
  CHECK_FALSE(bad.passed());
  const auto failing = bad.failing_params();
  CHECK(std::find(failing.begin(), failing.end(), "conv1") != failing.end());
  CHECK(std::find(failing.begin(), failing.end(), "cross.wq") == failing.end());
}
