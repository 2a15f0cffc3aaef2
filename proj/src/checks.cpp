// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/checks.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "motioneditor/adapter.hpp"
#include "motioneditor/attention.hpp"
#include "motioneditor/diffusion.hpp"
#include "motioneditor/fixture.hpp"
#include "motioneditor/injection.hpp"
#include "motioneditor/network.hpp"
#include "motioneditor/pipeline.hpp"
#include "motioneditor/skeleton.hpp"

namespace motioneditor {

namespace {

CheckResult timed(const std::string& name, const std::function<void(CheckResult&)>& fn) {
  CheckResult r;
  r.name = name;
  r.passed = true;
  const auto start = std::chrono::steady_clock::now();
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void fail(CheckResult& r, const std::string& why) {
  if (r.passed) r.detail = why;
  r.passed = false;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(static_cast<double>(a[i]) - b[i]));
  return worst;
}

double rms(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) s += std::pow(static_cast<double>(a[i]) - b[i], 2);
  return std::sqrt(s / static_cast<double>(a.numel()));
}

Tensor binary_mask(Rng& rng, int64_t n, double p) {
  std::vector<float> m(static_cast<size_t>(n));
  for (auto& v : m) v = rng.uniform() < p ? 1.0f : 0.0f;
  return Tensor({n}, std::move(m));
}

struct Figure {
  Raster skeleton, mask;
};

// Stick figure in the box (x, y, w, h) with a mask covering head band and torso.
Figure figure(int64_t H, int64_t W, int64_t x, int64_t y, int64_t w, int64_t h) {
  Figure f{Raster::zeros(H, W), Raster::zeros(H, W)};
  for (int64_t yy = y; yy < y + h; ++yy)
    for (int64_t xx = x; xx < x + w; ++xx)
      if ((yy - y) * 3 < h || std::abs(2 * (xx - x) - (w - 1)) <= w / 2) f.mask.at(yy, xx) = 1;
  KeypointSet k = stick_figure(h, w);
  for (auto& [name, p] : k) {
    p.x += static_cast<double>(x);
    p.y += static_cast<double>(y);
  }
  f.skeleton = render_keypoints(k, H, W, default_bone_table());
  return f;
}

Raster shifted(const Raster& r, int64_t dx, int64_t dy) {
  Raster out = Raster::zeros(r.height, r.width);
  for (int64_t y = 0; y < r.height; ++y)
    for (int64_t x = 0; x < r.width; ++x) {
      const int64_t sx = x - dx, sy = y - dy;
      if (sx >= 0 && sx < r.width && sy >= 0 && sy < r.height) out.at(y, x) = r.at(sy, sx);
    }
  return out;
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

}  // namespace

const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops{
      "add",     "sub",    "mul",   "scale",       "add_bias", "add_channel", "matmul",     "bmm",
      "permute", "reshape", "slice", "concat",     "select_rows", "sum",      "mean",       "softmax",
      "layer_norm", "silu", "conv2d", "conv_temporal", "avg_pool2d", "upsample_nearest", "mse"};
  return ops;
}

std::vector<CheckResult> gradient_suite(uint64_t seed, const std::map<std::string, float>& corrupt) {
  std::vector<CheckResult> out;
  GradCheckOptions opts;
  opts.seed = seed;
  opts.corrupt_backward = corrupt;
  Rng rng = Rng(seed).fork("gradient-suite");

  auto run = [&](const std::string& name, const NamedTensors& params, const Fn& fn, int samples = 4) {
    out.push_back(timed("grad:" + name, [&](CheckResult& r) {
      GradCheckOptions o = opts;
      o.samples_per_param = samples;
      const GradCheckReport report = grad_check(params, fn, o);
      r.passed = report.passed();
      r.detail = report.summary();
    }));
  };

  const int64_t m = 3, n = 4, k = 5;
  const Tensor a = rng.normal_tensor({m, n}), b = rng.normal_tensor({m, n});
  run("add", {{"a", a}, {"b", b}}, [](const auto& p) { return add(p[0], p[1]); });
  run("sub", {{"a", a}, {"b", b}}, [](const auto& p) { return sub(p[0], p[1]); });
  run("mul", {{"a", a}, {"b", b}}, [](const auto& p) { return mul(p[0], p[1]); });
  run("scale", {{"a", a}}, [](const auto& p) { return scale(p[0], -1.7f); });
  run("add_bias", {{"a", a}, {"b", rng.normal_tensor({n})}}, [](const auto& p) { return add_bias(p[0], p[1]); });
  run("matmul", {{"a", a}, {"b", rng.normal_tensor({n, k})}}, [](const auto& p) { return matmul(p[0], p[1]); });
  run("bmm", {{"a", rng.normal_tensor({2, m, n})}, {"b", rng.normal_tensor({2, n, k})}},
      [](const auto& p) { return bmm(p[0], p[1]); });
  run("linear", {{"x", rng.normal_tensor({2, m, n})}, {"w", rng.normal_tensor({n, k})}},
      [](const auto& p) { return linear(p[0], p[1]); });
  run("transpose", {{"a", a}}, [](const auto& p) { return transpose(p[0]); });
  run("permute", {{"x", rng.normal_tensor({m, n, k})}}, [](const auto& p) { return permute(p[0], {2, 0, 1}); });
  run("reshape", {{"a", a}}, [](const auto& p) { return reshape(p[0], {n, m}); });
  run("slice", {{"a", a}}, [](const auto& p) { return slice(p[0], 1, 1, 2); });
  run("concat", {{"a", a}, {"b", b}}, [](const auto& p) { return concat({p[0], p[1]}, 0); });
  run("select_rows", {{"a", a}}, [](const auto& p) { return select_rows(p[0], {2, 0, 2}); });
  run("sum", {{"a", a}}, [](const auto& p) { return sum(p[0]); });
  run("mean", {{"a", a}}, [](const auto& p) { return mean(p[0]); });
  run("softmax", {{"a", a}}, [](const auto& p) { return softmax(p[0], 1); });
  run("layer_norm", {{"x", a}, {"g", rng.normal_tensor({n})}, {"b", rng.normal_tensor({n})}},
      [](const auto& p) { return layer_norm(p[0], p[1], p[2]); });
  run("silu", {{"a", a}}, [](const auto& p) { return silu(p[0]); });
  run("mse", {{"a", a}, {"b", b}}, [](const auto& p) { return mse(p[0], p[1]); });
  const Tensor img = rng.normal_tensor({2, 2, 4, 4});
  run("add_channel", {{"x", img}, {"b", rng.normal_tensor({2})}}, [](const auto& p) { return add_channel(p[0], p[1]); });
  run("conv2d", {{"x", img}, {"w", rng.normal_tensor({3, 2, 3, 3})}, {"b", rng.normal_tensor({3})}},
      [](const auto& p) { return conv2d(p[0], p[1], p[2], 1, 1); });
  run("conv_temporal", {{"x", rng.normal_tensor({4, 2, 3})}, {"k", rng.normal_tensor({3, 2, 3})}},
      [](const auto& p) { return conv_temporal(p[0], p[1]); });
  run("avg_pool2d", {{"x", img}}, [](const auto& p) { return avg_pool2d(p[0], 2); });
  run("upsample_nearest", {{"x", img}}, [](const auto& p) { return upsample_nearest(p[0], 2); });

  const int64_t d = 8, N = 5, F = 3;
  const ProjectionSet proj = ProjectionSet::random(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
  auto proj_params = [&](NamedTensors extra) {
    extra.insert(extra.end(), {{"wq", proj.wq}, {"wk", proj.wk}, {"wv", proj.wv}, {"wo", proj.wo}});
    return extra;
  };
  auto as_proj = [](const std::vector<Tensor>& p, size_t at) { return ProjectionSet{p[at], p[at + 1], p[at + 2], p[at + 3]}; };
  run("attend", {{"q", rng.normal_tensor({F, N, d})}, {"k", rng.normal_tensor({F, 2 * N, d})}, {"v", rng.normal_tensor({F, 2 * N, d})}},
      [](const auto& p) { return attend(p[0], p[1], p[2]); });
  run("self_attention", proj_params({{"x", rng.normal_tensor({N, d})}}),
      [&](const auto& p) { return self_attention(p[0], as_proj(p, 1)); });
  run("cs_attention", proj_params({{"z", rng.normal_tensor({F, N, d})}}),
      [&](const auto& p) { return cs_attention_video(p[0], as_proj(p, 1)); });
  run("temporal_attention", proj_params({{"x", rng.normal_tensor({N, F, d})}}),
      [&](const auto& p) { return temporal_attention(permute(p[0], {1, 0, 2}), as_proj(p, 1)); });
  run("content_cross_attention", proj_params({{"m", rng.normal_tensor({F, N, d})}, {"z", rng.normal_tensor({F, N, d})}}),
      [&](const auto& p) { return content_cross_attention(p[0], p[1], as_proj(p, 2)); });
  const Tensor kr = rng.normal_tensor({2 * N, d}), vr = rng.normal_tensor({2 * N, d});
  const Tensor mask = binary_mask(rng, 2 * N, 0.5);
  run("injected_cs_attention",
      {{"q", rng.normal_tensor({N, d})}, {"k_cu", rng.normal_tensor({N, d})}, {"v_cu", rng.normal_tensor({N, d})}},
      [&](const auto& p) {
        const InjectedKV inj = build_injected_kv(decouple_kv(kr, vr, mask), p[1], p[2]);
        return attend(p[0], inj.k, inj.v);
      });

  out.push_back(timed("grad:adapter", [&](CheckResult& r) {
    Rng arng = rng.fork("adapter");
    AdapterWeights w = AdapterWeights::init(arng, d);
    w.out_proj = arng.normal_tensor({d, d}, 0.3);
    const GradCheckReport report = adapter_grad_check(w, opts);
    r.passed = report.passed();
    r.detail = report.summary();
  }));

  out.push_back(timed("grad:unet", [&](CheckResult& r) {
    Model model = Model::init(seed);
    pretrained_control_stand_in(model, seed);
    Rng urng = rng.fork("unet");
    for (auto& ad : model.adapters) ad.out_proj = urng.normal_tensor(ad.out_proj.shape(), 0.2);
    GradCheckOptions o = opts;
    o.samples_per_param = 2;
    o.step = 1e-2;
    const GradCheckReport report =
        unet_grad_check(model,
                        {"unet.enc0.conv_w", "unet.enc1.cs.wq", "unet.mid.text.wv", "unet.dec1.temporal.wk",
                         "unet.dec0.ln3.beta", "unet.out_w", "adapter1.conv2", "control.conv0_w"},
                        o);
    r.passed = report.passed();
    r.detail = report.summary();
  }));
  return out;
}

CheckResult check_partition_identity(uint64_t seed) {
  return timed("partition identity", [&](CheckResult& r) {
    Rng rng = Rng(seed).fork("partition");
    for (int trial = 0; trial < 100; ++trial) {
      const int64_t n = rng.uniform_int(1, 65), d = rng.uniform_int(1, 33);
      const Tensor k = rng.normal_tensor({n, d}), v = rng.normal_tensor({n, d});
      const DecoupledKV s = decouple_kv(k, v, binary_mask(rng, n, rng.uniform()));
      if (!add(s.k_fg, s.k_bg).bit_equal(k) || !add(s.v_fg, s.v_bg).bit_equal(v)) {
        fail(r, "K_fg + K_bg != K at trial " + std::to_string(trial));
      }
    }
    if (r.passed) r.detail = "100 fixtures bit-exact";
  });
}

CheckResult check_duplication_reduction(uint64_t seed) {
  return timed("duplication reduction", [&](CheckResult& r) {
    Rng rng = Rng(seed).fork("duplication");
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int64_t N = rng.uniform_int(1, 17), d = rng.uniform_int(2, 17), F = rng.uniform_int(1, 5);
      const ProjectionSet p = ProjectionSet::random(rng, d, 1.0 / std::sqrt(static_cast<double>(d)));
      const Tensor z = rng.normal_tensor({F, N, d});
      const Tensor z0 = reshape(slice(z, 0, 0, 1), {N, d});
      const Tensor plain = self_attention(z0, p);
      worst = std::max(worst, max_abs_diff(cs_attention(z0, z0, p), plain));
      worst = std::max(worst, max_abs_diff(reshape(slice(cs_attention_video(z, p), 0, 0, 1), {N, d}), plain));
    }
    r.passed = worst <= 1e-5;
    r.detail = "max |CS - self| " + std::to_string(worst);
  });
}

CheckResult check_injection_layout(uint64_t seed) {
  return timed("injection layout", [&](CheckResult& r) {
    Rng rng = Rng(seed).fork("layout");
    int shapes = 0;
    for (int64_t N : {1, 3, 16, 64})
      for (int64_t d : {1, 8, 32}) {
        const Tensor kr = rng.normal_tensor({2 * N, d}), vr = rng.normal_tensor({2 * N, d});
        const Tensor kc = rng.normal_tensor({N, d}), vc = rng.normal_tensor({N, d});
        const DecoupledKV s = decouple_kv(kr, vr, binary_mask(rng, 2 * N, 0.5));
        const InjectedKV inj = build_injected_kv(s, kc, vc);
        const bool ok = inj.k.dim(0) == 5 * N && inj.v.dim(0) == 5 * N && slice(inj.k, 0, 0, 2 * N).bit_equal(s.k_fg) &&
                        slice(inj.k, 0, 2 * N, 2 * N).bit_equal(s.k_bg) && slice(inj.k, 0, 4 * N, N).bit_equal(kc) &&
                        slice(inj.v, 0, 0, 2 * N).bit_equal(s.v_fg) && slice(inj.v, 0, 2 * N, 2 * N).bit_equal(s.v_bg) &&
                        slice(inj.v, 0, 4 * N, N).bit_equal(vc);
        if (!ok) fail(r, "layout mismatch at N=" + std::to_string(N) + " d=" + std::to_string(d));
        ++shapes;
      }
    if (r.passed) r.detail = std::to_string(shapes) + " shapes, 5N tokens, blocks bit-exact";
  });
}

CheckResult check_decoder_gating(uint64_t seed) {
  return timed("decoder-only gating", [&](CheckResult& r) {
    const NetworkConfig c;
    const Model m = Model::init(seed, c);
    Rng rng = Rng(seed).fork("gating");
    const int64_t F = c.frames, s = c.latent_size();
    const Tensor z_recon = rng.normal_tensor({F, c.latent_channels, s, s});
    const Tensor z_edit = rng.normal_tensor({F, c.latent_channels, s, s});
    const Tensor text = embed_prompt("a person dancing", m.unet, c);
    std::array<Tensor, 2> masks;
    for (int level = 0; level < 2; ++level) {
      const int64_t n = c.level_size(level) * c.level_size(level);
      masks[static_cast<size_t>(level)] = reshape(binary_mask(rng, F * n, 0.4), {F, n});
    }
    int compared = 0;
    bool decoder_changed = false;
    for (int t : {0, 480, 960}) {
      ReconCache cache;
      ForwardContext recon;
      recon.role = Role::kReconstruct;
      recon.cache = &cache;
      unet_forward(m, z_recon, t, text, nullptr, recon);
      std::map<std::string, Tensor> on, off;
      for (bool enabled : {true, false}) {
        ForwardContext edit;
        edit.role = Role::kEdit;
        edit.cache = &cache;
        edit.masks = masks;
        edit.injection.enabled = enabled;
        auto& into = enabled ? on : off;
        edit.probe = [&into](const std::string& layer, const std::string& kind, const Tensor& v) {
          into.emplace(layer + "/" + kind, v);
        };
        unet_forward(m, z_edit, t, text, nullptr, edit);
      }
      for (const auto& [key, value] : on) {
        const std::string layer = key.substr(0, key.find('/'));
        if (gate(layer)) {
          decoder_changed = decoder_changed || !value.bit_equal(off.at(key));
          continue;
        }
        ++compared;
        if (!value.bit_equal(off.at(key))) fail(r, key + " differs at t=" + std::to_string(t));
      }
    }
    if (!decoder_changed) fail(r, "injection had no effect on decoder layers");
    if (r.passed) r.detail = std::to_string(compared) + " encoder/mid attention outputs bit-identical";
  });
}

CheckResult check_ddim_identities(uint64_t seed) {
  return timed("DDIM oracle round trip", [&](CheckResult& r) {
    const NoiseSchedule s = make_schedule();
    Rng rng = Rng(seed).fork("ddim");
    const Tensor x0 = rng.normal_tensor({1, 4, 8, 8});
    const std::vector<int> ts = strided_timesteps(s, 50);
    const Tensor x_T = q_sample(x0, ts.back(), rng.normal_tensor(x0.shape()), s);
    const EpsFn oracle = [&](const Tensor& x, int t) {
      const double ab = s.at(t);
      std::vector<float> e(static_cast<size_t>(x.numel()));
      for (int64_t i = 0; i < x.numel(); ++i) {
        e[static_cast<size_t>(i)] = static_cast<float>((x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab));
      }
      return Tensor(x.shape(), std::move(e));
    };
    const double err = rms(ddim_sample(x_T, ts, s, oracle).final_latent(), x0);
    double worst = 0.0;
    for (size_t i = 0; i < ts.size(); ++i) {
      const int t = ts[i], prev = i == 0 ? kCleanStep : ts[i - 1];
      const Tensor x = rng.normal_tensor({1, 4, 8, 8}), eps = rng.normal_tensor({1, 4, 8, 8});
      worst = std::max(worst, max_abs_diff(ddim_step(ddim_invert_step(x, eps, prev, t, s), eps, t, prev, s), x));
      worst = std::max(worst, max_abs_diff(ddim_invert_step(ddim_step(x, eps, t, prev, s), eps, prev, t, s), x));
    }
    r.passed = err <= 1e-4 && worst <= 1e-6;
    std::ostringstream d;
    d << "50-step oracle rms " << err << ", per-step inverse max " << worst;
    r.detail = d.str();
  });
}

CheckResult check_training_descent(uint64_t seed) {
  return timed("one-shot training descent", [&](CheckResult& r) {
    const NetworkConfig c;
    const SyntheticVideo v = make_synthetic_video(seed, c);
    Model m = Model::init(seed, c);
    pretrained_control_stand_in(m, seed);
    const uint64_t frozen = m.frozen_checksum();
    TrainConfig tc;
    tc.seed = seed;
    const TrainResult t = one_shot_train(m, toy_encode(v.frames, c), v.skeletons, v.prompt, tc, make_schedule());
    const double first = std::accumulate(t.losses.begin(), t.losses.begin() + 10, 0.0) / 10.0;
    const double last = std::accumulate(t.losses.end() - 10, t.losses.end(), 0.0) / 10.0;
    std::ostringstream d;
    d << "first-10 mean " << first << ", last-10 mean " << last << ", ratio " << last / first;
    r.detail = d.str();
    if (last > 0.5 * first) fail(r, d.str());
    if (m.frozen_checksum() != frozen) fail(r, "frozen checksum changed");
    if (t.frozen_grad_norm != 0.0) fail(r, "frozen parameters received gradient");
  });
}

CheckResult check_alignment_geometry() {
  return timed("alignment geometry", [&](CheckResult& r) {
    const Figure src = figure(64, 64, 20, 10, 24, 40);
    const AlignResult id = align(src.skeleton, src.mask, src.skeleton, src.mask);
    if (!(id.skeleton == src.skeleton) || !(id.mask == src.mask)) fail(r, "identity fixture changed the skeleton");
    if (id.report.offset.x != 0.0 || id.report.offset.y != 0.0 || id.report.scale != 1.0) {
      fail(r, "identity fixture reported a nonzero offset");
    }
    for (int64_t sh : {6, -6}) {
      const AlignResult out = align(src.skeleton, src.mask, shifted(src.skeleton, sh, sh), shifted(src.mask, sh, sh));
      if (out.report.offset.x != static_cast<double>(-sh) || out.report.offset.y != static_cast<double>(-sh) ||
          !(out.skeleton == src.skeleton)) {
        fail(r, "translation " + std::to_string(sh) + " not recovered");
      }
    }
    const Figure s2 = figure(128, 128, 30, 14, 40, 100);
    const Figure r2 = figure(128, 128, 70, 60, 25, 50);
    const AlignResult rs = align(s2.skeleton, s2.mask, r2.skeleton, r2.mask);
    if (rs.report.ratio != 0.5 || rs.report.w_star != 50 || bounding_rect(rs.mask).h != 100) {
      fail(r, "resize case: w* = " + std::to_string(rs.report.w_star));
    }
    if (r.passed) r.detail = "identity, +-6 translation and h_s=100/h_r=50/w_r=25 -> w*=50";
  });
}

CheckResult check_branch_equivalence(uint64_t seed) {
  return timed("branch equivalence", [&](CheckResult& r) {
    const NetworkConfig c;
    const SyntheticVideo v = make_synthetic_video(seed, c);
    Model m = Model::init(seed, c);
    pretrained_control_stand_in(m, seed);
    const ModelPredictor p(m);
    const NoiseSchedule s = make_schedule();
    EditJob job;
    job.source = toy_encode(v.frames, c);
    job.source_masks = job.reference_masks = v.masks;
    job.source_skeletons = job.reference_skeletons = v.skeletons;
    job.source_prompt = job.target_prompt = v.prompt;
    job.sampler.steps = 10;
    job.sampler.guidance = 1.0;
    job.injection.enabled = false;
    const EditResult e = edit(p, job, c, s);
    const Tensor recon = reconstruct(p, job.source, v.skeletons, v.prompt, job.sampler.steps, s);
    r.passed = e.edited.bit_equal(recon);
    r.detail = r.passed ? "8 frames, 10 steps: bit-identical" : "max diff " + std::to_string(max_abs_diff(e.edited, recon));
  });
}

CheckResult check_adapter_identity(uint64_t seed) {
  return timed("adapter identity at init", [&](CheckResult& r) {
    Rng rng = Rng(seed).fork("adapter-identity");
    for (int trial = 0; trial < 20; ++trial) {
      const int64_t d = rng.uniform_int(2, 33), F = rng.uniform_int(1, 9), N = rng.uniform_int(1, 17);
      const AdapterWeights w = AdapterWeights::init(rng, d);
      const Tensor mfeat = rng.normal_tensor({F, N, d}), z = rng.normal_tensor({F, N, d});
      if (!adapter_forward(mfeat, z, w).bit_equal(mfeat)) fail(r, "fixture " + std::to_string(trial) + " differs");
    }
    if (r.passed) r.detail = "20 fixtures bit-exact";
  });
}

std::vector<CheckResult> run_selftest(uint64_t seed, const std::map<std::string, float>& corrupt) {
  std::vector<CheckResult> out = gradient_suite(seed, corrupt);
  for (auto check : {check_partition_identity, check_duplication_reduction, check_injection_layout,
                     check_decoder_gating, check_ddim_identities, check_branch_equivalence, check_adapter_identity}) {
    out.push_back(check(seed));
  }
  out.push_back(check_alignment_geometry());
  return out;
}

}  // namespace motioneditor
