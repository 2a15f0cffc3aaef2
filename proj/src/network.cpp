// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/network.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

namespace motioneditor {

namespace {

Tensor conv_init(Rng& rng, int64_t cout, int64_t cin, int64_t k) {
  return rng.normal_tensor({cout, cin, k, k}, 1.0 / std::sqrt(static_cast<double>(cin * k * k)));
}

void require_shape(const Tensor& t, const Shape& want, const std::string& what) {
  if (t.shape() != want) {
    throw DimensionError(what + " is " + shape_str(t.shape()) + ", expected " + shape_str(want));
  }
}

Tensor frame_slice(const Tensor& x, int64_t f) {
  Shape s(x.shape().begin() + 1, x.shape().end());
  return reshape(slice(x, 0, f, 1), s);
}

Tensor stack_frames(const std::vector<Tensor>& parts) {
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s{1};
    s.insert(s.end(), p.shape().begin(), p.shape().end());
    lifted.push_back(reshape(p, s));
  }
  return concat(lifted, 0);
}

struct BlockCall {
  const std::string& layer;
  int t;
  ForwardContext& ctx;

  bool gated() const { return gate(layer, ctx.injection.inject_mid); }
  bool recording() const { return ctx.role == Role::kReconstruct && gated(); }
  bool injecting() const {
    return ctx.role == Role::kEdit && ctx.injection.enabled && ctx.inject_this_step && gated();
  }
  ReconCache& cache() const {
    if (ctx.cache == nullptr) throw std::logic_error("layer " + layer + " needs a recon cache");
    return *ctx.cache;
  }
  void probe(const char* kind, const Tensor& out) const {
    if (ctx.probe) ctx.probe(layer, kind, out);
  }
};

Tensor cs_block(const BlockWeights& b, const Tensor& u, const BlockCall& call) {
  const int64_t F = u.dim(0), N = u.dim(1);
  const Tensor q = linear(u, b.cs.wq);
  const Tensor context = cs_context(u);
  const Tensor k = linear(context, b.cs.wk), v = linear(context, b.cs.wv);
  if (call.recording()) {
    for (int64_t f = 0; f < F; ++f) call.cache().put_cs(call.layer, call.t, f, frame_slice(k, f), frame_slice(v, f));
  }
  if (!call.injecting()) return linear(attend(q, k, v), b.cs.wo);

  const Tensor& masks = call.ctx.masks[static_cast<size_t>(layer_level(call.layer))];
  require_shape(masks, {F, N}, "injection masks for " + call.layer);
  const Tensor k_cu = slice(k, 1, N, N), v_cu = slice(v, 1, N, N);
  std::vector<Tensor> ks, vs, outs;
  for (int64_t f = 0; f < F; ++f) {
    const ReconCache::Entry& e = call.cache().cs(call.layer, call.t, f);
    const Tensor m = cs_token_mask(masks, f);
    const InjectedKV inj =
        call.ctx.injection.drop_masked_tokens
            ? build_injected_kv_dropped(e.k, e.v, m, frame_slice(k_cu, f), frame_slice(v_cu, f))
            : build_injected_kv(decouple_kv(e.k, e.v, m), frame_slice(k_cu, f), frame_slice(v_cu, f));
    if (call.ctx.injection.drop_masked_tokens) {
      outs.push_back(attend(frame_slice(q, f), inj.k, inj.v));
    } else {
      ks.push_back(inj.k);
      vs.push_back(inj.v);
    }
  }
  const Tensor att = call.ctx.injection.drop_masked_tokens ? stack_frames(outs)
                                                           : attend(q, stack_frames(ks), stack_frames(vs));
  return linear(att, b.cs.wo);
}

Tensor text_block(const BlockWeights& b, const Tensor& u, const Tensor& text) {
  const int64_t F = u.dim(0), N = u.dim(1), d = u.dim(2);
  const Tensor q = reshape(linear(u, b.text.wq), {F * N, d});
  const Tensor att = attend(q, linear(text, b.text.wk), linear(text, b.text.wv));
  return linear(reshape(att, {F, N, d}), b.text.wo);
}

Tensor temporal_block(const BlockWeights& b, const Tensor& u, const BlockCall& call) {
  const Tensor per_location = permute(u, {1, 0, 2});
  const Tensor q = linear(per_location, b.temporal.wq);
  Tensor k = linear(per_location, b.temporal.wk), v = linear(per_location, b.temporal.wv);
  if (call.recording()) call.cache().put_temporal(call.layer, call.t, k, v);
  Tensor att;
  if (call.injecting()) {
    const ReconCache::Entry& e = call.cache().temporal(call.layer, call.t);
    att = inject_temporal(e.k, e.v, q);
  } else {
    att = attend(q, k, v);
  }
  return permute(linear(att, b.temporal.wo), {1, 0, 2});
}

Tensor block_forward(const BlockWeights& b, const Tensor& x, const Tensor& temb, const Tensor& text,
                     const BlockCall& call) {
  const int64_t d = b.conv_w.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor hid = conv2d(x, b.conv_w, b.conv_b, 1, 1);
  hid = silu(add_channel(hid, reshape(linear(temb, b.time_w), {d})));
  Tensor tok = to_tokens(hid);

  const Tensor cs = cs_block(b, layer_norm(tok, b.ln1_gamma, b.ln1_beta), call);
  call.probe("cs", cs);
  tok = add(tok, cs);
  const Tensor tx = text_block(b, layer_norm(tok, b.ln2_gamma, b.ln2_beta), text);
  call.probe("text", tx);
  tok = add(tok, tx);
  const Tensor tm = temporal_block(b, layer_norm(tok, b.ln3_gamma, b.ln3_beta), call);
  call.probe("temporal", tm);
  tok = add(tok, tm);
  return from_tokens(tok, h, w);
}

void append_bytes(std::string& out, const Tensor& t) {
  const auto d = t.data();
  const size_t at = out.size();
  out.resize(at + d.size() * sizeof(float));
  std::memcpy(out.data() + at, d.data(), d.size() * sizeof(float));
}

}  // namespace

void NetworkConfig::validate() const {
  if (latent_channels != 4) throw std::invalid_argument("toy encoder produces 4 latent channels");
  if (image_size % (latent_factor * 2) != 0 || image_size % 8 != 0) {
    throw std::invalid_argument("image_size must be divisible by 8 and by twice the latent factor");
  }
  if (latent_factor != 4) throw std::invalid_argument("toy encoder uses a fixed 4x pooling");
  if (frames < 1) throw std::invalid_argument("frames must be positive");
  if (widths[0] < 1 || widths[1] < 1 || text_dim < 1 || time_dim < 2 || time_dim % 2 != 0) {
    throw std::invalid_argument("network widths must be positive and time_dim even");
  }
  if (pose_channels[1] != widths[0] || pose_channels[2] != widths[1]) {
    throw std::invalid_argument("pose pyramid channels must match the level widths");
  }
}

BlockWeights BlockWeights::init(Rng& rng, int64_t cin, int64_t d, const NetworkConfig& c) {
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  BlockWeights b;
  b.conv_w = conv_init(rng, d, cin, 3);
  b.conv_b = Tensor::zeros({d});
  b.time_w = rng.normal_tensor({c.time_dim, d}, 1.0 / std::sqrt(static_cast<double>(c.time_dim)));
  b.ln1_gamma = b.ln2_gamma = b.ln3_gamma = Tensor::ones({d});
  b.ln1_beta = b.ln2_beta = b.ln3_beta = Tensor::zeros({d});
  b.cs = ProjectionSet::random(rng, d, proj);
  b.text = ProjectionSet::random(rng, d, proj, c.text_dim);
  b.text.wk = rng.normal_tensor({c.text_dim, d}, 1.0 / std::sqrt(static_cast<double>(c.text_dim)));
  b.text.wv = rng.normal_tensor({c.text_dim, d}, 1.0 / std::sqrt(static_cast<double>(c.text_dim)));
  b.temporal = ProjectionSet::random(rng, d, proj);
  return b;
}

void BlockWeights::visit(const ParamVisitor& frozen, const ParamVisitor& trainable) {
  frozen("conv_w", conv_w);
  frozen("conv_b", conv_b);
  frozen("time_w", time_w);
  frozen("ln1.gamma", ln1_gamma);
  frozen("ln1.beta", ln1_beta);
  visit_projections("cs", cs, frozen);
  frozen("ln2.gamma", ln2_gamma);
  frozen("ln2.beta", ln2_beta);
  visit_projections("text", text, frozen);
  trainable("ln3.gamma", ln3_gamma);
  trainable("ln3.beta", ln3_beta);
  visit_projections("temporal", temporal, trainable);
}

UNetWeights UNetWeights::init(Rng& rng, const NetworkConfig& c) {
  const int64_t C = c.latent_channels, w0 = c.widths[0], w1 = c.widths[1];
  UNetWeights u;
  u.enc0 = BlockWeights::init(rng, C, w0, c);
  u.enc1 = BlockWeights::init(rng, w0, w1, c);
  u.mid = BlockWeights::init(rng, w1, w1, c);
  u.dec1 = BlockWeights::init(rng, 2 * w1, w1, c);
  u.dec0 = BlockWeights::init(rng, w1 + w0, w0, c);
  u.out_w = conv_init(rng, C, w0, 3);
  u.out_b = Tensor::zeros({C});
  u.uncond_text = rng.normal_tensor({1, c.text_dim});
  return u;
}

BlockWeights& UNetWeights::block(const std::string& layer) {
  if (layer == "enc0") return enc0;
  if (layer == "enc1") return enc1;
  if (layer == "mid") return mid;
  if (layer == "dec1") return dec1;
  if (layer == "dec0") return dec0;
  throw std::invalid_argument("unknown layer " + layer);
}

const BlockWeights& UNetWeights::block(const std::string& layer) const {
  return const_cast<UNetWeights*>(this)->block(layer);
}

ControlWeights ControlWeights::init(Rng& rng, const NetworkConfig& c) {
  const auto [p1, p2, p3] = c.pose_channels;
  const int64_t w0 = c.widths[0], w1 = c.widths[1];
  ControlWeights w;
  w.pose1_w = conv_init(rng, p1, 1, 3);
  w.pose1_b = rng.normal_tensor({p1}, 0.1);
  w.pose2_w = conv_init(rng, p2, p1, 3);
  w.pose2_b = rng.normal_tensor({p2}, 0.1);
  w.pose3_w = conv_init(rng, p3, p2, 3);
  w.pose3_b = rng.normal_tensor({p3}, 0.1);
  w.conv0_w = conv_init(rng, w0, c.latent_channels, 3);
  w.conv0_b = Tensor::zeros({w0});
  w.time0_w = rng.normal_tensor({c.time_dim, w0}, 1.0 / std::sqrt(static_cast<double>(c.time_dim)));
  w.conv1_w = conv_init(rng, w1, w0, 3);
  w.conv1_b = Tensor::zeros({w1});
  w.time1_w = rng.normal_tensor({c.time_dim, w1}, 1.0 / std::sqrt(static_cast<double>(c.time_dim)));
  w.zero0_w = Tensor::zeros({w0, w0, 1, 1});
  w.zero0_b = Tensor::zeros({w0});
  w.zero1_w = Tensor::zeros({w1, w1, 1, 1});
  w.zero1_b = Tensor::zeros({w1});
  return w;
}

void ControlWeights::visit(const ParamVisitor& f) {
  f("pose1_w", pose1_w);
  f("pose1_b", pose1_b);
  f("pose2_w", pose2_w);
  f("pose2_b", pose2_b);
  f("pose3_w", pose3_w);
  f("pose3_b", pose3_b);
  f("conv0_w", conv0_w);
  f("conv0_b", conv0_b);
  f("time0_w", time0_w);
  f("conv1_w", conv1_w);
  f("conv1_b", conv1_b);
  f("time1_w", time1_w);
  f("zero0_w", zero0_w);
  f("zero0_b", zero0_b);
  f("zero1_w", zero1_w);
  f("zero1_b", zero1_b);
}

Model Model::init(uint64_t seed, const NetworkConfig& config) {
  config.validate();
  const Rng root(seed);
  Rng unet = root.fork("unet"), control = root.fork("control"), a0 = root.fork("adapter0"), a1 = root.fork("adapter1");
  return {config, UNetWeights::init(unet, config), ControlWeights::init(control, config),
          {AdapterWeights::init(a0, config.widths[0]), AdapterWeights::init(a1, config.widths[1])}};
}

void Model::visit(const ParamVisitor& frozen, const ParamVisitor& trainable) {
  for (const auto& layer : layer_ids()) {
    const std::string p = "unet." + layer + ".";
    unet.block(layer).visit([&](const std::string& n, Tensor& t) { frozen(p + n, t); },
                            [&](const std::string& n, Tensor& t) { trainable(p + n, t); });
  }
  frozen("unet.out_w", unet.out_w);
  frozen("unet.out_b", unet.out_b);
  frozen("unet.uncond_text", unet.uncond_text);
  control.visit([&](const std::string& n, Tensor& t) { frozen("control." + n, t); });
  for (size_t i = 0; i < adapters.size(); ++i) {
    const std::string p = "adapter" + std::to_string(i) + ".";
    adapters[i].visit([&](const std::string& n, Tensor& t) { trainable(p + n, t); });
  }
}

NamedTensors Model::trainable() const {
  NamedTensors out;
  Model copy = *this;
  copy.visit([](const std::string&, Tensor&) {}, [&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  return out;
}

NamedTensors Model::frozen() const {
  NamedTensors out;
  Model copy = *this;
  copy.visit([&](const std::string& n, Tensor& t) { out.emplace_back(n, t); }, [](const std::string&, Tensor&) {});
  return out;
}

void Model::assign_trainable(const std::vector<Tensor>& values) {
  size_t i = 0;
  visit([](const std::string&, Tensor&) {},
        [&](const std::string& name, Tensor& t) {
          if (i >= values.size() || values[i].shape() != t.shape()) {
            throw DimensionError("trainable parameter " + name + " expects " + shape_str(t.shape()));
          }
          t = values[i++];
        });
  if (i != values.size()) throw DimensionError("too many trainable parameter values");
}

void Model::assign(const NamedTensors& values) {
  std::map<std::string, const Tensor*> wanted;
  for (const auto& [name, t] : values) wanted[name] = &t;
  size_t found = 0;
  auto set = [&](const std::string& name, Tensor& t) {
    auto it = wanted.find(name);
    if (it == wanted.end()) return;
    if (it->second->shape() != t.shape()) throw DimensionError("parameter " + name + " expects " + shape_str(t.shape()));
    t = *it->second;
    ++found;
  };
  visit(set, set);
  if (found != wanted.size()) throw std::invalid_argument("unknown parameter name in assignment");
}

Tensor Model::param(const std::string& name) const {
  for (auto group : {frozen(), trainable()})
    for (const auto& [n, t] : group)
      if (n == name) return t;
  throw std::invalid_argument("unknown parameter " + name);
}

uint64_t Model::frozen_checksum() const {
  std::string bytes;
  for (const auto& [name, t] : frozen()) {
    bytes += name;
    append_bytes(bytes, t);
  }
  return fnv1a64(bytes);
}

void pretrained_control_stand_in(Model& m, uint64_t seed) {
  Rng rng = Rng(seed).fork("control_out");
  const int64_t w0 = m.config.widths[0], w1 = m.config.widths[1];
  m.control.zero0_w = rng.normal_tensor({w0, w0, 1, 1}, 0.5 / std::sqrt(static_cast<double>(w0)));
  m.control.zero1_w = rng.normal_tensor({w1, w1, 1, 1}, 0.5 / std::sqrt(static_cast<double>(w1)));
}

Tensor sinusoidal_embedding(int t, int64_t dim) {
  const int64_t half = dim / 2;
  std::vector<float> out(static_cast<size_t>(dim));
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[static_cast<size_t>(i)] = static_cast<float>(std::sin(t * freq));
    out[static_cast<size_t>(half + i)] = static_cast<float>(std::cos(t * freq));
  }
  return Tensor({1, dim}, std::move(out));
}

Tensor embed_prompt(const std::string& prompt, const UNetWeights& w, const NetworkConfig& c) {
  std::istringstream words(prompt);
  std::vector<Tensor> rows;
  for (std::string word; words >> word;) {
    Rng rng(fnv1a64(word) ^ 0x7e47ULL);
    rows.push_back(rng.normal_tensor({1, c.text_dim}));
  }
  if (rows.empty()) return w.uncond_text;
  return concat(rows, 0);
}

Tensor toy_encode(const Tensor& frames, const NetworkConfig& c) {
  require_shape(frames, {frames.dim(0), 3, c.image_size, c.image_size}, "frames");
  const int64_t F = frames.dim(0), S = c.image_size;
  std::vector<float> mean(static_cast<size_t>(F * S * S));
  for (int64_t f = 0; f < F; ++f)
    for (int64_t i = 0; i < S * S; ++i) {
      double s = 0.0;
      for (int64_t ch = 0; ch < 3; ++ch) s += frames[(f * 3 + ch) * S * S + i];
      mean[static_cast<size_t>(f * S * S + i)] = static_cast<float>(s / 3.0);
    }
  const Tensor four = concat({frames, Tensor({F, 1, S, S}, std::move(mean))}, 1);
  const Tensor pooled = avg_pool2d(four, static_cast<int>(c.latent_factor));
  return add(scale(pooled, 2.0f), Tensor::full(pooled.shape(), -1.0f));
}

std::array<Tensor, 2> pose_encode(const Tensor& skeletons, const ControlWeights& w, const NetworkConfig& c) {
  require_shape(skeletons, {skeletons.dim(0), 1, c.image_size, c.image_size}, "skeleton maps");
  const Tensor h1 = silu(conv2d(skeletons, w.pose1_w, w.pose1_b, 2, 1));
  const Tensor l0 = conv2d(h1, w.pose2_w, w.pose2_b, 2, 1);
  const Tensor l1 = conv2d(silu(l0), w.pose3_w, w.pose3_b, 2, 1);
  return {l0, l1};
}

std::array<Tensor, 2> controlnet_forward(const Tensor& z, int t, const Tensor& skeletons, const ControlWeights& w,
                                         const NetworkConfig& c) {
  if (skeletons.dim(0) != z.dim(0)) {
    throw DimensionError("controlnet: " + std::to_string(skeletons.dim(0)) + " skeleton frames for " +
                         std::to_string(z.dim(0)) + " latent frames");
  }
  const auto pose = pose_encode(skeletons, w, c);
  const Tensor temb = sinusoidal_embedding(t, c.time_dim);
  const Tensor c0 = silu(add(add_channel(conv2d(z, w.conv0_w, w.conv0_b, 1, 1),
                                         reshape(linear(temb, w.time0_w), {c.widths[0]})),
                             pose[0]));
  const Tensor c1 = silu(add(add_channel(conv2d(avg_pool2d(c0, 2), w.conv1_w, w.conv1_b, 1, 1),
                                         reshape(linear(temb, w.time1_w), {c.widths[1]})),
                             pose[1]));
  return {conv2d(c0, w.zero0_w, w.zero0_b, 1, 0), conv2d(c1, w.zero1_w, w.zero1_b, 1, 0)};
}

GradCheckReport unet_grad_check(const Model& m, const std::vector<std::string>& params,
                                const GradCheckOptions& options) {
  const NetworkConfig& c = m.config;
  Rng rng(options.seed ^ 0x0e7c4ecULL);
  const int64_t F = 2, s = c.latent_size();
  const Tensor z = rng.normal_tensor({F, c.latent_channels, s, s});
  const Tensor pose = rng.uniform_tensor({F, 1, c.image_size, c.image_size}, 0.0, 1.0);
  const Tensor text = rng.normal_tensor({3, c.text_dim});
  const int t = 437;
  NamedTensors named;
  for (const auto& name : params) named.emplace_back(name, m.param(name));
  return grad_check(
      named,
      [&](const std::vector<Tensor>& values) {
        Model trial = m;
        NamedTensors assigned;
        for (size_t i = 0; i < values.size(); ++i) assigned.emplace_back(params[i], values[i]);
        trial.assign(assigned);
        const auto control = controlnet_forward(z, t, pose, trial.control, c);
        ForwardContext ctx;
        return unet_forward(trial, z, t, text, &control, ctx);
      },
      options);
}

int layer_level(const std::string& layer) {
  if (layer == "enc0" || layer == "dec0") return 0;
  if (layer == "enc1" || layer == "mid" || layer == "dec1") return 1;
  throw std::invalid_argument("unknown layer " + layer);
}

Tensor to_tokens(const Tensor& x) {
  return permute(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& tokens, int64_t h, int64_t w) {
  return reshape(permute(tokens, {0, 2, 1}), {tokens.dim(0), tokens.dim(2), h, w});
}

Tensor unet_forward(const Model& m, const Tensor& z, int t, const Tensor& text, const std::array<Tensor, 2>* control,
                    ForwardContext& ctx) {
  const NetworkConfig& c = m.config;
  const int64_t s = c.latent_size();
  if (z.rank() != 4 || z.dim(1) != c.latent_channels || z.dim(2) != s || z.dim(3) != s) {
    throw DimensionError("unet: latent is " + shape_str(z.shape()) + ", expected [F, " +
                         std::to_string(c.latent_channels) + ", " + std::to_string(s) + ", " + std::to_string(s) + "]");
  }
  if (text.rank() != 2 || text.dim(1) != c.text_dim) {
    throw DimensionError("unet: text embedding is " + shape_str(text.shape()));
  }
  const Tensor temb = sinusoidal_embedding(t, c.time_dim);
  const UNetWeights& u = m.unet;
  auto run = [&](const std::string& layer, const Tensor& x) {
    return block_forward(u.block(layer), x, temb, text, BlockCall{layer, t, ctx});
  };

  const Tensor h0 = run("enc0", z);
  const Tensor h1 = run("enc1", avg_pool2d(h0, 2));
  const Tensor hm = run("mid", h1);
  Tensor skip0 = h0, skip1 = h1;
  if (control != nullptr) {
    const auto& r = *control;
    require_shape(r[0], h0.shape(), "control residual 0");
    require_shape(r[1], h1.shape(), "control residual 1");
    skip0 = add(skip0, from_tokens(adapter_forward(to_tokens(r[0]), to_tokens(h0), m.adapters[0]), s, s));
    skip1 = add(skip1, from_tokens(adapter_forward(to_tokens(r[1]), to_tokens(h1), m.adapters[1]), s / 2, s / 2));
  }
  const Tensor d1 = run("dec1", concat({hm, skip1}, 1));
  const Tensor d0 = run("dec0", concat({upsample_nearest(d1, 2), skip0}, 1));
  return conv2d(d0, u.out_w, u.out_b, 1, 1);
}

}  // namespace motioneditor
