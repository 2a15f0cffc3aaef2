// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/injection.hpp"

#include <algorithm>
#include <cmath>

#include "motioneditor/attention.hpp"

namespace motioneditor {

namespace {

void require_binary(const Tensor& mask) {
  for (float m : mask.data()) {
    if (m != 0.0f && m != 1.0f) throw std::invalid_argument("mask value " + std::to_string(m) + " is not 0 or 1");
  }
}

std::string key_str(const std::string& layer, int t) { return layer + " t=" + std::to_string(t); }

}  // namespace

const std::vector<std::string>& layer_ids() {
  static const std::vector<std::string> ids{"enc0", "enc1", "mid", "dec1", "dec0"};
  return ids;
}

bool gate(const std::string& layer, bool inject_mid) {
  const auto& ids = layer_ids();
  if (std::find(ids.begin(), ids.end(), layer) == ids.end()) throw std::invalid_argument("unknown layer " + layer);
  if (layer == "mid") return inject_mid;
  return layer.rfind("dec", 0) == 0;
}

DecoupledKV decouple_kv(const Tensor& k, const Tensor& v, const Tensor& mask) {
  if (k.rank() != 2 || k.shape() != v.shape()) {
    throw DimensionError("decouple_kv: keys " + shape_str(k.shape()) + " and values " + shape_str(v.shape()) +
                         " must be matching [n, d]");
  }
  if (mask.rank() != 1 || mask.dim(0) != k.dim(0)) {
    throw DimensionError("decouple_kv: mask " + shape_str(mask.shape()) + " does not cover " +
                         std::to_string(k.dim(0)) + " tokens");
  }
  require_binary(mask);
  const int64_t n = k.dim(0), d = k.dim(1);
  std::vector<float> fg(static_cast<size_t>(n * d)), bg(fg.size());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t c = 0; c < d; ++c) {
      fg[static_cast<size_t>(i * d + c)] = mask[i];
      bg[static_cast<size_t>(i * d + c)] = 1.0f - mask[i];
    }
  }
  const Tensor mf({n, d}, std::move(fg)), mb({n, d}, std::move(bg));
  return {mul(k, mf), mul(v, mf), mul(k, mb), mul(v, mb)};
}

InjectedKV build_injected_kv(const DecoupledKV& r, const Tensor& k_cu, const Tensor& v_cu) {
  const Shape& s = r.k_fg.shape();
  for (const Tensor* t : {&r.v_fg, &r.k_bg, &r.v_bg}) {
    if (t->shape() != s) throw DimensionError("build_injected_kv: recon blocks " + shape_str(s) + " and " + shape_str(t->shape()) + " differ");
  }
  if (k_cu.shape() != v_cu.shape() || k_cu.rank() != 2 || s.size() != 2 || k_cu.dim(1) != s[1] ||
      s[0] != 2 * k_cu.dim(0)) {
    throw DimensionError("build_injected_kv: recon " + shape_str(s) + " needs current-frame blocks [N, d], got " +
                         shape_str(k_cu.shape()));
  }
  return {concat({r.k_fg, r.k_bg, k_cu}, 0), concat({r.v_fg, r.v_bg, v_cu}, 0)};
}

InjectedKV build_injected_kv_dropped(const Tensor& k_r, const Tensor& v_r, const Tensor& mask, const Tensor& k_cu,
                                     const Tensor& v_cu) {
  decouple_kv(k_r, v_r, mask);  // shape and binary checks
  std::vector<int64_t> order;
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] == 1.0f) order.push_back(i);
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] == 0.0f) order.push_back(i);
  return {concat({select_rows(k_r, order), k_cu}, 0), concat({select_rows(v_r, order), v_cu}, 0)};
}

Tensor inject_temporal(const Tensor& k_recon, const Tensor& v_recon, const Tensor& q_edit) {
  if (k_recon.shape() != q_edit.shape() || v_recon.shape() != q_edit.shape()) {
    throw DimensionError("inject_temporal: recon " + shape_str(k_recon.shape()) + " and edit " +
                         shape_str(q_edit.shape()) + " disagree");
  }
  return attend(q_edit, k_recon, v_recon);
}

Tensor downsample_mask(const Tensor& mask, int64_t h, int64_t w) {
  if (mask.rank() != 2) throw DimensionError("mask must be [H, W], got " + shape_str(mask.shape()));
  const int64_t H = mask.dim(0), W = mask.dim(1);
  std::vector<float> out(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y) {
    const int64_t sy = std::min(H - 1, static_cast<int64_t>((static_cast<double>(y) + 0.5) * H / h));
    for (int64_t x = 0; x < w; ++x) {
      const int64_t sx = std::min(W - 1, static_cast<int64_t>((static_cast<double>(x) + 0.5) * W / w));
      out[static_cast<size_t>(y * w + x)] = mask.at({sy, sx}) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return Tensor({h * w}, std::move(out));
}

Tensor cs_token_mask(const Tensor& masks, int64_t frame) {
  if (masks.rank() != 2 || frame < 0 || frame >= masks.dim(0)) {
    throw DimensionError("cs_token_mask: frame " + std::to_string(frame) + " outside masks " + shape_str(masks.shape()));
  }
  const int64_t n = masks.dim(1);
  const Tensor cur = reshape(slice(masks, 0, frame, 1), {n});
  const Tensor prev = reshape(slice(masks, 0, std::max<int64_t>(frame - 1, 0), 1), {n});
  return concat({prev, cur}, 0);
}

void ReconCache::put_cs(const std::string& layer, int t, int64_t frame, Tensor k, Tensor v) {
  auto [it, inserted] = cs_.emplace(std::make_tuple(layer, t, frame), Entry{k.detached(), v.detached()});
  if (!inserted) throw std::logic_error("recon cache entry " + key_str(layer, t) + " frame " + std::to_string(frame) + " written twice");
}

const ReconCache::Entry& ReconCache::cs(const std::string& layer, int t, int64_t frame) const {
  auto it = cs_.find(std::make_tuple(layer, t, frame));
  if (it == cs_.end()) throw CacheMiss("recon cache miss: " + key_str(layer, t) + " frame " + std::to_string(frame));
  ++cs_reads_;
  cs_read_keys_.insert(it->first);
  return it->second;
}

void ReconCache::put_temporal(const std::string& layer, int t, Tensor k, Tensor v) {
  auto [it, inserted] = temporal_.emplace(std::make_pair(layer, t), Entry{k.detached(), v.detached()});
  if (!inserted) throw std::logic_error("recon cache temporal entry " + key_str(layer, t) + " written twice");
}

const ReconCache::Entry& ReconCache::temporal(const std::string& layer, int t) const {
  auto it = temporal_.find(std::make_pair(layer, t));
  if (it == temporal_.end()) throw CacheMiss("recon cache miss: temporal " + key_str(layer, t));
  ++temporal_reads_;
  return it->second;
}

bool ReconCache::has_cs(const std::string& layer, int t, int64_t frame) const {
  return cs_.count(std::make_tuple(layer, t, frame)) != 0;
}

void ReconCache::clear() {
  cs_.clear();
  temporal_.clear();
  cs_read_keys_.clear();
  cs_reads_ = temporal_reads_ = 0;
}

}  // namespace motioneditor
