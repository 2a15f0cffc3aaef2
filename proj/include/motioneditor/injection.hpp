// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

struct InjectionConfig {
  bool enabled = true;
  bool inject_mid = false;          // treat the mid block as decoder
  bool drop_masked_tokens = false;  // remove zeroed tokens instead of keeping them
  double step_fraction = 1.0;       // inject only on this trailing fraction of sampling steps
};

/// Transformer layers of the toy U-Net in forward order.
const std::vector<std::string>& layer_ids();
/// True iff injection applies at `layer`. Throws on an unknown id.
bool gate(const std::string& layer, bool inject_mid = false);

struct DecoupledKV {
  Tensor k_fg, v_fg, k_bg, v_bg;
};

/// Row-wise split by a binary token mask[n]: fg keeps rows with mask 1.
DecoupledKV decouple_kv(const Tensor& k, const Tensor& v, const Tensor& mask);

struct InjectedKV {
  Tensor k, v;
};

/// [K_fg; K_bg; K_cu] and likewise for V: 2N + 2N + N tokens.
InjectedKV build_injected_kv(const DecoupledKV& recon, const Tensor& k_cu, const Tensor& v_cu);
/// Alternative layout that drops zeroed rows: [fg rows; bg rows; K_cu].
InjectedKV build_injected_kv_dropped(const Tensor& k_r, const Tensor& v_r, const Tensor& mask, const Tensor& k_cu,
                                     const Tensor& v_cu);

/// attend(q_edit, k_recon, v_recon) for projected inputs [F, d] or [N, F, d].
Tensor inject_temporal(const Tensor& k_recon, const Tensor& v_recon, const Tensor& q_edit);

/// Nearest-neighbour resample of an [H, W] mask to [h*w] tokens, re-binarized
/// at 0.5.
Tensor downsample_mask(const Tensor& mask, int64_t h, int64_t w);
/// Token mask for CS keys of frame i: [M_{i-1}; M_i] with M_{-1} := M_0.
/// masks is [F, N].
Tensor cs_token_mask(const Tensor& masks, int64_t frame);

class CacheMiss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reconstruction-branch keys and values, written once and read by the
/// editing branch.
class ReconCache {
 public:
  struct Entry {
    Tensor k, v;
  };

  void put_cs(const std::string& layer, int t, int64_t frame, Tensor k, Tensor v);
  const Entry& cs(const std::string& layer, int t, int64_t frame) const;
  void put_temporal(const std::string& layer, int t, Tensor k, Tensor v);
  const Entry& temporal(const std::string& layer, int t) const;

  bool has_cs(const std::string& layer, int t, int64_t frame) const;
  size_t cs_entries() const { return cs_.size(); }
  size_t temporal_entries() const { return temporal_.size(); }
  int64_t cs_reads() const { return cs_reads_; }
  int64_t temporal_reads() const { return temporal_reads_; }
  /// Distinct (layer, t, frame) keys read through cs().
  size_t distinct_cs_reads() const { return cs_read_keys_.size(); }
  void clear();

 private:
  std::map<std::tuple<std::string, int, int64_t>, Entry> cs_;
  std::map<std::pair<std::string, int>, Entry> temporal_;
  mutable std::set<std::tuple<std::string, int, int64_t>> cs_read_keys_;
  mutable int64_t cs_reads_ = 0;
  mutable int64_t temporal_reads_ = 0;
};

}  // namespace motioneditor
