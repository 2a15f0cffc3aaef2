// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "motioneditor/tensor.hpp"

namespace motioneditor {

/// H x W grid of bytes: skeleton intensities (0..255) or mask values (0/1).
struct Raster {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> px;

  static Raster zeros(int64_t height, int64_t width);
  uint8_t at(int64_t y, int64_t x) const { return px[static_cast<size_t>(y * width + x)]; }
  uint8_t& at(int64_t y, int64_t x) { return px[static_cast<size_t>(y * width + x)]; }
  bool operator==(const Raster& o) const = default;

  /// [H, W] tensor of values times `scale`.
  Tensor to_tensor(float scale = 1.0f) const;
};

class EmptyForeground : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BBox {
  int64_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

/// Tightest box around the nonzero pixels.
BBox bounding_rect(const Raster& mask);

struct Point {
  double x = 0.0, y = 0.0;
};

/// Mean (x, y) of the nonzero pixels.
Point foreground_center(const Raster& mask);

/// Half-pixel-centred bilinear resize, rounded to bytes.
Raster resize_bilinear(const Raster& src, int64_t height, int64_t width);
Raster resize_nearest(const Raster& src, int64_t height, int64_t width);
/// dst(x, y) = src(x - dx, y - dy), zero outside. Bilinear or nearest.
Raster translate(const Raster& src, double dx, double dy, bool bilinear);

struct AlignReport {
  BBox source, reference;
  double ratio = 0.0;      // reference aspect w_r / h_r
  double scale = 0.0;      // h_s / h_r
  int64_t w_star = 0;      // round(ratio * h_s)
  int64_t paste_x = 0;     // left column of the pasted crop after clamping
  int64_t cropped_columns = 0;
  Point v_trans;           // source centre minus pasted reference centre
  Point offset;            // total displacement of the reference protagonist
};

struct AlignResult {
  Raster skeleton;
  Raster mask;
  AlignReport report;
};

/// Resize the reference protagonist to the source height, paste it at the
/// source box, then translate so the mask centres coincide.
AlignResult align(const Raster& s_src, const Raster& m_src, const Raster& s_ref, const Raster& m_ref);

struct Keypoint {
  double x = 0.0, y = 0.0, confidence = 0.0;
};
using KeypointSet = std::map<std::string, Keypoint>;
using BoneTable = std::vector<std::pair<std::string, std::string>>;

/// The 18-joint body layout and its 17 limbs.
const BoneTable& default_bone_table();
const std::vector<std::string>& default_joint_names();

/// 2-px anti-aliased segments for each bone whose joints are both present
/// (confidence > 0).
Raster render_keypoints(const KeypointSet& k, int64_t height, int64_t width, const BoneTable& bones);

/// Canonical stick figure in a height x width frame.
KeypointSet stick_figure(int64_t height, int64_t width);

// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, const Raster& r);
Raster read_pgm(const std::filesystem::path& path);
/// 0/255 file values <-> 0/1 mask values.
Raster mask_from_pgm(const Raster& r);
Raster mask_to_pgm(const Raster& mask);

/// JSON array of frames, each {joint: [x, y, confidence]}.
std::vector<KeypointSet> parse_keypoints_json(const std::string& text);
/// JSON list of [joint, joint] pairs.
BoneTable parse_bone_table_json(const std::string& text);

}  // namespace motioneditor
