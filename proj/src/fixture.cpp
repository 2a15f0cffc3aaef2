// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/fixture.hpp"

#include <cmath>

namespace motioneditor {

namespace {

KeypointSet place(const KeypointSet& k, double scale_x, double scale_y, double dx, double dy) {
  KeypointSet out;
  for (const auto& [name, p] : k) out[name] = {p.x * scale_x + dx, p.y * scale_y + dy, p.confidence};
  return out;
}

}  // namespace

Raster dilate(const Raster& r, int radius) {
  Raster out = Raster::zeros(r.height, r.width);
  for (int64_t y = 0; y < r.height; ++y)
    for (int64_t x = 0; x < r.width; ++x) {
      if (r.at(y, x) == 0) continue;
      for (int64_t v = std::max<int64_t>(0, y - radius); v <= std::min(r.height - 1, y + radius); ++v)
        for (int64_t u = std::max<int64_t>(0, x - radius); u <= std::min(r.width - 1, x + radius); ++u) out.at(v, u) = 1;
    }
  return out;
}

SyntheticVideo make_synthetic_video(uint64_t seed, const NetworkConfig& c) {
  const int64_t S = c.image_size, F = c.frames;
  Rng rng = Rng(seed).fork("video");
  const BoneTable bones = default_bone_table();
  const KeypointSet base = stick_figure(S, S);

  double bg[3][3], body[3];
  for (auto& row : bg)
    for (double& v : row) v = rng.uniform();
  for (double& v : body) v = 0.2 + 0.8 * rng.uniform();
  const double phase = rng.uniform() * 6.283185307179586;

  SyntheticVideo v;
  std::vector<float> pixels(static_cast<size_t>(F * 3 * S * S));
  const double span = static_cast<double>(S - 1);
  for (int64_t f = 0; f < F; ++f) {
    // Source: a 70% figure walking right, legs swinging.
    KeypointSet src = place(base, 0.7, 0.7, 0.05 * span + 0.5 * static_cast<double>(f), 0.2 * span);
    const double swing = 1.5 * std::sin(phase + 0.9 * static_cast<double>(f));
    src["r_ankle"].x += swing;
    src["l_ankle"].x -= swing;
    src["r_knee"].x += 0.5 * swing;
    src["l_knee"].x -= 0.5 * swing;
    const Raster skel = render_keypoints(src, S, S, bones);
    const Raster mask = dilate(skel, 1);
    v.skeletons.push_back(skel);
    v.masks.push_back(mask);

    // Reference: a narrower, shorter figure waving both arms.
    KeypointSet ref = place(base, 0.45, 0.55, 0.45 * span, 0.3 * span);
    const double lift = 3.0 + 2.0 * std::sin(0.8 * static_cast<double>(f));
    ref["r_wrist"].y -= 2.0 * lift;
    ref["l_wrist"].y -= 2.0 * lift;
    ref["r_elbow"].y -= lift;
    ref["l_elbow"].y -= lift;
    const Raster ref_skel = render_keypoints(ref, S, S, bones);
    v.reference_skeletons.push_back(ref_skel);
    v.reference_masks.push_back(dilate(ref_skel, 1));

    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < S; ++y)
        for (int64_t x = 0; x < S; ++x) {
          const double u = static_cast<double>(x) / span, w = static_cast<double>(y) / span;
          double value = 0.15 + 0.5 * bg[ch][0] * w + 0.25 * bg[ch][1] * u +
                         0.1 * bg[ch][2] * std::sin(6.0 * u + 4.0 * w + static_cast<double>(ch));
          if (mask.at(y, x) != 0) value = body[ch] * (0.8 + 0.2 * (skel.at(y, x) / 255.0));
          pixels[static_cast<size_t>(((f * 3 + ch) * S + y) * S + x)] = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
  }
  v.frames = Tensor({F, 3, S, S}, std::move(pixels));
  return v;
}

}  // namespace motioneditor
