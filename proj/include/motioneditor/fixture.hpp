// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motioneditor/network.hpp"
#include "motioneditor/skeleton.hpp"

namespace motioneditor {

/// A seeded clip of a walking stick figure over a textured background, with a
/// second figure (different pose and size) as the motion reference.
struct SyntheticVideo {
  Tensor frames;  // [F, 3, S, S] in [0, 1]
  std::vector<Raster> masks, skeletons;
  std::vector<Raster> reference_masks, reference_skeletons;
  std::string prompt = "a person walking in a park";
  std::string target_prompt = "a person waving in a park";
};

SyntheticVideo make_synthetic_video(uint64_t seed, const NetworkConfig& c);

/// Pixels within `radius` (Chebyshev) of a nonzero pixel, as a 0/1 mask.
Raster dilate(const Raster& r, int radius);

}  // namespace motioneditor
