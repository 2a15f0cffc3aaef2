// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "motioneditor/config.hpp"
#include "motioneditor/fixture.hpp"
#include "motioneditor/network.hpp"
#include "motioneditor/skeleton.hpp"

namespace motioneditor {

/// Skeleton maps from a directory of PGMs (sorted by file name) or a keypoint
/// JSON file rendered at size x size.
std::vector<Raster> load_skeletons(const std::filesystem::path& path, int64_t size);
/// 0/255 PGM masks from a directory.
std::vector<Raster> load_masks(const std::filesystem::path& path, int64_t size);
/// Writes frame_000.pgm, frame_001.pgm, ...
void write_rasters(const std::filesystem::path& dir, const std::vector<Raster>& frames, bool masks);
/// One PGM per frame; channels side by side, each min-max normalized.
void write_previews(const std::filesystem::path& dir, const Tensor& latents);

/// Directory of MELT tensors plus manifest.json.
void save_checkpoint(const std::filesystem::path& dir, const Model& m);
Model load_checkpoint(const std::filesystem::path& dir);

/// Writes the clip and a job config referencing it; returns the config path.
std::filesystem::path write_fixture(const std::filesystem::path& dir, const SyntheticVideo& v, const Config& c);

/// The edit job described by a config (video encoded with the toy encoder).
EditJob load_job(const Config& c);

struct FrameMetric {
  double rmse = 0.0;
  double psnr = std::numeric_limits<double>::infinity();  // +inf for identical frames
};

/// Per-frame RMSE and PSNR (20 log10(peak / rmse)) over [F, ...] tensors.
std::vector<FrameMetric> frame_metrics(const Tensor& a, const Tensor& b, double peak = 2.0);
std::string metrics_json(const std::vector<FrameMetric>& m);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace motioneditor
