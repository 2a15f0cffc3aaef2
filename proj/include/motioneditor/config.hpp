// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "motioneditor/pipeline.hpp"

namespace motioneditor {

/// Bad configuration or job file; the message names the offending key or
/// parse location.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScheduleConfig {
  int T = 1000;
  double beta_min = 1e-4;
  double beta_max = 2e-2;
};

/// Input locations. Raster inputs are a directory of PGM files (sorted by
/// name) or a keypoint JSON file; the video is a MELT tensor [F, 3, S, S].
struct PathsConfig {
  std::string video;
  std::string source_masks, source_skeletons;
  std::string reference_masks, reference_skeletons;
  std::string checkpoint;  // optional; a fresh seeded model otherwise
};

struct Config {
  uint64_t seed = 0;
  NetworkConfig model;
  ScheduleConfig schedule;
  TrainConfig train;
  SamplerConfig sampler;
  InjectionConfig injection;
  bool recon_control = true;
  std::string source_prompt, target_prompt;
  PathsConfig paths;
  /// Relative paths are resolved against this directory.
  std::filesystem::path base_dir;

  void validate() const;
  NoiseSchedule make_noise_schedule() const;
  std::filesystem::path resolve(const std::string& path) const;
  std::string to_json() const;
};

std::string network_config_to_json(const NetworkConfig& c);
NetworkConfig network_config_from_json(const std::string& text);

Config parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path);

}  // namespace motioneditor
