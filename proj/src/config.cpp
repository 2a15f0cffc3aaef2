// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace motioneditor {

namespace {

using nlohmann::json;

void only_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read(const json& j, const char* key, const std::string& where, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("'" + (where.empty() ? std::string(key) : where + "." + key) + "' has the wrong type");
  }
}

json model_json(const NetworkConfig& m) {
  return {{"image_size", m.image_size}, {"frames", m.frames},
          {"widths", m.widths},         {"text_dim", m.text_dim},
          {"time_dim", m.time_dim},     {"pose_channels", m.pose_channels},
          {"latent_channels", m.latent_channels}, {"latent_factor", m.latent_factor}};
}

void parse_model(const json& m, NetworkConfig& out) {
  only_keys(m, "model",
            {"image_size", "frames", "widths", "text_dim", "time_dim", "pose_channels", "latent_channels",
             "latent_factor"});
  read(m, "image_size", "model", out.image_size);
  read(m, "frames", "model", out.frames);
  read(m, "widths", "model", out.widths);
  read(m, "text_dim", "model", out.text_dim);
  read(m, "time_dim", "model", out.time_dim);
  read(m, "pose_channels", "model", out.pose_channels);
  read(m, "latent_channels", "model", out.latent_channels);
  read(m, "latent_factor", "model", out.latent_factor);
}

}  // namespace

std::string network_config_to_json(const NetworkConfig& c) { return model_json(c).dump(); }

NetworkConfig network_config_from_json(const std::string& text) {
  NetworkConfig c;
  try {
    parse_model(json::parse(text), c);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return c;
}

void Config::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (schedule.T < 2) throw ConfigError("schedule.T must be at least 2");
  if (!(schedule.beta_min > 0.0 && schedule.beta_min <= schedule.beta_max && schedule.beta_max < 1.0)) {
    throw ConfigError("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  if (train.steps < 0) throw ConfigError("train.steps must be non-negative");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (sampler.steps < 1 || sampler.steps > schedule.T) throw ConfigError("sampler.steps must lie in [1, schedule.T]");
  if (!(sampler.guidance >= 0.0)) throw ConfigError("sampler.guidance must be non-negative");
  if (sampler.inversion_refinements < 0) throw ConfigError("sampler.inversion_refinements must be non-negative");
  if (!(injection.step_fraction >= 0.0 && injection.step_fraction <= 1.0)) {
    throw ConfigError("injection.step_fraction must lie in [0, 1]");
  }
}

NoiseSchedule Config::make_noise_schedule() const {
  return make_schedule(schedule.T, schedule.beta_min, schedule.beta_max);
}

std::filesystem::path Config::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::string Config::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = model_json(model);
  j["schedule"] = {{"T", schedule.T}, {"beta_min", schedule.beta_min}, {"beta_max", schedule.beta_max}};
  j["train"] = {{"steps", train.steps}, {"lr", train.lr}};
  j["sampler"] = {{"steps", sampler.steps},
                  {"guidance", sampler.guidance},
                  {"inversion_refinements", sampler.inversion_refinements}};
  j["injection"] = {{"enabled", injection.enabled},
                    {"inject_mid", injection.inject_mid},
                    {"drop_masked_tokens", injection.drop_masked_tokens},
                    {"step_fraction", injection.step_fraction}};
  j["recon_control"] = recon_control;
  j["prompts"] = {{"source", source_prompt}, {"target", target_prompt}};
  j["paths"] = {{"video", paths.video},
                {"source_masks", paths.source_masks},
                {"source_skeletons", paths.source_skeletons},
                {"reference_masks", paths.reference_masks},
                {"reference_skeletons", paths.reference_skeletons},
                {"checkpoint", paths.checkpoint}};
  return j.dump(2) + "\n";
}

Config parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  Config c;
  c.base_dir = base_dir;
  only_keys(j, "", {"seed", "model", "schedule", "train", "sampler", "injection", "recon_control", "prompts", "paths"});
  read(j, "seed", "", c.seed);
  read(j, "recon_control", "", c.recon_control);
  if (j.contains("model")) parse_model(j["model"], c.model);
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    only_keys(s, "schedule", {"T", "beta_min", "beta_max"});
    read(s, "T", "schedule", c.schedule.T);
    read(s, "beta_min", "schedule", c.schedule.beta_min);
    read(s, "beta_max", "schedule", c.schedule.beta_max);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    only_keys(t, "train", {"steps", "lr"});
    read(t, "steps", "train", c.train.steps);
    read(t, "lr", "train", c.train.lr);
  }
  if (j.contains("sampler")) {
    const json& s = j["sampler"];
    only_keys(s, "sampler", {"steps", "guidance", "inversion_refinements"});
    read(s, "steps", "sampler", c.sampler.steps);
    read(s, "guidance", "sampler", c.sampler.guidance);
    read(s, "inversion_refinements", "sampler", c.sampler.inversion_refinements);
  }
  if (j.contains("injection")) {
    const json& s = j["injection"];
    only_keys(s, "injection", {"enabled", "inject_mid", "drop_masked_tokens", "step_fraction"});
    read(s, "enabled", "injection", c.injection.enabled);
    read(s, "inject_mid", "injection", c.injection.inject_mid);
    read(s, "drop_masked_tokens", "injection", c.injection.drop_masked_tokens);
    read(s, "step_fraction", "injection", c.injection.step_fraction);
  }
  if (j.contains("prompts")) {
    const json& p = j["prompts"];
    only_keys(p, "prompts", {"source", "target"});
    read(p, "source", "prompts", c.source_prompt);
    read(p, "target", "prompts", c.target_prompt);
  }
  if (j.contains("paths")) {
    const json& p = j["paths"];
    only_keys(p, "paths",
              {"video", "source_masks", "source_skeletons", "reference_masks", "reference_skeletons", "checkpoint"});
    read(p, "video", "paths", c.paths.video);
    read(p, "source_masks", "paths", c.paths.source_masks);
    read(p, "source_skeletons", "paths", c.paths.source_skeletons);
    read(p, "reference_masks", "paths", c.paths.reference_masks);
    read(p, "reference_skeletons", "paths", c.paths.reference_skeletons);
    read(p, "checkpoint", "paths", c.paths.checkpoint);
  }
  c.train.seed = c.seed;
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path());
}

}  // namespace motioneditor
