// SPDX-License-Identifier: Apache-2.0
#include "motioneditor/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "motioneditor/melt.hpp"

namespace motioneditor {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> pgm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .pgm files in " + dir.string());
  return files;
}

void check_size(const Raster& r, int64_t size, const fs::path& from) {
  if (r.height != size || r.width != size) {
    throw DimensionError(from.string() + " is " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                         ", expected " + std::to_string(size) + "x" + std::to_string(size));
  }
}

std::string frame_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.pgm", i);
  return buf;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<Raster> load_skeletons(const fs::path& path, int64_t size) {
  std::vector<Raster> out;
  if (path.extension() == ".json") {
    for (const auto& k : parse_keypoints_json(read_text(path))) {
      out.push_back(render_keypoints(k, size, size, default_bone_table()));
    }
    return out;
  }
  for (const auto& f : pgm_files(path)) {
    out.push_back(read_pgm(f));
    check_size(out.back(), size, f);
  }
  return out;
}

std::vector<Raster> load_masks(const fs::path& path, int64_t size) {
  std::vector<Raster> out;
  for (const auto& f : pgm_files(path)) {
    out.push_back(mask_from_pgm(read_pgm(f)));
    check_size(out.back(), size, f);
  }
  return out;
}

void write_rasters(const fs::path& dir, const std::vector<Raster>& frames, bool masks) {
  fs::create_directories(dir);
  for (size_t i = 0; i < frames.size(); ++i) write_pgm(dir / frame_name(i), masks ? mask_to_pgm(frames[i]) : frames[i]);
}

void write_previews(const fs::path& dir, const Tensor& latents) {
  if (latents.rank() != 4) throw DimensionError("previews need [F, C, h, w] latents");
  fs::create_directories(dir);
  const int64_t F = latents.dim(0), C = latents.dim(1), h = latents.dim(2), w = latents.dim(3);
  for (int64_t f = 0; f < F; ++f) {
    Raster r = Raster::zeros(h, w * C);
    for (int64_t c = 0; c < C; ++c) {
      const int64_t base = (f * C + c) * h * w;
      float lo = latents[base], hi = latents[base];
      for (int64_t i = 0; i < h * w; ++i) {
        lo = std::min(lo, latents[base + i]);
        hi = std::max(hi, latents[base + i]);
      }
      const double span = hi > lo ? static_cast<double>(hi) - lo : 1.0;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const double v = (latents[base + y * w + x] - lo) / span;
          r.at(y, c * w + x) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    }
    write_pgm(dir / frame_name(static_cast<size_t>(f)), r);
  }
}

void save_checkpoint(const fs::path& dir, const Model& m) {
  fs::create_directories(dir);
  json tensors = json::array();
  auto emit = [&](const NamedTensors& group, const char* kind) {
    for (const auto& [name, t] : group) {
      const std::string file = name + ".melt";
      write_melt(dir / file, t);
      tensors.push_back({{"name", name}, {"file", file}, {"shape", t.shape()}, {"group", kind}});
    }
  };
  emit(m.frozen(), "frozen");
  emit(m.trainable(), "trainable");
  json gating = json::object();
  for (const auto& layer : layer_ids()) gating[layer] = gate(layer, false);
  json manifest = {{"format", "motioneditor-checkpoint"},
                   {"version", 1},
                   {"model", json::parse(network_config_to_json(m.config))},
                   {"layers", layer_ids()},
                   {"levels", {{"enc0", 0}, {"enc1", 1}, {"mid", 1}, {"dec1", 1}, {"dec0", 0}}},
                   {"gating", gating},
                   {"frozen_checksum", m.frozen_checksum()},
                   {"tensors", tensors}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "motioneditor-checkpoint") {
    throw FormatError(dir.string() + " is not a checkpoint directory");
  }
  const NetworkConfig config = network_config_from_json(manifest.at("model").dump());
  Model m = Model::init(0, config);
  NamedTensors values;
  for (const auto& entry : manifest.at("tensors")) {
    values.emplace_back(entry.at("name").get<std::string>(), read_melt(dir / entry.at("file").get<std::string>()));
  }
  if (values.size() != m.frozen().size() + m.trainable().size()) {
    throw FormatError(dir.string() + ": manifest lists " + std::to_string(values.size()) + " tensors");
  }
  m.assign(values);
  if (m.frozen_checksum() != manifest.at("frozen_checksum").get<uint64_t>()) {
    throw FormatError(dir.string() + ": frozen weights do not match the manifest checksum");
  }
  return m;
}

fs::path write_fixture(const fs::path& dir, const SyntheticVideo& v, const Config& c) {
  fs::create_directories(dir);
  write_melt(dir / "video.melt", v.frames);
  write_rasters(dir / "source_masks", v.masks, true);
  write_rasters(dir / "source_skeletons", v.skeletons, false);
  write_rasters(dir / "reference_masks", v.reference_masks, true);
  write_rasters(dir / "reference_skeletons", v.reference_skeletons, false);
  Config job = c;
  job.source_prompt = v.prompt;
  job.target_prompt = v.target_prompt;
  job.paths = {"video.melt", "source_masks", "source_skeletons", "reference_masks", "reference_skeletons", ""};
  const fs::path path = dir / "job.json";
  write_text(path, job.to_json());
  return path;
}

EditJob load_job(const Config& c) {
  for (const auto* p : {&c.paths.video, &c.paths.source_masks, &c.paths.source_skeletons}) {
    if (p->empty()) throw ConfigError("job is missing an input path (paths.video, source_masks, source_skeletons)");
  }
  const int64_t S = c.model.image_size;
  EditJob job;
  const Tensor frames = read_melt(c.resolve(c.paths.video));
  job.source = toy_encode(frames, c.model);
  job.source_masks = load_masks(c.resolve(c.paths.source_masks), S);
  job.source_skeletons = load_skeletons(c.resolve(c.paths.source_skeletons), S);
  const auto F = static_cast<size_t>(job.source.dim(0));
  if (job.source_masks.size() != F || job.source_skeletons.size() != F) {
    throw std::invalid_argument("job has " + std::to_string(F) + " frames but " +
                                std::to_string(job.source_masks.size()) + " source masks and " +
                                std::to_string(job.source_skeletons.size()) + " source skeletons");
  }
  if (!c.paths.reference_masks.empty()) job.reference_masks = load_masks(c.resolve(c.paths.reference_masks), S);
  if (!c.paths.reference_skeletons.empty()) {
    job.reference_skeletons = load_skeletons(c.resolve(c.paths.reference_skeletons), S);
  }
  job.source_prompt = c.source_prompt;
  job.target_prompt = c.target_prompt;
  job.sampler = c.sampler;
  job.injection = c.injection;
  job.recon_control = c.recon_control;
  return job;
}

std::vector<FrameMetric> frame_metrics(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) {
    throw DimensionError("frame_metrics: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.rank() < 1 || a.dim(0) == 0) throw DimensionError("frame_metrics needs at least one frame");
  const int64_t F = a.dim(0), per = a.numel() / F;
  std::vector<FrameMetric> out(static_cast<size_t>(F));
  for (int64_t f = 0; f < F; ++f) {
    double s = 0.0;
    for (int64_t i = f * per; i < (f + 1) * per; ++i) s += std::pow(static_cast<double>(a[i]) - b[i], 2);
    FrameMetric& m = out[static_cast<size_t>(f)];
    m.rmse = std::sqrt(s / static_cast<double>(per));
    if (m.rmse > 0.0) m.psnr = 20.0 * std::log10(peak / m.rmse);
  }
  return out;
}

std::string metrics_json(const std::vector<FrameMetric>& m) {
  json frames = json::array();
  for (size_t i = 0; i < m.size(); ++i) {
    json psnr = std::isinf(m[i].psnr) ? json("inf") : json(m[i].psnr);
    frames.push_back({{"frame", i}, {"rmse", m[i].rmse}, {"psnr", psnr}});
  }
  return json{{"frames", frames}}.dump(2) + "\n";
}

}  // namespace motioneditor
