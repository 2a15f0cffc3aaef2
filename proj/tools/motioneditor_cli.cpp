// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "motioneditor/checks.hpp"
#include "motioneditor/config.hpp"
#include "motioneditor/io.hpp"
#include "motioneditor/melt.hpp"
#include "motioneditor/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace motioneditor;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

/// Thrown for bad input the user can fix; mapped to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> guidance;
  std::string checkpoint;
  bool no_injection = false;
  bool inject_mid = false;
  bool drop_masked_tokens = false;
  std::string corrupt_op;
  std::vector<std::string> metric_files;
};

Config load(const Options& o, bool required) {
  Config c;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw InputError("config not found: " + o.config_path);
    c = load_config(o.config_path);
  } else if (required) {
    throw InputError("--config is required");
  }
  if (o.seed) c.seed = c.train.seed = *o.seed;
  if (o.guidance) c.sampler.guidance = *o.guidance;
  if (o.no_injection) c.injection.enabled = false;
  if (o.inject_mid) c.injection.inject_mid = true;
  if (o.drop_masked_tokens) c.injection.drop_masked_tokens = true;
  if (!o.checkpoint.empty()) c.paths.checkpoint = fs::absolute(o.checkpoint).string();
  c.validate();
  return c;
}

fs::path out_dir(const Options& o) {
  if (o.out_dir.empty()) throw InputError("--out is required");
  fs::create_directories(o.out_dir);
  return o.out_dir;
}

Model make_model(const Config& c) {
  if (!c.paths.checkpoint.empty()) {
    const fs::path dir = c.resolve(c.paths.checkpoint);
    if (!fs::exists(dir / "manifest.json")) throw InputError("checkpoint not found: " + dir.string());
    Model m = load_checkpoint(dir);
    if (m.config.image_size != c.model.image_size) throw InputError("checkpoint image size differs from the config");
    return m;
  }
  Model m = Model::init(c.seed, c.model);
  pretrained_control_stand_in(m, c.seed);
  return m;
}

void require_inputs(const Config& c, std::initializer_list<const std::string*> paths) {
  for (const std::string* p : paths) {
    if (p->empty()) throw InputError("config is missing an input path under \"paths\"");
    const fs::path full = c.resolve(*p);
    if (!fs::exists(full)) throw InputError("input not found: " + full.string());
  }
}

json align_report_json(const AlignReport& r) {
  auto box = [](const BBox& b) { return json{{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; };
  return {{"source_bbox", box(r.source)},
          {"reference_bbox", box(r.reference)},
          {"ratio", r.ratio},
          {"scale", r.scale},
          {"w_star", r.w_star},
          {"paste_x", r.paste_x},
          {"cropped_columns", r.cropped_columns},
          {"v_trans", {r.v_trans.x, r.v_trans.y}},
          {"offset", {r.offset.x, r.offset.y}}};
}

int cmd_fixture(const Options& o) {
  Config c = load(o, false);
  if (o.steps) c.sampler.steps = *o.steps;
  const fs::path dir = out_dir(o);
  const fs::path job = write_fixture(dir, make_synthetic_video(c.seed, c.model), c);
  std::cout << "wrote " << job.string() << "\n";
  return kOk;
}

int cmd_align(const Options& o) {
  const Config c = load(o, true);
  require_inputs(c, {&c.paths.source_masks, &c.paths.source_skeletons, &c.paths.reference_masks,
                     &c.paths.reference_skeletons});
  const int64_t S = c.model.image_size;
  const auto sm = load_masks(c.resolve(c.paths.source_masks), S);
  const auto ss = load_skeletons(c.resolve(c.paths.source_skeletons), S);
  const auto rm = load_masks(c.resolve(c.paths.reference_masks), S);
  const auto rs = load_skeletons(c.resolve(c.paths.reference_skeletons), S);
  if (sm.size() != ss.size() || rm.size() != sm.size() || rs.size() != sm.size()) {
    throw InputError("frame counts differ across the mask and skeleton inputs");
  }
  std::vector<Raster> skeletons, masks;
  json frames = json::array();
  for (size_t f = 0; f < sm.size(); ++f) {
    AlignResult r;
    try {
      r = align(ss[f], sm[f], rs[f], rm[f]);
    } catch (const std::exception& e) {
      throw InputError("frame " + std::to_string(f) + ": " + e.what());
    }
    skeletons.push_back(r.skeleton);
    masks.push_back(r.mask);
    json entry = align_report_json(r.report);
    entry["frame"] = f;
    frames.push_back(entry);
  }
  const fs::path dir = out_dir(o);
  write_rasters(dir / "skeletons", skeletons, false);
  write_rasters(dir / "masks", masks, true);
  write_text(dir / "report.json", json{{"frames", frames}}.dump(2) + "\n");
  std::cout << "aligned " << sm.size() << " frames into " << dir.string() << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  Config c = load(o, true);
  if (o.steps) c.train.steps = *o.steps;
  require_inputs(c, {&c.paths.video, &c.paths.source_masks, &c.paths.source_skeletons});
  const EditJob job = load_job(c);
  Model m = make_model(c);
  const uint64_t frozen_before = m.frozen_checksum();
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = one_shot_train(m, job.source, job.source_skeletons, c.source_prompt, c.train,
                                       c.make_noise_schedule());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path dir = out_dir(o);
  std::ostringstream csv;
  csv << "step,t,loss\n";
  csv.precision(9);
  for (size_t i = 0; i < r.losses.size(); ++i) csv << i << ',' << r.timesteps[i] << ',' << r.losses[i] << '\n';
  write_text(dir / "loss.csv", csv.str());
  save_checkpoint(dir / "checkpoint", m);

  json summary = {{"steps", r.losses.size()},
                  {"lr", c.train.lr},
                  {"frozen_checksum_before", frozen_before},
                  {"frozen_checksum_after", m.frozen_checksum()},
                  {"max_frozen_grad_norm", r.frozen_grad_norm}};
  const size_t n = std::min<size_t>(10, r.losses.size());
  if (n > 0) {
    const double first = std::accumulate(r.losses.begin(), r.losses.begin() + static_cast<long>(n), 0.0) / n;
    const double last = std::accumulate(r.losses.end() - static_cast<long>(n), r.losses.end(), 0.0) / n;
    summary["first_mean"] = first;
    summary["last_mean"] = last;
    summary["ratio"] = last / first;
    std::printf("loss: first-%zu mean %.5f, last-%zu mean %.5f, ratio %.4f\n", n, first, n, last, last / first);
  }
  write_text(dir / "train.json", summary.dump(2) + "\n");
  std::printf("trained %zu steps in %.1f s; checkpoint in %s\n", r.losses.size(), seconds,
              (dir / "checkpoint").string().c_str());
  return m.frozen_checksum() == frozen_before ? kOk : kCheckFailed;
}

int cmd_reconstruct(const Options& o) {
  Config c = load(o, true);
  if (o.steps) c.sampler.steps = *o.steps;
  require_inputs(c, {&c.paths.video, &c.paths.source_skeletons});
  const int64_t S = c.model.image_size;
  const Tensor frames = read_melt(c.resolve(c.paths.video));
  const Tensor source = toy_encode(frames, c.model);
  const auto skeletons = load_skeletons(c.resolve(c.paths.source_skeletons), S);
  const Model m = make_model(c);
  const NoiseSchedule s = c.make_noise_schedule();
  const Tensor out = reconstruct(ModelPredictor(m), source, skeletons, c.source_prompt, c.sampler.steps, s,
                                 c.sampler.inversion_refinements);
  const fs::path dir = out_dir(o);
  write_melt(dir / "reconstruction.melt", out);
  write_previews(dir / "previews", out);
  write_text(dir / "metrics.json", metrics_json(frame_metrics(out, source)));
  std::cout << "reconstruction written to " << dir.string() << "\n";
  return kOk;
}

int cmd_edit(const Options& o) {
  Config c = load(o, true);
  if (o.steps) c.sampler.steps = *o.steps;
  require_inputs(c, {&c.paths.video, &c.paths.source_masks, &c.paths.source_skeletons, &c.paths.reference_masks,
                     &c.paths.reference_skeletons});
  const EditJob job = load_job(c);
  const Model m = make_model(c);
  const EditResult r = edit(ModelPredictor(m), job, c.model, c.make_noise_schedule());

  const fs::path dir = out_dir(o);
  write_melt(dir / "edited.melt", r.edited);
  write_melt(dir / "reconstruction.melt", r.reconstruction);
  write_melt(dir / "inverted_noise.melt", r.inversion.final_latent());
  write_previews(dir / "previews" / "edited", r.edited);
  write_previews(dir / "previews" / "reconstruction", r.reconstruction);
  std::vector<Raster> aligned;
  json alignment = json::array();
  for (size_t f = 0; f < r.alignment.size(); ++f) {
    aligned.push_back(r.alignment[f].skeleton);
    json entry = align_report_json(r.alignment[f].report);
    entry["frame"] = f;
    alignment.push_back(entry);
  }
  write_rasters(dir / "aligned_skeletons", aligned, false);
  const json report = {{"steps", c.sampler.steps},
                       {"guidance", c.sampler.guidance},
                       {"injection", c.injection.enabled},
                       {"inversion_timesteps", r.inversion.timesteps},
                       {"coverage", r.coverage},
                       {"cache_entries", r.cache_entries},
                       {"edit_cache_writes", r.edit_cache_writes},
                       {"alignment", alignment}};
  write_text(dir / "report.json", report.dump(2) + "\n");
  std::cout << "edited " << r.edited.dim(0) << " frames; coverage " << r.coverage << "; output in " << dir.string()
            << "\n";
  return r.edited.all_finite() ? kOk : kCheckFailed;
}

int cmd_selftest(const Options& o) {
  std::map<std::string, float> corrupt;
  if (!o.corrupt_op.empty()) {
    const auto& ops = differentiable_ops();
    if (std::find(ops.begin(), ops.end(), o.corrupt_op) == ops.end()) {
      throw InputError("unknown operation for --corrupt-gradient: " + o.corrupt_op);
    }
    corrupt[o.corrupt_op] = 1.1f;
  }
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_selftest(o.seed.value_or(0), corrupt);
  size_t failed = 0;
  for (const auto& r : results) {
    std::printf("%-4s  %-28s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    failed += r.passed ? 0 : 1;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%zu/%zu checks passed in %.1f s\n", results.size() - failed, results.size(), seconds);
  return failed == 0 ? kOk : kCheckFailed;
}

int cmd_metrics(const Options& o) {
  if (o.metric_files.size() != 2) throw InputError("metrics needs two MELT files");
  for (const auto& f : o.metric_files) {
    if (!fs::exists(f)) throw InputError("input not found: " + f);
  }
  const std::string text = metrics_json(frame_metrics(read_melt(o.metric_files[0]), read_melt(o.metric_files[1])));
  std::cout << text;
  if (!o.out_dir.empty()) write_text(out_dir(o) / "metrics.json", text);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-guided video motion editing on a toy diffusion model"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool sampler, bool injection) {
    sub->add_option("--config", o.config_path, "job/config JSON");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "override the config seed");
    sub->add_option("--steps", o.steps, "training or sampling steps");
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint directory");
    if (sampler) sub->add_option("--guidance", o.guidance, "classifier-free guidance scale");
    if (injection) {
      sub->add_flag("--no-injection", o.no_injection, "disable K/V injection");
      sub->add_flag("--inject-mid", o.inject_mid, "also inject at the mid block");
      sub->add_flag("--drop-masked-tokens", o.drop_masked_tokens, "drop zeroed tokens instead of keeping them");
    }
  };
  CLI::App* fixture = app.add_subcommand("fixture", "write a seeded synthetic clip and job file");
  common(fixture, true, true);
  CLI::App* align_cmd = app.add_subcommand("align", "align reference skeletons to the source protagonist");
  common(align_cmd, false, false);
  CLI::App* train = app.add_subcommand("train", "one-shot training on the source clip");
  common(train, false, false);
  CLI::App* recon = app.add_subcommand("reconstruct", "invert and reconstruct the source clip");
  common(recon, true, false);
  CLI::App* edit_cmd = app.add_subcommand("edit", "two-branch motion editing");
  common(edit_cmd, true, true);
  CLI::App* selftest = app.add_subcommand("selftest", "run the invariant suite");
  selftest->add_option("--seed", o.seed, "fixture seed");
  selftest->add_option("--corrupt-gradient", o.corrupt_op, "scale one backward rule by 1.1 (negative control)");
  CLI::App* metrics = app.add_subcommand("metrics", "per-frame RMSE and PSNR of two MELT tensors");
  metrics->add_option("files", o.metric_files, "two MELT files")->expected(2);
  metrics->add_option("--out", o.out_dir, "also write metrics.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*fixture) return cmd_fixture(o);
    if (*align_cmd) return cmd_align(o);
    if (*train) return cmd_train(o);
    if (*recon) return cmd_reconstruct(o);
    if (*edit_cmd) return cmd_edit(o);
    if (*selftest) return cmd_selftest(o);
    if (*metrics) return cmd_metrics(o);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kUsage;
}
