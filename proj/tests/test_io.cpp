// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "motioneditor/config.hpp"
#include "motioneditor/io.hpp"
#include "motioneditor/melt.hpp"
#include "motioneditor/rng.hpp"

using namespace motioneditor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("motioneditor_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const Config c = parse_config("{}");
  CHECK(c.train.steps == 300);
  CHECK(c.train.lr == doctest::Approx(3e-5));
  CHECK(c.sampler.steps == 50);
  CHECK(c.schedule.T == 1000);

  Config d = c;
  d.seed = 17;
  d.sampler.guidance = 1.0;
  d.injection.inject_mid = true;
  d.source_prompt = "a dog";
  const Config e = parse_config(d.to_json());
  CHECK(e.seed == 17);
  CHECK(e.train.seed == 17);
  CHECK(e.sampler.guidance == 1.0);
  CHECK(e.injection.inject_mid);
  CHECK(e.source_prompt == "a dog");
  CHECK(e.to_json() == d.to_json());
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(parse_config(R"({"sed": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"steps": 10, "momentum": 0.9}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"paths": {"videos": "x"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"sampler": {"steps": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train": {"steps": "ten"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"injection": {"step_fraction": 1.5}})"), ConfigError);
}

TEST_CASE("malformed config JSON reports the parse location") {
  try {
    parse_config("{\n  \"seed\": 1,\n  \"train\": {\n}");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/motioneditor.json"), std::exception);
}

TEST_CASE("relative paths resolve against the config directory") {
  const Config c = parse_config(R"({"paths": {"video": "clip.melt"}})", "/data/jobs");
  CHECK(c.resolve(c.paths.video) == fs::path("/data/jobs/clip.melt"));
  CHECK(c.resolve("/abs/v.melt") == fs::path("/abs/v.melt"));
}

TEST_CASE("frame metrics") {
  Rng rng(3);
  const Tensor a = rng.normal_tensor({3, 4, 8, 8});
  const auto same = frame_metrics(a, a);
  REQUIRE(same.size() == 3);
  for (const auto& m : same) {
    CHECK(m.rmse == 0.0);
    CHECK(std::isinf(m.psnr));
  }
  std::vector<float> plus = a.to_vector();
  for (float& v : plus) v += 1.0f;
  for (const auto& m : frame_metrics(Tensor(a.shape(), plus), a)) CHECK(m.rmse == doctest::Approx(1.0).epsilon(1e-6));

  const Tensor b = rng.normal_tensor({3, 4, 8, 8});
  const auto got = frame_metrics(a, b, 2.0);
  const int64_t per = a.numel() / 3;
  for (int64_t f = 0; f < 3; ++f) {
    double ss = 0.0;
    for (int64_t i = 0; i < per; ++i) ss += std::pow(static_cast<double>(a[f * per + i]) - b[f * per + i], 2);
    const double rmse = std::sqrt(ss / per);
    CHECK(got[f].rmse == doctest::Approx(rmse).epsilon(1e-12));
    CHECK(got[f].psnr == doctest::Approx(20.0 * std::log10(2.0 / rmse)).epsilon(1e-12));
  }
  CHECK_THROWS(frame_metrics(a, rng.normal_tensor({3, 4, 8, 9})));

  const auto j = nlohmann::json::parse(metrics_json(same));
  CHECK(j["frames"][0]["psnr"] == "inf");
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = scratch("ckpt");
  Model m = Model::init(5);
  pretrained_control_stand_in(m, 5);
  save_checkpoint(dir, m);
  const Model back = load_checkpoint(dir);
  CHECK(back.frozen_checksum() == m.frozen_checksum());
  const NamedTensors a = m.trainable(), b = back.trainable();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.bit_equal(b[i].second));
  }
  CHECK(back.param("control.zero0_w").bit_equal(m.param("control.zero0_w")));

  const fs::path again = scratch("ckpt2");
  save_checkpoint(again, back);
  for (const auto& e : fs::directory_iterator(dir)) {
    CHECK(read_text(e.path()) == read_text(again / e.path().filename()));
  }
  write_melt(again / "unet.out_b.melt", Tensor::ones(back.param("unet.out_b").shape()));
  CHECK_THROWS_AS(load_checkpoint(again), FormatError);
  fs::remove(dir / "adapter0.conv1.melt");
  CHECK_THROWS(load_checkpoint(dir));
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("fixture files load back into the same job") {
  const fs::path dir = scratch("fixture");
  NetworkConfig nc;
  nc.frames = 3;
  const SyntheticVideo v = make_synthetic_video(2, nc);
  Config c;
  c.model = nc;
  c.seed = 2;
  const fs::path job_path = write_fixture(dir, v, c);
  const Config loaded = load_config(job_path);
  const EditJob job = load_job(loaded);
  CHECK(job.source.bit_equal(toy_encode(v.frames, nc)));
  CHECK(job.source_masks == v.masks);
  CHECK(job.source_skeletons == v.skeletons);
  CHECK(job.reference_masks == v.reference_masks);
  CHECK(job.reference_skeletons == v.reference_skeletons);
  CHECK(job.source_prompt == v.prompt);
  CHECK(job.target_prompt == v.target_prompt);

  write_previews(dir / "previews", job.source);
  const Raster p = read_pgm(dir / "previews" / "frame_000.pgm");
  CHECK(p.height == 8);
  CHECK(p.width == 8 * 4);
  CHECK(*std::max_element(p.px.begin(), p.px.end()) == 255);
  CHECK(*std::min_element(p.px.begin(), p.px.end()) == 0);

  fs::remove(dir / "source_masks" / "frame_001.pgm");
  CHECK_THROWS(load_job(loaded));
  fs::remove_all(dir);
}

TEST_CASE("keypoint JSON skeleton input") {
  const fs::path dir = scratch("kp");
  write_text(dir / "k.json", R"([{"neck": [16, 8, 1], "r_hip": [14, 22, 1], "l_hip": [18, 22, 1]}])");
  const auto s = load_skeletons(dir / "k.json", 32);
  REQUIRE(s.size() == 1);
  CHECK(s[0].height == 32);
  CHECK(s[0].at(15, 15) > 0);
  fs::remove_all(dir);
}
