// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "motioneditor/io.hpp"

using namespace motioneditor;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "motioneditor_cli_test";

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(MOTIONEDITOR_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

// Writes a job whose reference clip is the source clip shifted by (dx, dy).
fs::path shifted_job(const std::string& name, int dx, int dy) {
  const fs::path dir = kRoot / name;
  fs::remove_all(dir);
  Config c;
  c.model.frames = 3;
  SyntheticVideo v = make_synthetic_video(0, c.model);
  for (size_t f = 0; f < v.masks.size(); ++f) {
    v.reference_masks[f] = translate(v.masks[f], dx, dy, false);
    v.reference_skeletons[f] = translate(v.skeletons[f], dx, dy, false);
    const auto count = [](const Raster& r) { return std::count_if(r.px.begin(), r.px.end(), [](uint8_t p) { return p; }); };
    REQUIRE(count(v.reference_masks[f]) == count(v.masks[f]));
  }
  return write_fixture(dir, v, c);
}

std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("edit --steps").code == 2);
  const Run missing = run("edit --config /nonexistent/job.json --out " + (kRoot / "x").string());
  CHECK(missing.code == 2);
  CHECK(missing.err.find("/nonexistent/job.json") != std::string::npos);
  const Run unknown = run("selftest --corrupt-gradient not_an_op");
  CHECK(unknown.code == 2);
}

TEST_CASE("malformed job JSON exits 2 with the parse location") {
  const fs::path bad = kRoot / "bad.json";
  write_text(bad, "{\n  \"seed\": 3,\n  \"train\": { \"steps\": }\n}\n");
  const Run r = run("train --config " + bad.string() + " --out " + (kRoot / "bad_out").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3") != std::string::npos);
  CHECK_FALSE(fs::exists(kRoot / "bad_out"));

  write_text(bad, R"({"seed": 3, "sampler": {"stpes": 4}})");
  const Run u = run("edit --config " + bad.string() + " --out " + (kRoot / "bad_out").string());
  CHECK(u.code == 2);
  CHECK(u.err.find("stpes") != std::string::npos);
}

TEST_CASE("align on identity and translated references") {
  const fs::path same = shifted_job("identity", 0, 0);
  const fs::path out = kRoot / "identity_out";
  REQUIRE(run("align --config " + same.string() + " --out " + out.string()).code == 0);
  const json id = json::parse(read_text(out / "report.json"));
  REQUIRE(id["frames"].size() == 3);
  for (const auto& f : id["frames"]) {
    CHECK(f["scale"] == 1.0);
    CHECK(f["offset"][0] == 0.0);
    CHECK(f["offset"][1] == 0.0);
  }
  const Config c = load_config(same);
  CHECK(read_pgm(out / "skeletons" / "frame_001.pgm") == load_skeletons(c.resolve(c.paths.source_skeletons), 32)[1]);

  for (int s : {3, -3}) {
    const fs::path job = shifted_job("shift" + std::to_string(s), s, s);
    const fs::path dir = kRoot / ("shift_out" + std::to_string(s));
    REQUIRE(run("align --config " + job.string() + " --out " + dir.string()).code == 0);
    for (const auto& f : json::parse(read_text(dir / "report.json"))["frames"]) {
      CHECK(f["offset"][0] == static_cast<double>(-s));
      CHECK(f["offset"][1] == static_cast<double>(-s));
    }
  }
}

TEST_CASE("align reports a missing mask file and an empty mask frame") {
  const fs::path job = shifted_job("missing", 0, 0);
  const fs::path gone = job.parent_path() / "source_masks";
  fs::remove_all(gone);
  const Run r = run("align --config " + job.string() + " --out " + (kRoot / "missing_out").string());
  CHECK(r.code == 2);
  CHECK(r.err.find(gone.string()) != std::string::npos);

  const fs::path job2 = shifted_job("empty", 0, 0);
  write_pgm(job2.parent_path() / "reference_masks" / "frame_002.pgm", Raster::zeros(32, 32));
  const Run e = run("align --config " + job2.string() + " --out " + (kRoot / "empty_out").string());
  CHECK(e.code == 2);
  CHECK(e.err.find("frame 2") != std::string::npos);
}

TEST_CASE("train reruns are byte identical and honour --seed") {
  const fs::path job = shifted_job("train", 0, 0);
  const fs::path a = kRoot / "train_a", b = kRoot / "train_b", c = kRoot / "train_c";
  for (const auto& d : {a, b, c}) fs::remove_all(d);
  REQUIRE(run("train --config " + job.string() + " --steps 3 --out " + a.string()).code == 0);
  REQUIRE(run("train --config " + job.string() + " --steps 3 --out " + b.string()).code == 0);
  REQUIRE(run("train --config " + job.string() + " --steps 3 --seed 9 --out " + c.string()).code == 0);
  const auto da = dir_bytes(a), db = dir_bytes(b), dc = dir_bytes(c);
  CHECK(da.size() > 40);
  CHECK(da == db);
  CHECK(da.at("loss.csv") != dc.at("loss.csv"));
  const json summary = json::parse(da.at("train.json"));
  CHECK(summary["frozen_checksum_before"] == summary["frozen_checksum_after"]);
  CHECK(summary["max_frozen_grad_norm"] == 0.0);
}

TEST_CASE("commands write only inside the output directory") {
  const fs::path job = shifted_job("sandbox", 0, 0);
  const auto before = dir_bytes(job.parent_path());
  const fs::path out = kRoot / "sandbox_out";
  fs::remove_all(out);
  REQUIRE(run("edit --config " + job.string() + " --steps 4 --out " + out.string()).code == 0);
  REQUIRE(run("reconstruct --config " + job.string() + " --steps 4 --out " + out.string() + "/recon").code == 0);
  CHECK(dir_bytes(job.parent_path()) == before);
  CHECK(fs::exists(out / "edited.melt"));
  CHECK(fs::exists(out / "recon" / "reconstruction.melt"));
  CHECK(fs::exists(out / "previews" / "edited" / "frame_002.pgm"));
  const json report = json::parse(read_text(out / "report.json"));
  CHECK(report["coverage"] == 2 * 4 * 3);
  CHECK(report["edit_cache_writes"] == 0);

  const Run m = run("metrics " + (out / "edited.melt").string() + " " + (out / "edited.melt").string());
  CHECK(m.code == 0);
  CHECK(json::parse(m.out)["frames"][0]["rmse"] == 0.0);
}

TEST_CASE("selftest passes clean and flags a corrupted backward rule") {
  const Run clean = run("selftest");
  CHECK_MESSAGE(clean.code == 0, clean.out);
  CHECK(clean.out.find("FAIL") == std::string::npos);
  const Run bad = run("selftest --corrupt-gradient conv2d");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL  grad:conv2d") != std::string::npos);
  CHECK(bad.out.find("PASS  partition identity") != std::string::npos);
}

TEST_CASE("train on the seeded fixture halves the loss") {
  const fs::path job = write_fixture(kRoot / "descent", make_synthetic_video(0, NetworkConfig{}), Config{});
  const fs::path out = kRoot / "descent_out";
  REQUIRE(run("train --config " + job.string() + " --out " + out.string()).code == 0);
  std::istringstream csv(read_text(out / "loss.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,t,loss");
  std::vector<double> losses;
  while (std::getline(csv, line)) losses.push_back(std::stod(line.substr(line.rfind(',') + 1)));
  REQUIRE(losses.size() == 300);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) first += losses[static_cast<size_t>(i)], last += losses[losses.size() - 10 + static_cast<size_t>(i)];
  CHECK(last / first <= 0.5);
  CHECK(last / first == doctest::Approx(0.4798).epsilon(1e-3));  // pinned run
}
