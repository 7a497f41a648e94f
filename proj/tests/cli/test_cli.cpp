// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs of the soar executable.

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "soar/encoder.hpp"
#include "soar/image.hpp"
#include "soar/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name)
      : dir(fs::temp_directory_path() / ("soar_cli_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  fs::path operator/(const std::string& p) const { return dir / p; }

  Run run(const std::string& args) const {
    const auto out = dir / ".stdout", err = dir / ".stderr";
    const std::string cmd = "cd '" + dir.string() + "' && '" SOAR_CLI "' " + args + " > '" +
                            out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, soar::read_file(out), soar::read_file(err)};
  }

  void write(const std::string& name, const std::string& text) const {
    fs::create_directories((dir / name).parent_path());
    std::ofstream(dir / name, std::ios::binary) << text;
  }

  void script(const std::string& name, const std::string& body) const {
    write(name, "#!/bin/sh\n" + body);
    fs::permissions(dir / name, fs::perms::owner_all);
  }

  json load(const std::string& name) const { return json::parse(soar::read_file(dir / name)); }
};

soar::Image gradient_image(int w, int h, int c) {
  soar::Image img(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.at(x, y, k) = static_cast<std::uint8_t>((x * 7 + y * 3 + k * 11) % 256);
  return img;
}

json category_list() {
  json cats = json::array();
  for (int i = 1; i <= 16; ++i) cats.push_back({{"id", i}, {"name", "c" + std::to_string(i)}});
  return cats;
}

json coco(const std::vector<std::array<double, 4>>& boxes, int width = 2000, int height = 2000) {
  json anns = json::array();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    anns.push_back({{"id", i + 1}, {"image_id", 1}, {"category_id", 1},
                    {"bbox", {b[0], b[1], b[2], b[3]}}, {"area", b[2] * b[3]}, {"iscrowd", 0},
                    {"difficult", 0}});
  }
  return {{"images", {{{"id", 1}, {"file_name", "scene.png"}, {"width", width}, {"height", height}}}},
          {"annotations", anns},
          {"categories", category_list()}};
}

json predictions(const std::vector<std::array<double, 4>>& boxes) {
  json preds = json::array();
  for (const auto& b : boxes) {
    preds.push_back({{"image_id", 1}, {"class_id", 1}, {"score", 0.9},
                     {"bbox", {b[0], b[1], b[0] + b[2], b[1] + b[3]}}});
  }
  return preds;
}

std::vector<std::array<double, 4>> grid_boxes(int count, double y0 = 0) {
  std::vector<std::array<double, 4>> boxes;
  for (int i = 0; i < count; ++i) boxes.push_back({20.0 * (i % 90), y0 + 20.0 * (i / 90), 10, 10});
  return boxes;
}

}  // namespace

TEST_SUITE("cli.slice") {
  TEST_CASE("768 image at 512 with overlap 0.25 gives four tiles and a plan") {
    Workspace ws("slice");
    const auto img = gradient_image(768, 768, 3);
    soar::write_png(ws / "scene.png", img);
    const auto r = ws.run("slice --input scene.png --out tiles --slice-w 512 --slice-h 512 --overlap 0.25");
    REQUIRE(r.code == 0);
    for (const char* name : {"scene_0_0_512_512.png", "scene_256_0_512_512.png",
                             "scene_0_256_512_512.png", "scene_256_256_512_512.png"}) {
      REQUIRE(fs::exists(ws / (std::string("tiles/") + name)));
    }
    const auto tile = soar::read_png(ws / "tiles/scene_256_0_512_512.png");
    CHECK(tile.width == 512);
    bool same = true;
    for (int y = 0; y < 512; ++y)
      for (int x = 0; x < 512; ++x)
        for (int k = 0; k < 3; ++k) same = same && tile.at(x, y, k) == img.at(x + 256, y, k);
    CHECK(same);
    const auto plan = ws.load("tiles/plan.json");
    CHECK(plan["images"][0]["rects"].size() == 4);
    CHECK(plan["images"][0]["patches"].size() == 4);
    CHECK(ws.load("tiles/manifest.json")["command"] == "slice");
  }

  TEST_CASE("tiny image yields one identical patch") {
    Workspace ws("slice_tiny");
    const auto img = gradient_image(40, 30, 1);
    soar::write_png(ws / "tiny.png", img);
    REQUIRE(ws.run("slice --input tiny.png --out tiles").code == 0);
    CHECK(soar::read_png(ws / "tiles/tiny_0_0_40_30.png") == img);
  }

  TEST_CASE("missing input exits 2") {
    Workspace ws("slice_missing");
    const auto r = ws.run("slice --input nowhere --out tiles");
    CHECK(r.code == 2);
    CHECK(!r.err.empty());
    CHECK(!fs::exists(ws / "tiles"));
  }
}

TEST_SUITE("cli.convert") {
  TEST_CASE("fixture dataset matches the golden file") {
    Workspace ws("convert");
    const fs::path fixture = fs::path(SOAR_FIXTURES) / "dota";
    fs::copy(fixture / "labels", ws / "labels");
    fs::create_directories(ws / "images");
    soar::write_png(ws / "images/a.png", soar::Image(100, 80, 3));
    soar::write_png(ws / "images/b.png", soar::Image(64, 64, 3));
    soar::write_png(ws / "images/c.png", soar::Image(300, 200, 1));
    REQUIRE(ws.run("convert dota2coco --images images --labels labels --out coco.json").code == 0);
    CHECK(soar::read_file(ws / "coco.json") == soar::read_file(fixture / "coco.golden.json"));
    CHECK(fs::exists(ws / "coco.json.manifest.json"));
  }

  TEST_CASE("empty label directory is a valid empty dataset") {
    Workspace ws("convert_empty");
    fs::create_directories(ws / "images");
    fs::create_directories(ws / "labels");
    REQUIRE(ws.run("convert dota2coco --images images --labels labels --out coco.json").code == 0);
    const auto doc = ws.load("coco.json");
    CHECK(doc["images"].empty());
    CHECK(doc["annotations"].empty());
    CHECK(doc["categories"].size() == 16);
  }

  TEST_CASE("malformed line exits 3 naming file and line") {
    Workspace ws("convert_bad");
    fs::create_directories(ws / "images");
    soar::write_png(ws / "images/bad.png", soar::Image(10, 10, 1));
    ws.write("labels/bad.txt", "0 0 5 0 5 5 0 5 plane 0\n0 0 5 0 5 5 0 plane 0\n");
    const auto r = ws.run("convert dota2coco --images images --labels labels --out coco.json");
    CHECK(r.code == 3);
    CHECK(r.err.find("bad.txt:2") != std::string::npos);
    CHECK(!fs::exists(ws / "coco.json"));
  }
}

TEST_SUITE("cli.eval") {
  TEST_CASE("predictions equal to ground truth score 100") {
    Workspace ws("eval_perfect");
    const auto boxes = grid_boxes(12);
    ws.write("gt.json", coco(boxes).dump());
    ws.write("pred.json", predictions(boxes).dump());
    REQUIRE(ws.run("eval --pred pred.json --gt gt.json --iou 0.5 --per-class --size-buckets --out ev").code == 0);
    const auto rep = ws.load("ev/report.json");
    CHECK(rep["precision"] == 100.0);
    CHECK(rep["recall"] == 100.0);
    CHECK(rep["f1"] == 100.0);
    CHECK(rep["tp"] == 12);
    CHECK(rep["size_buckets"][0]["label"] == "small");
    CHECK(rep["size_buckets"][0]["tp"] == 12);
    CHECK(soar::read_file(ws / "ev/curves.csv").rfind("threshold,precision,recall,f1\n", 0) == 0);
    CHECK(fs::exists(ws / "ev/confusion.csv"));
    CHECK(fs::exists(ws / "ev/pr.csv"));
  }

  TEST_CASE("empty predictions give zero precision and recall") {
    Workspace ws("eval_empty");
    ws.write("gt.json", coco(grid_boxes(5)).dump());
    ws.write("pred.json", "[]");
    REQUIRE(ws.run("eval --pred pred.json --gt gt.json --out ev").code == 0);
    const auto rep = ws.load("ev/report.json");
    CHECK(rep["precision"] == 0.0);
    CHECK(rep["recall"] == 0.0);
    CHECK(rep["fn"] == 5);
  }

  TEST_CASE("published precision and recall reproduce the published F1") {
    // 667 hits, 136 false alarms, 171 misses.
    Workspace ws("eval_table");
    const auto truth = grid_boxes(838);
    auto hits = truth;
    hits.resize(667);
    auto preds = hits;
    for (const auto& b : grid_boxes(136, 1500)) preds.push_back(b);
    ws.write("gt.json", coco(truth).dump());
    ws.write("pred.json", predictions(preds).dump());
    REQUIRE(ws.run("eval --pred pred.json --gt gt.json --out ev").code == 0);
    const auto rep = ws.load("ev/report.json");
    CHECK(rep["precision"] == 83.06);
    CHECK(rep["recall"] == 79.59);
    CHECK(rep["f1"] == 81.29);
  }

  TEST_CASE("schema mismatch exits 4, bad JSON exits 3") {
    Workspace ws("eval_schema");
    ws.write("gt.json", coco(grid_boxes(2)).dump());
    auto preds = predictions(grid_boxes(1));
    preds[0]["image_id"] = 42;
    ws.write("pred.json", preds.dump());
    CHECK(ws.run("eval --pred pred.json --gt gt.json --out ev").code == 4);
    ws.write("pred.json", "[{\"image_id\": 1, \"class_id\": 99, \"score\": 1, \"bbox\": [0,0,1,1]}]");
    CHECK(ws.run("eval --pred pred.json --gt gt.json --out ev").code == 4);
    ws.write("pred.json", "[{");
    CHECK(ws.run("eval --pred pred.json --gt gt.json --out ev").code == 3);
    CHECK(!fs::exists(ws / "ev/report.json"));
  }
}

TEST_SUITE("cli.infer") {
  TEST_CASE("mock oracle reports a straddling object once") {
    Workspace ws("infer_oracle");
    soar::write_png(ws / "scene.png", gradient_image(768, 768, 3));
    ws.write("gt.json", coco({{400, 300, 50, 40}}, 768, 768).dump());
    REQUIRE(ws.run("infer --image scene.png --detector mock-oracle --gt gt.json --out det.json "
                   "--slice-w 512 --slice-h 512 --overlap 0.25").code == 0);
    const auto det = ws.load("det.json");
    REQUIRE(det.size() == 1);
    CHECK(det[0]["bbox"] == json({400.0, 300.0, 450.0, 340.0}));
    CHECK(det[0]["image_id"] == 1);
    CHECK(fs::exists(ws / "det.json.manifest.json"));
  }

  TEST_CASE("no objects gives an empty array") {
    Workspace ws("infer_none");
    soar::write_png(ws / "scene.png", gradient_image(600, 600, 3));
    ws.write("gt.json", coco({}, 600, 600).dump());
    REQUIRE(ws.run("infer --image scene.png --detector mock-oracle --gt gt.json --out det.json").code == 0);
    CHECK(ws.load("det.json") == json::array());
  }

  TEST_CASE("external detector over standard streams") {
    Workspace ws("infer_exec");
    soar::write_png(ws / "scene.png", gradient_image(768, 768, 3));
    ws.script("det.sh",
              "while read -r line; do echo '[{\"class_id\": 2, \"score\": 0.7, \"bbox\": [10, 10, 30, 20]}]'; done\n");
    REQUIRE(ws.run("infer --image scene.png --detector exec:./det.sh --out det.json "
                   "--slice-w 512 --slice-h 512 --overlap 0.25").code == 0);
    const auto det = ws.load("det.json");
    CHECK(det.size() == 4);  // one local box per tile, at distinct global positions
  }

  TEST_CASE("crashing detector exits 5 and writes nothing") {
    Workspace ws("infer_crash");
    soar::write_png(ws / "scene.png", gradient_image(768, 768, 3));
    ws.script("crash.sh", "read -r line; echo '[]'; read -r line; exit 9\n");
    auto r = ws.run("infer --image scene.png --detector exec:./crash.sh --out det.json");
    CHECK(r.code == 5);
    CHECK(!fs::exists(ws / "det.json"));
    CHECK(!fs::exists(ws / "det.json.manifest.json"));

    ws.script("garbage.sh", "while read -r line; do echo 'not json'; done\n");
    r = ws.run("infer --image scene.png --detector exec:./garbage.sh --out det.json");
    CHECK(r.code == 5);
    CHECK(!fs::exists(ws / "det.json"));

    ws.script("late.sh", "while read -r line; do echo '[]'; done; exit 2\n");
    CHECK(ws.run("infer --image scene.png --detector exec:./late.sh --out det.json").code == 5);
    CHECK(!fs::exists(ws / "det.json"));
  }
}

TEST_SUITE("cli.bench") {
  TEST_CASE("M = 1 completes with nonzero throughput") {
    Workspace ws("bench");
    REQUIRE(ws.run("bench --sizes 1x4x2 --json bench.json").code == 0);
    const auto doc = ws.load("bench.json");
    CHECK(doc["scans"][0]["elements_per_s"].get<double>() > 0);
    CHECK(doc["scans"][0]["flops"] == 2 * 3 * 1 * 4 * 2);
  }

  TEST_CASE("flop total matches the itemized budget") {
    Workspace ws("bench_budget");
    ws.write("enc.cfg", "image_h = 32\nimage_w = 32\npatch_mode = nonoverlap\npatch_size = 8\n");
    REQUIRE(ws.run("bench --sizes 8x4x4 --config enc.cfg --json bench.json").code == 0);
    const auto enc = ws.load("bench.json")["encoder"];
    const auto budget = soar::encoder::count_params_gflops(soar::encoder::EncoderConfig::load(ws / "enc.cfg"));
    CHECK(enc["gflops"].get<double>() == budget.gflops);
    CHECK(std::abs(enc["gflops_itemized"].get<double>() - budget.gflops) <= 1e-12 * budget.gflops);
    CHECK(enc["params"] == budget.params);
  }
}

TEST_SUITE("cli.encode") {
  TEST_CASE("seeded runs and saved weights reproduce the scores") {
    Workspace ws("encode");
    ws.write("enc.cfg", "image_h = 32\nimage_w = 32\npatch_mode = nonoverlap\npatch_size = 8\nnum_classes = 5\n");
    REQUIRE(ws.run("encode --config enc.cfg --seed 7 --out a.json --save-weights w.bin").code == 0);
    REQUIRE(ws.run("encode --config enc.cfg --seed 7 --out b.json").code == 0);
    REQUIRE(ws.run("encode --config enc.cfg --seed 7 --weights w.bin --out c.json").code == 0);
    const auto a = ws.load("a.json");
    CHECK(a["scores"].size() == 5);
    CHECK(a == ws.load("b.json"));
    CHECK(a == ws.load("c.json"));
    CHECK(ws.load("a.json.manifest.json")["seed"] == 7);
  }

  TEST_CASE("bad config exits 3, mismatched weights exit 4") {
    Workspace ws("encode_bad");
    ws.write("bad.cfg", "depth = two\n");
    CHECK(ws.run("encode --config bad.cfg").code == 3);
    ws.write("a.cfg", "image_h = 32\nimage_w = 32\npatch_mode = nonoverlap\npatch_size = 8\n");
    ws.write("b.cfg", "image_h = 32\nimage_w = 32\npatch_mode = nonoverlap\npatch_size = 8\ndepth = 1\n");
    REQUIRE(ws.run("encode --config a.cfg --save-weights w.bin").code == 0);
    CHECK(ws.run("encode --config b.cfg --weights w.bin").code == 4);
  }
}

TEST_SUITE("cli.selftest") {
  TEST_CASE("fresh build passes") {
    Workspace ws("selftest");
    const auto r = ws.run("selftest");
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
  }

  TEST_CASE("corrupted tolerance exits 1 naming the criterion") {
    Workspace ws("selftest_fail");
    const auto r = ws.run("selftest --inject-failure 4");
    CHECK(r.code == 1);
    CHECK(r.err.find("criterion 4") != std::string::npos);
  }

  TEST_CASE("information suites") {
    Workspace ws("selftest_info");
    const auto r = ws.run("selftest info");
    CHECK(r.code == 0);
    CHECK(r.out.find("dpi") != std::string::npos);
  }
}

TEST_CASE("usage errors exit 3") {
  Workspace ws("usage");
  CHECK(ws.run("").code == 3);
  CHECK(ws.run("eval --pred x.json").code == 3);
  CHECK(ws.run("--help").code == 0);
}
