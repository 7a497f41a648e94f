// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "soar/dota.hpp"
#include "soar/errors.hpp"

using namespace soar;
using namespace soar::dota;

namespace {

const Quad kRotatedSquare{5, 0, 10, 5, 5, 10, 0, 5};

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("soar_test_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path / "images");
    std::filesystem::create_directories(path / "labels");
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

std::vector<LabeledImage> three_image_fixture() {
  auto quad = [](double x, double y, double w, double h) {
    return Quad{x, y, x + w, y, x + w, y + h, x, y + h};
  };
  return {
      {"a.png", 100, 80, {{quad(1, 2, 10, 20), "plane", 0}, {kRotatedSquare, "ship", 1}}},
      {"b.png", 64, 64, {}},
      {"c.png", 300, 200,
       {{quad(50, 60, 5, 5), "small-vehicle", 0},
        {quad(0, 0, 300, 200), "harbor", 0},
        {Quad{10, 10, 40, 12, 38, 30, 8, 28}, "container-crane", 0}}},
  };
}

}  // namespace

TEST_SUITE("dota.parse") {
  TEST_CASE("single line") {
    const auto anns = parse_dota("0 0 10 0 10 10 0 10 plane 0");
    REQUIRE(anns.size() == 1);
    CHECK(anns[0].category == "plane");
    CHECK(anns[0].difficult == 0);
    CHECK(anns[0].vertices == Quad{0, 0, 10, 0, 10, 10, 0, 10});
  }

  TEST_CASE("empty input") {
    CHECK(parse_dota("").empty());
    CHECK(parse_dota("\n\n  \n").empty());
  }

  TEST_CASE("metadata header and CRLF") {
    const auto anns = parse_dota(
        "imagesource:GoogleEarth\r\ngsd:0.146343590398\r\n"
        "1.5 2 3 4 5 6 7 8 large-vehicle 1\r\n");
    REQUIRE(anns.size() == 1);
    CHECK(anns[0].vertices[0] == 1.5);
    CHECK(anns[0].difficult == 1);
  }

  TEST_CASE("errors carry the line number") {
    auto line_of = [](const std::string& text) {
      try {
        parse_dota(text);
      } catch (const ParseError& e) {
        return e.line();
      }
      return std::size_t{0};
    };
    CHECK(line_of("1 2 3 plane") == 1);
    CHECK(line_of("0 0 10 0 10 10 0 10 plane 0\n0 0 x 0 10 10 0 10 plane 0") == 2);
    CHECK(line_of("0 0 10 0 10 10 0 10 airship 0") == 1);
    CHECK(line_of("\n\n0 0 10 0 10 10 0 10 plane 2") == 3);
    CHECK(line_of("0 0 -1 0 10 10 0 10 plane 0") == 1);
    CHECK(line_of("0 0 10 0 10 10 0 10 plane 0\ngsd:1.0") == 2);  // metadata only leads
  }

  TEST_CASE("print and re-parse is the identity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> coord(0, 5000);
    std::uniform_int_distribution<int> cat(0, 15), diff(0, 1);
    std::vector<DotaAnnotation> anns;
    for (int i = 0; i < 300; ++i) {
      DotaAnnotation a;
      for (auto& v : a.vertices) v = (i % 3 == 0) ? std::round(coord(rng)) : coord(rng);
      a.category = std::string(kCategories[cat(rng)]);
      a.difficult = diff(rng);
      anns.push_back(a);
    }
    CHECK(parse_dota(format_dota(anns)) == anns);
  }
}

TEST_SUITE("dota.geometry") {
  TEST_CASE("hbb examples") {
    CHECK(obb_to_hbb({0, 0, 10, 0, 10, 10, 0, 10}) == Box{0, 0, 10, 10});
    CHECK(obb_to_hbb(kRotatedSquare) == Box{0, 0, 10, 10});
    CHECK_THROWS_AS(obb_to_hbb({3, 3, 3, 3, 3, 3, 3, 3}), DegenerateBoxError);
    CHECK_THROWS_AS(obb_to_hbb({0, 3, 5, 3, 9, 3, 1, 3}), DegenerateBoxError);
  }

  TEST_CASE("shoelace area") {
    CHECK(polygon_area(kRotatedSquare) == 50.0);
    CHECK(polygon_area({0, 0, 10, 0, 10, 10, 0, 10}) == 100.0);
    CHECK(polygon_area({0, 10, 10, 10, 10, 0, 0, 0}) == 100.0);  // clockwise
  }

  TEST_CASE("every vertex lies inside its hbb") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> coord(0, 1000);
    for (int i = 0; i < 500; ++i) {
      Quad q;
      for (auto& v : q) v = coord(rng);
      const Box b = obb_to_hbb(q);
      for (int k = 0; k < 4; ++k) {
        CHECK(q[2 * k] >= b.x_min);
        CHECK(q[2 * k] <= b.x_max);
        CHECK(q[2 * k + 1] >= b.y_min);
        CHECK(q[2 * k + 1] <= b.y_max);
      }
    }
  }

  TEST_CASE("category ids round-trip") {
    for (int id = 1; id <= 16; ++id) CHECK(category_id(category_name(id)) == id);
    CHECK(category_id("plane") == 1);
    CHECK(category_id("container-crane") == 16);
    CHECK_FALSE(category_id("vehicle"));
    CHECK_THROWS_AS(category_name(17), ContractError);
  }
}

TEST_SUITE("dota.coco") {
  TEST_CASE("rotated square keeps the polygon area") {
    const std::vector<LabeledImage> imgs{{"x.png", 20, 20, {{kRotatedSquare, "plane", 0}}}};
    const auto ds = dota_to_coco(imgs);
    REQUIRE(ds.annotations.size() == 1);
    CHECK(ds.annotations[0].bbox == std::array<double, 4>{0, 0, 10, 10});
    CHECK(ds.annotations[0].area == 50.0);
    CHECK(ds.annotations[0].category_id == 1);
    CHECK(ds.annotations[0].iscrowd == 0);
  }

  TEST_CASE("empty dataset is a valid shell") {
    const auto ds = dota_to_coco({});
    CHECK(ds.images.empty());
    CHECK(ds.annotations.empty());
    REQUIRE(ds.categories.size() == 16);
    CHECK(ds.categories[15].name == "container-crane");
    CHECK(ds.to_json().dump() ==
          CocoDataset::from_json(nlohmann::json::parse(ds.to_json().dump())).to_json().dump());
  }

  TEST_CASE("three images and five boxes") {
    const auto fixture = three_image_fixture();
    const auto ds = dota_to_coco(fixture);
    CHECK(ds.images.size() == 3);
    CHECK(ds.annotations.size() == 5);
    std::set<std::int64_t> ids;
    for (const auto& a : ds.annotations) ids.insert(a.id);
    CHECK(ids.size() == 5);
    CHECK(ds.annotations[1].difficult == 1);
    CHECK(ds.annotations[4].image_id == 3);
    CHECK(ds.annotations[4].bbox == std::array<double, 4>{8, 10, 32, 20});
    CHECK(ds.to_json().dump() == dota_to_coco(fixture).to_json().dump());
  }

  TEST_CASE("json keys are in the documented order") {
    const auto doc = dota_to_coco(three_image_fixture()).to_json();
    std::vector<std::string> keys;
    for (auto it = doc.begin(); it != doc.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"images", "annotations", "categories"});
    std::vector<std::string> ann_keys;
    for (auto it = doc["annotations"][0].begin(); it != doc["annotations"][0].end(); ++it) {
      ann_keys.push_back(it.key());
    }
    CHECK(ann_keys == std::vector<std::string>{"id", "image_id", "category_id", "bbox", "area",
                                               "iscrowd", "difficult"});
  }

  TEST_CASE("schema validation") {
    CHECK_THROWS_AS(CocoDataset::from_json(nlohmann::json::array()), SchemaError);
    auto doc = nlohmann::json::parse(dota_to_coco(three_image_fixture()).to_json().dump());
    doc["annotations"][0]["image_id"] = 99;
    CHECK_THROWS_AS(CocoDataset::from_json(doc), SchemaError);
  }

  TEST_CASE("degenerate objects fail conversion") {
    const std::vector<LabeledImage> imgs{{"x.png", 20, 20, {{Quad{1, 1, 1, 1, 1, 1, 1, 1}, "plane", 0}}}};
    CHECK_THROWS_AS(dota_to_coco(imgs), ConversionError);
  }
}

TEST_SUITE("dota.directory") {
  TEST_CASE("pairs labels with images and reports file:line") {
    TempDir dir("convert");
    write_png(dir.path / "images" / "p1.png", Image(40, 30, 3));
    write_png(dir.path / "images" / "p0.png", Image(20, 10, 1));
    write_text(dir.path / "labels" / "p1.txt", "imagesource:x\n0 0 10 0 10 10 0 10 plane 0\n");
    const auto ds = convert_directory(dir.path / "images", dir.path / "labels");
    REQUIRE(ds.images.size() == 2);
    CHECK(ds.images[0].file_name == "p0.png");
    CHECK(ds.images[0].width == 20);
    CHECK(ds.images[1].height == 30);
    CHECK(ds.annotations.size() == 1);
    CHECK(ds.annotations[0].image_id == 2);

    const auto only = convert_directory(dir.path / "images", dir.path / "labels",
                                        std::vector<std::string>{"p1"});
    CHECK(only.images.size() == 1);

    write_text(dir.path / "labels" / "p0.txt", "\n0 0 10 0 10 10 0 10 plane\n");
    try {
      convert_directory(dir.path / "images", dir.path / "labels");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
      CHECK(std::string(e.what()).find("p0.txt:2") != std::string::npos);
    }

    write_text(dir.path / "labels" / "p0.txt", "");
    write_text(dir.path / "labels" / "orphan.txt", "");
    CHECK_THROWS_AS(convert_directory(dir.path / "images", dir.path / "labels"), ConversionError);
  }
}

TEST_SUITE("dota.grayscale") {
  TEST_CASE("bt601 luma") {
    Image rgb(3, 1, 3);
    const std::uint8_t px[] = {255, 255, 255, 255, 0, 0, 17, 17, 17};
    std::copy(std::begin(px), std::end(px), rgb.pixels.begin());
    const auto g = to_grayscale(rgb);
    CHECK(g.channels == 1);
    CHECK(g.pixels == std::vector<std::uint8_t>{255, 76, 17});
  }

  TEST_CASE("gray passes through for every level") {
    Image rgb(256, 1, 3);
    for (int v = 0; v < 256; ++v)
      for (int c = 0; c < 3; ++c) rgb.at(v, 0, c) = static_cast<std::uint8_t>(v);
    const auto g = to_grayscale(rgb);
    for (int v = 0; v < 256; ++v) CHECK(g.at(v, 0) == v);
    CHECK(to_grayscale(g) == g);
  }
}
