// SPDX-License-Identifier: Apache-2.0
//
// DOTA-v1.5 oriented-box annotations and their COCO-style conversion.
//
// Label text format, one object per line:
//
//   x1 y1 x2 y2 x3 y3 x4 y4 category difficult
//
// optionally preceded by "imagesource:..." and "gsd:..." metadata lines.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/detection.hpp"
#include "soar/image.hpp"

namespace soar::dota {

/// DOTA-v1.5 category names in their fixed order; category id = index + 1.
inline constexpr std::array<std::string_view, 16> kCategories = {
    "plane",          "ship",          "storage-tank",     "baseball-diamond",
    "tennis-court",   "basketball-court", "ground-track-field", "harbor",
    "bridge",         "large-vehicle", "small-vehicle",    "helicopter",
    "roundabout",     "soccer-ball-field", "swimming-pool", "container-crane"};

/// 1-based id, or nullopt for names outside the list.
std::optional<int> category_id(std::string_view name);
/// Throws ContractError for ids outside [1, 16].
std::string_view category_name(int id);

using Quad = std::array<double, 8>;  // x1 y1 x2 y2 x3 y3 x4 y4

struct DotaAnnotation {
  Quad vertices{};
  std::string category;
  int difficult{0};

  friend bool operator==(const DotaAnnotation&, const DotaAnnotation&) = default;
};

/// Throws ParseError (with line number) on wrong token counts, non-numeric or
/// negative coordinates, unknown categories and difficulty flags outside {0,1}.
std::vector<DotaAnnotation> parse_dota(std::string_view text);
/// Inverse of parse_dota (shortest round-trip number formatting).
std::string format_dota(std::span<const DotaAnnotation> annotations);

/// Component-wise min/max of the four vertices. Throws DegenerateBoxError
/// when the hull has zero width or height.
Box obb_to_hbb(const Quad& vertices);
/// Shoelace area of the quadrilateral (absolute value).
double polygon_area(const Quad& vertices);

struct LabeledImage {
  std::string file_name;
  int width{0};
  int height{0};
  std::vector<DotaAnnotation> annotations;
};

struct CocoImage {
  std::int64_t id{0};
  std::string file_name;
  int width{0};
  int height{0};
};

struct CocoAnnotation {
  std::int64_t id{0};
  std::int64_t image_id{0};
  int category_id{0};
  std::array<double, 4> bbox{};  // x, y, w, h
  double area{0};                // oriented polygon area
  int iscrowd{0};
  int difficult{0};

  Box hbb() const noexcept { return {bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]}; }
};

struct CocoCategory {
  int id{0};
  std::string name;
};

struct CocoDataset {
  std::vector<CocoImage> images;
  std::vector<CocoAnnotation> annotations;
  std::vector<CocoCategory> categories;

  /// Keys in fixed order: images, annotations, categories.
  nlohmann::ordered_json to_json() const;
  /// Throws SchemaError on missing keys, wrong types or dangling references.
  static CocoDataset from_json(const nlohmann::json& doc);
};

/// Image and annotation ids are assigned 1, 2, ... in input order.
/// Throws ConversionError for degenerate or zero-area objects.
CocoDataset dota_to_coco(std::span<const LabeledImage> images);

/// Pairs `<stem>.png` images with `<stem>.txt` labels (sorted by stem) and
/// converts them. Images without a label file contribute no annotations; a
/// label file without its image is a ConversionError. When `stems` is given,
/// only those entries are converted. ParseErrors carry the label file path.
CocoDataset convert_directory(const std::filesystem::path& images_dir,
                              const std::filesystem::path& labels_dir,
                              const std::optional<std::vector<std::string>>& stems = std::nullopt);

/// Y = round(0.299 R + 0.587 G + 0.114 B) for RGB input; gray input is copied.
Image to_grayscale(const Image& image);

}  // namespace soar::dota
