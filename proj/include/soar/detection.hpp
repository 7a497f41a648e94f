// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace soar {

/// Horizontal (axis-aligned) bounding box in pixel coordinates.
struct Box {
  double x_min{0};
  double y_min{0};
  double x_max{0};
  double y_max{0};

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  /// Finite, with x_min < x_max and y_min < y_max.
  bool valid() const noexcept;

  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  int class_id{0};
  double score{1.0};
  Box bbox;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// A detection tagged with the image it belongs to.
struct ImageDetection {
  std::int64_t image_id{0};
  Detection detection;

  friend bool operator==(const ImageDetection&, const ImageDetection&) = default;
};

/// Intersection area over union area; 0 for disjoint boxes.
double iou_hbb(const Box& a, const Box& b) noexcept;

/// Area of the overlap of two boxes (0 when disjoint).
double intersection_area(const Box& a, const Box& b) noexcept;

/// [{image_id, class_id, score, bbox:[x_min,y_min,x_max,y_max]}, ...]
nlohmann::ordered_json detections_to_json(std::span<const ImageDetection> detections);
/// Throws SchemaError when the document does not follow the detections schema.
std::vector<ImageDetection> detections_from_json(const nlohmann::json& doc);

}  // namespace soar
