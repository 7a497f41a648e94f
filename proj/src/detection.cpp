// SPDX-License-Identifier: Apache-2.0

#include "soar/detection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soar/errors.hpp"

namespace soar {

bool Box::valid() const noexcept {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

double intersection_area(const Box& a, const Box& b) noexcept {
  const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

double iou_hbb(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

nlohmann::ordered_json detections_to_json(std::span<const ImageDetection> detections) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& d : detections) {
    nlohmann::ordered_json item;
    item["image_id"] = d.image_id;
    item["class_id"] = d.detection.class_id;
    item["score"] = d.detection.score;
    const auto& b = d.detection.bbox;
    item["bbox"] = {b.x_min, b.y_min, b.x_max, b.y_max};
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<ImageDetection> detections_from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw SchemaError("detections: expected a JSON array");
  std::vector<ImageDetection> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    const std::string where = "detections[" + std::to_string(i) + "]";
    if (!item.is_object()) throw SchemaError(where + ": expected an object");
    for (const char* key : {"image_id", "class_id", "score", "bbox"}) {
      if (!item.contains(key)) throw SchemaError(where + ": missing key '" + key + "'");
    }
    const auto& bbox = item["bbox"];
    if (!item["image_id"].is_number_integer() || !item["class_id"].is_number_integer() ||
        !item["score"].is_number() || !bbox.is_array() || bbox.size() != 4 ||
        !std::all_of(bbox.begin(), bbox.end(), [](const auto& v) { return v.is_number(); })) {
      throw SchemaError(where + ": wrong field types");
    }
    ImageDetection d;
    d.image_id = item["image_id"].get<std::int64_t>();
    d.detection.class_id = item["class_id"].get<int>();
    d.detection.score = item["score"].get<double>();
    d.detection.bbox = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(),
                        bbox[3].get<double>()};
    if (!d.detection.bbox.valid()) throw SchemaError(where + ": degenerate bbox");
    if (!(d.detection.score >= 0.0 && d.detection.score <= 1.0)) {
      throw SchemaError(where + ": score outside [0,1]");
    }
    out.push_back(d);
  }
  return out;
}

}  // namespace soar
