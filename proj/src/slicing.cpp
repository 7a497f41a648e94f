// SPDX-License-Identifier: Apache-2.0

#include "soar/slicing.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <random>
#include <string>
#include <tuple>

#include "soar/errors.hpp"
#include "soar/parallel.hpp"

namespace soar::slicing {
namespace {

std::vector<int> axis_starts(int source, int slice, double overlap_ratio) {
  if (source <= slice) return {0};
  const int stride = std::max(1, static_cast<int>(std::floor(slice * (1.0 - overlap_ratio))));
  std::vector<int> starts;
  int start = 0;
  for (; start + slice < source; start += stride) starts.push_back(start);
  const int last = source - slice;
  if (starts.empty() || starts.back() != last) starts.push_back(last);
  return starts;
}

// Lexicographic ranking used by NMS: score desc, then coordinates and class asc.
bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max, a.class_id) <
         std::tie(b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max, b.class_id);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Box rect_box(const Rect& r) {
  return {static_cast<double>(r.x), static_cast<double>(r.y), static_cast<double>(r.x + r.w),
          static_cast<double>(r.y + r.h)};
}

Box clip(const Box& b, const Box& to) {
  return {std::max(b.x_min, to.x_min), std::max(b.y_min, to.y_min), std::min(b.x_max, to.x_max),
          std::min(b.y_max, to.y_max)};
}

}  // namespace

void SliceConfig::validate() const {
  if (height_range.min <= 0 || height_range.min > height_range.max || width_range.min <= 0 ||
      width_range.min > width_range.max) {
    throw ContractError("SliceConfig: slice ranges must satisfy 0 < min <= max");
  }
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) {
    throw ContractError("SliceConfig: overlap_ratio must lie in [0, 1)");
  }
  if (resize_long_side && *resize_long_side <= 0) {
    throw ContractError("SliceConfig: resize target must be positive");
  }
  if (!(min_visibility >= 0.0 && min_visibility <= 1.0)) {
    throw ContractError("SliceConfig: min_visibility must lie in [0, 1]");
  }
}

SlicePlan plan_slices(int source_w, int source_h, int slice_w, int slice_h, double overlap_ratio) {
  if (source_w <= 0 || source_h <= 0) throw ContractError("plan_slices: zero-sized image");
  if (slice_w <= 0 || slice_h <= 0) throw ContractError("plan_slices: slice dims must be positive");
  if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) {
    throw ContractError("plan_slices: overlap_ratio must lie in [0, 1)");
  }
  SlicePlan plan{source_w, source_h, {}};
  const int w = std::min(slice_w, source_w);
  const int h = std::min(slice_h, source_h);
  const auto xs = axis_starts(source_w, slice_w, overlap_ratio);
  const auto ys = axis_starts(source_h, slice_h, overlap_ratio);
  plan.rects.reserve(xs.size() * ys.size());
  for (int y : ys) {
    for (int x : xs) plan.rects.push_back({x, y, w, h});
  }
  return plan;
}

std::vector<Patch> extract_and_resize(const Image& image, const SlicePlan& plan,
                                      std::optional<int> resize_long_side) {
  if (plan.source_w != image.width || plan.source_h != image.height) {
    throw ContractError("extract_and_resize: plan does not match image dimensions");
  }
  std::vector<Patch> patches;
  patches.reserve(plan.rects.size());
  for (const auto& rect : plan.rects) {
    Patch patch{crop(image, rect), rect, 1.0, 1.0};
    if (resize_long_side) {
      const double scale = static_cast<double>(*resize_long_side) / std::max(rect.w, rect.h);
      const int new_w = std::max(1, static_cast<int>(std::lround(rect.w * scale)));
      const int new_h = std::max(1, static_cast<int>(std::lround(rect.h * scale)));
      patch.image = resize_bilinear(patch.image, new_w, new_h);
      patch.scale_x = scale;
      patch.scale_y = scale;
    }
    patches.push_back(std::move(patch));
  }
  return patches;
}

std::vector<Detection> map_to_global(std::span<const Detection> detections, const Rect& rect,
                                     double scale_x, double scale_y) {
  std::vector<Detection> out(detections.begin(), detections.end());
  for (auto& d : out) {
    d.bbox = {d.bbox.x_min / scale_x + rect.x, d.bbox.y_min / scale_y + rect.y,
              d.bbox.x_max / scale_x + rect.x, d.bbox.y_max / scale_y + rect.y};
  }
  return out;
}

std::vector<Detection> map_to_local(std::span<const Detection> detections, const Rect& rect,
                                    double scale_x, double scale_y) {
  std::vector<Detection> out(detections.begin(), detections.end());
  for (auto& d : out) {
    d.bbox = {(d.bbox.x_min - rect.x) * scale_x, (d.bbox.y_min - rect.y) * scale_y,
              (d.bbox.x_max - rect.x) * scale_x, (d.bbox.y_max - rect.y) * scale_y};
  }
  return out;
}

std::vector<Detection> merge_predictions(std::vector<Detection> detections, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw ContractError("merge_predictions: iou_threshold must lie in (0, 1]");
  }
  for (const auto& d : detections) {
    if (!d.bbox.valid()) throw ContractError("merge_predictions: invalid box");
  }
  std::sort(detections.begin(), detections.end(), ranks_before);
  std::vector<Detection> kept;
  for (const auto& candidate : detections) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == candidate.class_id && iou_hbb(k.bbox, candidate.bbox) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

std::vector<Detection> sliced_inference(const Image& image, Detector& detector,
                                        const SliceConfig& config, double iou_threshold,
                                        unsigned workers) {
  config.validate();
  const auto plan = plan_slices(image.width, image.height, config.width_range.max,
                                config.height_range.max, config.overlap_ratio);
  auto patches = extract_and_resize(image, plan, config.resize_long_side);
  if (config.include_full_image) {
    patches.push_back({image, Rect{0, 0, image.width, image.height}, 1.0, 1.0});
  }

  std::vector<std::vector<Detection>> per_patch(patches.size());
  std::vector<std::string> failures(patches.size());
  parallel_for(patches.size(), detector.concurrent() ? workers : 1u, [&](std::size_t i) {
    try {
      const auto& p = patches[i];
      per_patch[i] = map_to_global(detector.detect(p), p.rect, p.scale_x, p.scale_y);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  std::string message;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (failures[i].empty()) continue;
    const auto& r = patches[i].rect;
    message += (message.empty() ? "" : "; ") + std::string("patch (") + std::to_string(r.x) + "," +
               std::to_string(r.y) + "," + std::to_string(r.w) + "," + std::to_string(r.h) +
               "): " + failures[i];
  }
  if (!message.empty()) throw DetectorError("detector failed on " + message);

  std::vector<Detection> all;
  for (auto& dets : per_patch) all.insert(all.end(), dets.begin(), dets.end());
  return merge_predictions(std::move(all), iou_threshold);
}

std::vector<TrainingPatch> finetune_patches(const Image& image,
                                            std::span<const Detection> annotations,
                                            const SliceConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const int slice_h =
      std::uniform_int_distribution<int>(config.height_range.min, config.height_range.max)(rng);
  const int slice_w =
      std::uniform_int_distribution<int>(config.width_range.min, config.width_range.max)(rng);
  const auto plan = plan_slices(image.width, image.height, slice_w, slice_h, config.overlap_ratio);
  auto patches = extract_and_resize(image, plan, config.resize_long_side);

  std::vector<TrainingPatch> out;
  out.reserve(patches.size());
  for (auto& patch : patches) {
    const Box bounds = rect_box(patch.rect);
    std::vector<Detection> kept;
    for (const auto& a : annotations) {
      if (!a.bbox.valid()) continue;
      const Box visible = clip(a.bbox, bounds);
      if (!visible.valid() || visible.area() < config.min_visibility * a.bbox.area()) continue;
      Detection local = a;
      local.bbox = visible;
      kept.push_back(local);
    }
    kept = map_to_local(kept, patch.rect, patch.scale_x, patch.scale_y);
    out.push_back({std::move(patch), std::move(kept)});
  }
  return out;
}

nlohmann::ordered_json plan_to_json(const SlicePlan& plan) {
  nlohmann::ordered_json doc;
  doc["source_w"] = plan.source_w;
  doc["source_h"] = plan.source_h;
  auto rects = nlohmann::ordered_json::array();
  for (const auto& r : plan.rects) rects.push_back({r.x, r.y, r.w, r.h});
  doc["rects"] = std::move(rects);
  return doc;
}

MockOracleDetector::MockOracleDetector(std::vector<Detection> ground_truth)
    : MockOracleDetector(std::move(ground_truth), Options{}) {}

MockOracleDetector::MockOracleDetector(std::vector<Detection> ground_truth, Options options)
    : ground_truth_(std::move(ground_truth)), options_(options) {}

std::vector<Detection> MockOracleDetector::detect(const Patch& patch) {
  const Box bounds = rect_box(patch.rect);
  const Box local_bounds{0.0, 0.0, static_cast<double>(patch.image.width),
                         static_cast<double>(patch.image.height)};
  std::vector<Detection> found;
  for (std::size_t i = 0; i < ground_truth_.size(); ++i) {
    const auto& gt = ground_truth_[i];
    const Box visible = clip(gt.bbox, bounds);
    if (!visible.valid() || visible.area() < options_.min_visibility * gt.bbox.area()) continue;
    Detection d = gt;
    d.bbox = visible;
    d = map_to_local(std::span<const Detection>(&d, 1), patch.rect, patch.scale_x,
                     patch.scale_y)[0];
    if (options_.jitter_px > 0) {
      std::uint64_t key = splitmix64(options_.seed);
      for (std::uint64_t v : {static_cast<std::uint64_t>(patch.rect.x),
                              static_cast<std::uint64_t>(patch.rect.y),
                              static_cast<std::uint64_t>(patch.rect.w),
                              static_cast<std::uint64_t>(patch.rect.h), std::uint64_t{i}}) {
        key = splitmix64(key ^ v);
      }
      std::mt19937_64 rng(key);
      std::uniform_real_distribution<double> noise(-options_.jitter_px, options_.jitter_px);
      Box j{d.bbox.x_min + noise(rng), d.bbox.y_min + noise(rng), d.bbox.x_max + noise(rng),
            d.bbox.y_max + noise(rng)};
      j = clip(j, local_bounds);
      if (j.valid()) d.bbox = j;
    }
    found.push_back(d);
  }
  return found;
}

}  // namespace soar::slicing
