// SPDX-License-Identifier: Apache-2.0
//
// Slicing-aided inference: overlapping tiles, per-tile detection, remapping to
// source coordinates and deterministic class-wise NMS. Also produces the
// enlarged training patches used for slice-aided fine-tuning.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/detection.hpp"
#include "soar/image.hpp"

namespace soar::slicing {

struct IntRange {
  int min{0};
  int max{0};
};

struct SliceConfig {
  IntRange height_range{512, 512};  // [M_min, M_max]
  IntRange width_range{512, 512};    // [N_min, N_max]
  double overlap_ratio{0.2};
  /// Long-side length each patch is resized to; unset keeps raw crops.
  std::optional<int> resize_long_side;
  std::uint64_t seed{0};
  /// Also run the detector on the whole image and merge it with the tiles.
  bool include_full_image{false};
  /// Fine-tuning: annotations keeping less than this fraction of their area are dropped.
  double min_visibility{0.25};

  /// Throws ContractError when ranges are empty or the overlap is outside [0,1).
  void validate() const;
};

struct SlicePlan {
  int source_w{0};
  int source_h{0};
  std::vector<Rect> rects;  // row-major by (y, x)
};

/// A cropped (and possibly resized) tile with its placement in the source.
struct Patch {
  Image image;
  Rect rect;
  double scale_x{1.0};
  double scale_y{1.0};
};

struct TrainingPatch {
  Patch patch;
  std::vector<Detection> annotations;  // patch-local, resized coordinates
};

/// Tile starts advance by floor(slice * (1 - overlap)); the last window is
/// clamped flush with the image edge, and a source smaller than the slice
/// yields one window spanning it.
SlicePlan plan_slices(int source_w, int source_h, int slice_w, int slice_h, double overlap_ratio);

std::vector<Patch> extract_and_resize(const Image& image, const SlicePlan& plan,
                                      std::optional<int> resize_long_side);

/// bbox / scale + rect origin. Class and score are unchanged.
std::vector<Detection> map_to_global(std::span<const Detection> detections, const Rect& rect,
                                     double scale_x, double scale_y);
/// Inverse of map_to_global.
std::vector<Detection> map_to_local(std::span<const Detection> detections, const Rect& rect,
                                    double scale_x, double scale_y);

/// Class-wise greedy NMS. Candidates are ranked by score (desc), then x_min,
/// y_min, x_max, y_max (asc) and class id, so the result does not depend on
/// input order. A box is dropped when its IoU with an already kept box of the
/// same class is >= iou_threshold.
std::vector<Detection> merge_predictions(std::vector<Detection> detections, double iou_threshold);

/// Detector plugged into the slicing pipeline. Returned boxes are in the
/// patch's local (resized) pixel frame.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const Patch& patch) = 0;
  /// False when detect() must not be called from several threads at once.
  virtual bool concurrent() const { return true; }
};

/// plan -> extract -> detect -> map_to_global -> merge. Tiles are sized by the
/// upper ends of the configured ranges. Detector failures are collected and
/// rethrown as one DetectorError naming every failed rect.
std::vector<Detection> sliced_inference(const Image& image, Detector& detector,
                                        const SliceConfig& config, double iou_threshold,
                                        unsigned workers = 1);

/// Slice dims are sampled once per call from the configured ranges using the seed.
std::vector<TrainingPatch> finetune_patches(const Image& image,
                                            std::span<const Detection> annotations,
                                            const SliceConfig& config);

nlohmann::ordered_json plan_to_json(const SlicePlan& plan);

/// Reports ground-truth boxes visible in each patch, optionally jittered.
/// Jitter is seeded per (patch rect, object index), so results do not depend
/// on the order in which patches are processed.
class MockOracleDetector final : public Detector {
 public:
  struct Options {
    double min_visibility{0.5};
    double jitter_px{0.0};
    std::uint64_t seed{0};
  };

  explicit MockOracleDetector(std::vector<Detection> ground_truth);
  MockOracleDetector(std::vector<Detection> ground_truth, Options options);

  std::vector<Detection> detect(const Patch& patch) override;

 private:
  std::vector<Detection> ground_truth_;
  Options options_;
};

}  // namespace soar::slicing
