// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: greedy score-ordered matching, confusion matrices,
// precision / recall / F1, overall accuracy / IoU / kappa, threshold sweeps
// and MS-COCO size buckets. All percentages are on a 0..100 scale.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "soar/detection.hpp"

namespace soar::metrics {

using soar::iou_hbb;

struct GroundTruth {
  int class_id{0};
  Box bbox;
  bool difficult{false};
  /// Object area used for size bucketing; 0 means "use the bbox area".
  double area{0};

  double bucket_area() const noexcept { return area > 0 ? area : bbox.area(); }
};

/// Predictions and ground truth of one image.
struct ImageSample {
  std::vector<Detection> predictions;
  std::vector<GroundTruth> ground_truth;
};

enum class ClassMode { aware, agnostic };

struct MatchOptions {
  double iou_threshold{0.5};
  ClassMode class_mode{ClassMode::aware};
  /// Difficult ground truth never counts as a miss, and predictions matched to
  /// it count as neither hit nor false alarm.
  bool ignore_difficult{true};
};

struct MatchedPair {
  std::size_t prediction;
  std::size_t ground_truth;
  double iou;
  int prediction_class;
  int ground_truth_class;
};

struct Unmatched {
  std::size_t index;
  int class_id;
};

/// Indices refer to positions in the caller's prediction / ground-truth lists.
struct MatchSet {
  std::vector<MatchedPair> matches;
  std::vector<Unmatched> false_positives;
  std::vector<Unmatched> false_negatives;
  std::vector<std::size_t> ignored_predictions;  // matched to difficult ground truth
};

/// Greedy one-to-one matching. Predictions are visited by descending score
/// (ties broken by box coordinates, then class); each takes the unmatched
/// ground truth with the highest IoU >= threshold (same class unless agnostic),
/// ties going to the lower index in canonical (class, box) order.
MatchSet match_detections(std::span<const Detection> predictions,
                          std::span<const GroundTruth> ground_truth, const MatchOptions& options);

/// Square count matrix; rows are ground truth, columns predictions. With a
/// background class it is the last row/column.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  /// K object classes plus a trailing background row/column.
  explicit ConfusionMatrix(std::vector<int> class_ids, std::vector<std::string> names = {});
  /// Generic n x n matrix without background (row-major counts).
  static ConfusionMatrix from_counts(std::size_t n, std::vector<std::int64_t> counts);

  std::size_t size() const noexcept { return n_; }
  bool has_background() const noexcept { return has_background_; }
  std::size_t background() const noexcept { return n_ - 1; }
  std::int64_t at(std::size_t row, std::size_t col) const { return counts_.at(row * n_ + col); }
  std::int64_t total() const noexcept;
  /// Row/column of a class id; throws ContractError for unknown ids.
  std::size_t index_of(int class_id) const;
  const std::vector<std::string>& names() const noexcept { return names_; }

  void add(std::size_t row, std::size_t col, std::int64_t count = 1);
  /// CSV with a header row; first column is the ground-truth class name.
  std::string to_csv() const;

 private:
  std::size_t n_{0};
  bool has_background_{false};
  std::vector<int> class_ids_;
  std::vector<std::string> names_;
  std::vector<std::int64_t> counts_;
};

/// matched (gt, pred); false positive (background, pred); false negative (gt, background).
/// Intended for class-agnostic match sets so confusions between classes show up.
ConfusionMatrix confusion_matrix(const MatchSet& matches, std::span<const int> class_ids,
                                 std::vector<std::string> names = {});
void accumulate(ConfusionMatrix& cm, const MatchSet& matches);

struct PrecisionRecallF1 {
  double precision{0};
  double recall{0};
  double f1{0};
};

/// 2PR/(P+R), or 0 when P+R = 0.
double f1_score(double precision, double recall);
/// Percent scale; each ratio is 0 when its denominator is 0.
PrecisionRecallF1 precision_recall_f1(std::int64_t tp, std::int64_t fp, std::int64_t fn);

struct AgreementScores {
  double overall_accuracy{0};
  double iou{0};
  double kappa{0};
};

/// OA = trace / total; IoU = mean over (non-background) classes with non-zero
/// support of tp/(tp+fp+fn); kappa = (p_o - p_e)/(1 - p_e) from marginals.
/// Throws UndefinedMetricsError for an empty matrix.
AgreementScores accuracy_iou_kappa(const ConfusionMatrix& cm);

struct CurveRow {
  double threshold;
  double precision;
  double recall;
  double f1;
};

struct PrPoint {
  double recall;
  double precision;
};

struct CurveTable {
  std::vector<CurveRow> rows;  // ascending threshold, one per distinct score
  std::vector<PrPoint> pr;     // ascending recall, interpolated precision

  std::string rows_csv() const;
  std::string pr_csv() const;
};

CurveTable pr_f1_curves(std::span<const ImageSample> samples, const MatchOptions& options);
/// Precision/recall/F1 counting only predictions with score >= threshold.
PrecisionRecallF1 evaluate_at_threshold(std::span<const ImageSample> samples,
                                        const MatchOptions& options, double threshold);

enum class SizeBucket { small, medium, large };

/// small: area <= 32^2; medium: <= 96^2; large otherwise. Throws ContractError for area <= 0.
SizeBucket size_bucket(double area);
const char* to_string(SizeBucket bucket);

struct CountReport {
  std::string label;
  std::int64_t tp{0};
  std::int64_t fp{0};
  std::int64_t fn{0};
  PrecisionRecallF1 scores;
};

struct MetricReport {
  std::int64_t tp{0};
  std::int64_t fp{0};
  std::int64_t fn{0};
  PrecisionRecallF1 scores;
  /// Unset when the class-agnostic confusion matrix is empty.
  std::optional<AgreementScores> agreement;
  std::vector<CountReport> per_class;
  std::vector<CountReport> per_size;
  ConfusionMatrix confusion;
  CurveTable curves;

  /// Percentages rounded to 2 decimals.
  nlohmann::ordered_json to_json() const;
};

struct EvalOptions {
  MatchOptions match;
  bool per_class{false};
  bool size_buckets{false};
};

/// Full evaluation. `class_ids` / `class_names` define confusion-matrix order.
MetricReport evaluate(std::span<const ImageSample> samples, std::span<const int> class_ids,
                      std::vector<std::string> class_names, const EvalOptions& options);

/// Rounds to 2 decimals (half away from zero).
double round2(double value);

}  // namespace soar::metrics
