// SPDX-License-Identifier: Apache-2.0

#include "soar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

#include "soar/errors.hpp"

namespace soar::metrics {
namespace {

auto box_key(const Box& b) { return std::tie(b.x_min, b.y_min, b.x_max, b.y_max); }

std::vector<std::size_t> prediction_order(std::span<const Detection> predictions) {
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = predictions[a];
    const auto& pb = predictions[b];
    if (pa.score != pb.score) return pa.score > pb.score;
    return std::tuple_cat(box_key(pa.bbox), std::tie(pa.class_id)) <
           std::tuple_cat(box_key(pb.bbox), std::tie(pb.class_id));
  });
  return order;
}

std::vector<std::size_t> ground_truth_order(std::span<const GroundTruth> gts) {
  std::vector<std::size_t> order(gts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ga = gts[a];
    const auto& gb = gts[b];
    return std::tuple_cat(std::tie(ga.class_id), box_key(ga.bbox), std::tie(ga.difficult)) <
           std::tuple_cat(std::tie(gb.class_id), box_key(gb.bbox), std::tie(gb.difficult));
  });
  return order;
}

double percent(std::int64_t num, std::int64_t den) {
  return den > 0 ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

nlohmann::ordered_json count_report_json(const CountReport& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["tp"] = r.tp;
  j["fp"] = r.fp;
  j["fn"] = r.fn;
  j["precision"] = round2(r.scores.precision);
  j["recall"] = round2(r.scores.recall);
  j["f1"] = round2(r.scores.f1);
  return j;
}

std::string format_number(double v) {
  std::ostringstream ss;
  ss.precision(10);
  ss << v;
  return ss.str();
}

}  // namespace

MatchSet match_detections(std::span<const Detection> predictions,
                          std::span<const GroundTruth> ground_truth, const MatchOptions& options) {
  if (!(options.iou_threshold > 0.0 && options.iou_threshold <= 1.0)) {
    throw ContractError("match_detections: iou_threshold must lie in (0, 1]");
  }
  const auto gt_order = ground_truth_order(ground_truth);
  std::vector<bool> taken(ground_truth.size(), false);
  MatchSet result;

  for (std::size_t p : prediction_order(predictions)) {
    const auto& pred = predictions[p];
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g : gt_order) {
      if (taken[g]) continue;
      const auto& gt = ground_truth[g];
      if (options.class_mode == ClassMode::aware && gt.class_id != pred.class_id) continue;
      const double iou = iou_hbb(pred.bbox, gt.bbox);
      if (iou >= options.iou_threshold && iou > best_iou) {
        best = g;
        best_iou = iou;
      }
    }
    if (!best) {
      result.false_positives.push_back({p, pred.class_id});
      continue;
    }
    taken[*best] = true;
    const auto& gt = ground_truth[*best];
    if (options.ignore_difficult && gt.difficult) {
      result.ignored_predictions.push_back(p);
    } else {
      result.matches.push_back({p, *best, best_iou, pred.class_id, gt.class_id});
    }
  }
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    if (taken[g]) continue;
    if (options.ignore_difficult && ground_truth[g].difficult) continue;
    result.false_negatives.push_back({g, ground_truth[g].class_id});
  }
  return result;
}

ConfusionMatrix::ConfusionMatrix(std::vector<int> class_ids, std::vector<std::string> names)
    : n_(class_ids.size() + 1),
      has_background_(true),
      class_ids_(std::move(class_ids)),
      names_(std::move(names)),
      counts_(n_ * n_, 0) {
  if (names_.empty()) {
    for (int id : class_ids_) names_.push_back(std::to_string(id));
  }
  if (names_.size() != class_ids_.size()) {
    throw ContractError("ConfusionMatrix: one name per class id required");
  }
  names_.push_back("background");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t n, std::vector<std::int64_t> counts) {
  if (n == 0 || counts.size() != n * n) {
    throw ContractError("ConfusionMatrix::from_counts: expected n*n counts");
  }
  if (std::any_of(counts.begin(), counts.end(), [](std::int64_t c) { return c < 0; })) {
    throw ContractError("ConfusionMatrix::from_counts: negative count");
  }
  ConfusionMatrix cm;
  cm.n_ = n;
  cm.counts_ = std::move(counts);
  for (std::size_t i = 0; i < n; ++i) {
    cm.class_ids_.push_back(static_cast<int>(i));
    cm.names_.push_back(std::to_string(i));
  }
  return cm;
}

std::int64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

std::size_t ConfusionMatrix::index_of(int class_id) const {
  const auto it = std::find(class_ids_.begin(), class_ids_.end(), class_id);
  if (it == class_ids_.end()) {
    throw ContractError("ConfusionMatrix: unknown class id " + std::to_string(class_id));
  }
  return static_cast<std::size_t>(it - class_ids_.begin());
}

void ConfusionMatrix::add(std::size_t row, std::size_t col, std::int64_t count) {
  if (row >= n_ || col >= n_) throw ContractError("ConfusionMatrix::add: index out of range");
  counts_[row * n_ + col] += count;
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "gt\\pred";
  for (const auto& name : names_) out += "," + name;
  out += '\n';
  for (std::size_t r = 0; r < n_; ++r) {
    out += names_[r];
    for (std::size_t c = 0; c < n_; ++c) out += "," + std::to_string(at(r, c));
    out += '\n';
  }
  return out;
}

void accumulate(ConfusionMatrix& cm, const MatchSet& matches) {
  if (!cm.has_background()) {
    throw ContractError("confusion_matrix: detection matrices need a background class");
  }
  for (const auto& m : matches.matches) {
    cm.add(cm.index_of(m.ground_truth_class), cm.index_of(m.prediction_class));
  }
  for (const auto& fp : matches.false_positives) cm.add(cm.background(), cm.index_of(fp.class_id));
  for (const auto& fn : matches.false_negatives) cm.add(cm.index_of(fn.class_id), cm.background());
}

ConfusionMatrix confusion_matrix(const MatchSet& matches, std::span<const int> class_ids,
                                 std::vector<std::string> names) {
  ConfusionMatrix cm(std::vector<int>(class_ids.begin(), class_ids.end()), std::move(names));
  accumulate(cm, matches);
  return cm;
}

double f1_score(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0 ? 2.0 * precision * recall / sum : 0.0;
}

PrecisionRecallF1 precision_recall_f1(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw ContractError("precision_recall_f1: negative count");
  PrecisionRecallF1 r;
  r.precision = percent(tp, tp + fp);
  r.recall = percent(tp, tp + fn);
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

AgreementScores accuracy_iou_kappa(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw UndefinedMetricsError("accuracy_iou_kappa: confusion matrix is empty");
  const std::size_t n = cm.size();
  std::vector<double> rows(n, 0.0), cols(n, 0.0);
  double trace = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const auto v = static_cast<double>(cm.at(r, c));
      rows[r] += v;
      cols[c] += v;
      if (r == c) trace += v;
    }
  }
  const double t = static_cast<double>(total);
  AgreementScores s;
  s.overall_accuracy = 100.0 * trace / t;

  const std::size_t classes = cm.has_background() ? n - 1 : n;
  double iou_sum = 0;
  std::size_t supported = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const double tp = static_cast<double>(cm.at(k, k));
    const double den = rows[k] + cols[k] - tp;
    if (den > 0) {
      iou_sum += tp / den;
      ++supported;
    }
  }
  s.iou = supported ? 100.0 * iou_sum / static_cast<double>(supported) : 0.0;

  const double p_o = trace / t;
  double p_e = 0;
  for (std::size_t k = 0; k < n; ++k) p_e += (rows[k] / t) * (cols[k] / t);
  // p_e == 1 only when all mass sits in one diagonal cell
  s.kappa = p_e >= 1.0 ? 100.0 : 100.0 * (p_o - p_e) / (1.0 - p_e);
  return s;
}

CurveTable pr_f1_curves(std::span<const ImageSample> samples, const MatchOptions& options) {
  struct Scored {
    double score;
    int outcome;  // 1 hit, 0 false alarm
  };
  std::vector<Scored> scored;
  std::int64_t positives = 0;
  for (const auto& s : samples) {
    const auto m = match_detections(s.predictions, s.ground_truth, options);
    positives += static_cast<std::int64_t>(m.matches.size() + m.false_negatives.size());
    for (const auto& pair : m.matches) scored.push_back({s.predictions[pair.prediction].score, 1});
    for (const auto& fp : m.false_positives) scored.push_back({s.predictions[fp.index].score, 0});
  }
  std::sort(scored.begin(), scored.end(),
            [](const Scored& a, const Scored& b) { return a.score > b.score; });

  CurveTable table;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < scored.size();) {
    const double threshold = scored[i].score;
    for (; i < scored.size() && scored[i].score == threshold; ++i) {
      (scored[i].outcome ? tp : fp) += 1;
    }
    const auto prf = precision_recall_f1(tp, fp, positives - tp);
    table.rows.push_back({threshold, prf.precision, prf.recall, prf.f1});
  }
  // rows were produced by descending threshold, so recall is non-decreasing here
  for (const auto& row : table.rows) {
    if (!table.pr.empty() && table.pr.back().recall == row.recall) {
      table.pr.back().precision = std::max(table.pr.back().precision, row.precision);
    } else {
      table.pr.push_back({row.recall, row.precision});
    }
  }
  for (std::size_t i = table.pr.size(); i-- > 1;) {
    table.pr[i - 1].precision = std::max(table.pr[i - 1].precision, table.pr[i].precision);
  }
  std::reverse(table.rows.begin(), table.rows.end());
  return table;
}

PrecisionRecallF1 evaluate_at_threshold(std::span<const ImageSample> samples,
                                        const MatchOptions& options, double threshold) {
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : samples) {
    std::vector<Detection> kept;
    for (const auto& p : s.predictions) {
      if (p.score >= threshold) kept.push_back(p);
    }
    const auto m = match_detections(kept, s.ground_truth, options);
    tp += static_cast<std::int64_t>(m.matches.size());
    fp += static_cast<std::int64_t>(m.false_positives.size());
    fn += static_cast<std::int64_t>(m.false_negatives.size());
  }
  return precision_recall_f1(tp, fp, fn);
}

std::string CurveTable::rows_csv() const {
  std::string out = "threshold,precision,recall,f1\n";
  for (const auto& r : rows) {
    out += format_number(r.threshold) + "," + format_number(r.precision) + "," +
           format_number(r.recall) + "," + format_number(r.f1) + "\n";
  }
  return out;
}

std::string CurveTable::pr_csv() const {
  std::string out = "recall,precision\n";
  for (const auto& p : pr) out += format_number(p.recall) + "," + format_number(p.precision) + "\n";
  return out;
}

SizeBucket size_bucket(double area) {
  if (!(area > 0)) throw ContractError("size_bucket: area must be positive");
  if (area <= 32.0 * 32.0) return SizeBucket::small;
  if (area <= 96.0 * 96.0) return SizeBucket::medium;
  return SizeBucket::large;
}

const char* to_string(SizeBucket bucket) {
  switch (bucket) {
    case SizeBucket::small:
      return "small";
    case SizeBucket::medium:
      return "medium";
    case SizeBucket::large:
      return "large";
  }
  return "unknown";
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

MetricReport evaluate(std::span<const ImageSample> samples, std::span<const int> class_ids,
                      std::vector<std::string> class_names, const EvalOptions& options) {
  MetricReport report;
  report.confusion = ConfusionMatrix(std::vector<int>(class_ids.begin(), class_ids.end()),
                                     std::move(class_names));
  std::vector<CountReport> per_class(class_ids.size());
  for (std::size_t k = 0; k < class_ids.size(); ++k) {
    per_class[k].label = report.confusion.names()[k];
  }
  std::vector<CountReport> per_size(3);
  for (auto b : {SizeBucket::small, SizeBucket::medium, SizeBucket::large}) {
    per_size[static_cast<int>(b)].label = to_string(b);
  }
  auto size_of = [](double area) { return static_cast<int>(size_bucket(area)); };

  MatchOptions agnostic = options.match;
  agnostic.class_mode = ClassMode::agnostic;
  for (const auto& s : samples) {
    const auto m = match_detections(s.predictions, s.ground_truth, options.match);
    report.tp += static_cast<std::int64_t>(m.matches.size());
    report.fp += static_cast<std::int64_t>(m.false_positives.size());
    report.fn += static_cast<std::int64_t>(m.false_negatives.size());
    for (const auto& pair : m.matches) {
      per_class[report.confusion.index_of(pair.ground_truth_class)].tp++;
      per_size[size_of(s.ground_truth[pair.ground_truth].bucket_area())].tp++;
    }
    for (const auto& fp : m.false_positives) {
      per_class[report.confusion.index_of(fp.class_id)].fp++;
      per_size[size_of(s.predictions[fp.index].bbox.area())].fp++;
    }
    for (const auto& fn : m.false_negatives) {
      per_class[report.confusion.index_of(fn.class_id)].fn++;
      per_size[size_of(s.ground_truth[fn.index].bucket_area())].fn++;
    }
    accumulate(report.confusion, match_detections(s.predictions, s.ground_truth, agnostic));
  }
  report.scores = precision_recall_f1(report.tp, report.fp, report.fn);
  if (report.confusion.total() > 0) report.agreement = accuracy_iou_kappa(report.confusion);
  if (options.per_class) {
    for (auto& c : per_class) c.scores = precision_recall_f1(c.tp, c.fp, c.fn);
    report.per_class = std::move(per_class);
  }
  if (options.size_buckets) {
    for (auto& c : per_size) c.scores = precision_recall_f1(c.tp, c.fp, c.fn);
    report.per_size = std::move(per_size);
  }
  report.curves = pr_f1_curves(samples, options.match);
  return report;
}

nlohmann::ordered_json MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["tp"] = tp;
  j["fp"] = fp;
  j["fn"] = fn;
  j["precision"] = round2(scores.precision);
  j["recall"] = round2(scores.recall);
  j["f1"] = round2(scores.f1);
  if (agreement) {
    j["overall_accuracy"] = round2(agreement->overall_accuracy);
    j["iou"] = round2(agreement->iou);
    j["kappa"] = round2(agreement->kappa);
  } else {
    j["overall_accuracy"] = nullptr;
    j["iou"] = nullptr;
    j["kappa"] = nullptr;
  }
  if (!per_class.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : per_class) arr.push_back(count_report_json(c));
    j["per_class"] = std::move(arr);
  }
  if (!per_size.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : per_size) arr.push_back(count_report_json(c));
    j["size_buckets"] = std::move(arr);
  }
  return j;
}

}  // namespace soar::metrics
