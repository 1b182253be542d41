#pragma once

#include <array>
#include <string>
#include <vector>

#include "bafdet/detection.hpp"

namespace bafdet {

struct ClassificationCounts {
  long tp = 0, fp = 0, fn = 0;
};

struct PRF {
  double precision = 0, recall = 0, f_measure = 0;  // percentages
  bool degenerate = false;  // a zero denominator was defined as 0
};

/// Eqs. P = TP/(TP+FP)*100, R = TP/(TP+FN)*100, F = 2PR/(P+R).
PRF precision_recall_f(const ClassificationCounts& c);

/// Percentage of missed instances; the confusion-matrix rate readout.
double miss_rate_percent(long misses, long total);

struct PRPoint {
  double recall = 0, precision = 0, score = 0;
};

struct PRCurve {
  std::vector<PRPoint> points;  // swept over score threshold, recall ascending
  double ap = 0.0;              // area under the precision envelope
};

struct ImageDetections {
  std::string image_id;
  std::vector<Detection> dets;
};

struct ImageGroundTruth {
  std::string image_id;
  std::vector<GroundTruth> gts;
};

struct EvalResult {
  std::array<double, kNumClasses> ap{};
  double map = 0.0;
  double miou = 0.0;  // mean IoU over all true-positive matches
  std::array<PRCurve, kNumClasses> curves;
  long matches = 0;
};

/// Greedy score-ordered matching against unmatched ground truth within class
/// at IoU >= iou_thr; AP by continuous all-points interpolation.
EvalResult evaluate_detections(const std::vector<ImageDetections>& dets,
                               const std::vector<ImageGroundTruth>& gts,
                               double iou_thr = 0.5);

struct ConfusionMatrix {
  // rows/cols: crack, finger_interruption, black_core, defect-free
  std::array<std::array<long, kNumClasses + 1>, kNumClasses + 1> counts{};
  std::array<double, kNumClasses> miss_rate_pct{};
};

/// Instance-level confusion for defect rows (a gt instance is assigned the
/// class of its best matching detection at score >= score_thr, or defect-free
/// when unmatched); image-level for the defect-free row.
ConfusionMatrix confusion(const std::vector<ImageDetections>& dets,
                          const std::vector<ImageGroundTruth>& gts,
                          double score_thr, double iou_thr = 0.5);

}  // namespace bafdet
