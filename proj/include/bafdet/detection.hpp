#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafdet/bafpn.hpp"
#include "bafdet/tensor.hpp"

namespace bafdet {

constexpr int kNumClasses = 3;  // crack, finger_interruption, black_core
extern const char* const kClassNames[kNumClasses];
int class_id_from_name(const std::string& name);  // -1 if unknown

/// Axis-aligned box in center form, pixels.
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  double x1() const { return x - 0.5 * w; }
  double y1() const { return y - 0.5 * h; }
  double x2() const { return x + 0.5 * w; }
  double y2() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  static BBox from_corners(double x1, double y1, double x2, double y2);
};

struct Anchor {
  BBox box;
  int level = 2;        // B2..B6
  double ratio = 1.0;   // h/w
};

struct RegressionTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0.0;
};

struct GroundTruth {
  BBox box;
  int class_id = 0;
};

struct LossConfig {
  double lambda = 10.0;
  double n_cls = 256.0;
  double n_reg = 2400.0;
  double iou_positive = 0.7;
  double iou_negative = 0.3;
  int sample_size = 256;
  int max_positive = 128;
};

// ---- geometry -------------------------------------------------------------

double iou(const BBox& a, const BBox& b);
RegressionTarget encode_bbox(const BBox& gt, const BBox& anchor);
BBox decode_bbox(const RegressionTarget& t, const BBox& anchor);
double smooth_l1(double x);
double smooth_l1_grad(double x);
BBox clip_box(const BBox& b, double img_w, double img_h);

// ---- anchors --------------------------------------------------------------

struct LevelExtents {
  int level;       // 2..6
  int rows, cols;  // feature extents (rows = image y, cols = image x)
  int stride;      // relative to the image
};

/// Anchors ordered (level, ratio, w, h) to match the RPN head layout.
/// Areas 32^2..512^2 on levels B2..B6, ratios {0.5, 1, 2}.
std::vector<Anchor> generate_anchors(const std::vector<LevelExtents>& levels);
std::vector<LevelExtents> pyramid_extents(const RefinedPyramid& pyr);

// ---- target assignment ----------------------------------------------------

struct AnchorAssignment {
  std::vector<int> labels;  // 1 positive, 0 negative, -1 ignore
  std::vector<RegressionTarget> targets;  // valid where label == 1
  int positives = 0;
  int negatives = 0;
};

/// IoU-threshold assignment (>=0.7 positive, <0.3 negative, max-IoU anchor
/// per gt forced positive) followed by a seeded 256-anchor minibatch sample.
AnchorAssignment assign_targets(const std::vector<Anchor>& anchors,
                                const std::vector<GroundTruth>& gts,
                                const LossConfig& cfg, std::uint64_t sample_seed);

// ---- losses ---------------------------------------------------------------

struct RpnLossResult {
  Tensor total;      // scalar, differentiable w.r.t. scores and deltas
  double cls_term = 0.0;
  double reg_term = 0.0;
};

/// Joint RPN objective: binary log loss over sampled anchors / N_cls plus
/// lambda * smooth-L1 over positive anchors / N_reg.
RpnLossResult rpn_loss(const Tensor& scores /*A*/, const Tensor& deltas /*A x 4*/,
                       const AnchorAssignment& assign, const LossConfig& cfg);

// ---- NMS ------------------------------------------------------------------

/// Greedy per-class suppression; survivors sorted by descending score
/// (ties broken by input order).
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

// ---- RoI ------------------------------------------------------------------

/// FPN level for a proposal: floor(k0 + log2(sqrt(wh)/224)), clamped to 2..6.
int roi_level(const BBox& proposal, int k0 = 4);

/// Max-pools the proposal's region of one pyramid level into an SxS grid.
/// Differentiable; degenerate proposals clamp to a single cell.
Tensor roi_resize(const Tensor& level_features, const BBox& proposal, int stride,
                  int out_size);

// ---- second stage ---------------------------------------------------------

struct SecondStageOutput {
  Tensor cls_logits;  // K+1
  Tensor deltas;      // 4K
};

/// flatten -> FC -> ReLU -> FC -> ReLU -> {cls-score, bbox-pred}.
class SecondStage {
 public:
  static SecondStage create(int in_features, int hidden, std::uint64_t seed);
  SecondStageOutput forward(const Tensor& roi_features) const;
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

 private:
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  Tensor cls_w_, cls_b_, box_w_, box_b_;
};

/// Shared RPN head over pyramid levels: 3x3 conv + ReLU, then 1x1 heads for
/// per-anchor objectness logits and box deltas.
class RpnHead {
 public:
  static RpnHead create(int width, int anchors_per_cell, std::uint64_t seed);
  struct LevelOutput {
    Tensor logits;  // A x W x H
    Tensor deltas;  // 4A x W x H
  };
  LevelOutput forward(const Tensor& level) const;
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

 private:
  ConvLayer shared_, obj_, box_;
  int anchors_per_cell_ = 3;
};

}  // namespace bafdet
