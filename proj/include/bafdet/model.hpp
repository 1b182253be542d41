#pragma once

#include <cstdint>
#include <vector>

#include "bafdet/backbone.hpp"
#include "bafdet/bafpn.hpp"
#include "bafdet/detection.hpp"

namespace bafdet {

struct DetectorConfig {
  BackboneConfig backbone;
  BafpnConfig bafpn;
  int roi_size = 7;
  int fc_hidden = 256;
  int pre_nms_per_level = 256;
  int post_nms = 64;
  double proposal_nms_iou = 0.7;
  LossConfig rpn;
  int roi_batch = 32;      // second-stage proposals sampled per image
  int roi_max_pos = 16;
  double roi_pos_iou = 0.5;
  double score_threshold = 0.3;   // SHOW_SCORE_THRSHOLD
  double nms_iou_threshold = 0.5; // NMS_IOU_THRESHOLD
};

struct TrainStepLosses {
  Tensor total;
  double rpn_cls = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0;
  int rpn_positives = 0, roi_positives = 0;
};

/// Backbone + BAFPN + BAFPN-RPN + RoI second stage.
class BafDetector {
 public:
  static BafDetector create(const DetectorConfig& cfg, std::uint64_t seed);

  BafpnOutput feature_pyramid(const Tensor& image) const;

  /// Joint loss for one image (RPN objective + second-stage objective).
  TrainStepLosses training_loss(const Tensor& image,
                                const std::vector<GroundTruth>& gts,
                                std::uint64_t step_seed) const;

  std::vector<Detection> detect(const Tensor& image, double score_thr,
                                double nms_thr) const;
  std::vector<Detection> detect(const Tensor& image) const;

  /// Class-agnostic RPN proposals for an already-computed pyramid.
  std::vector<Detection> proposals(const RefinedPyramid& pyr, double img_w,
                                   double img_h, Tensor* scores_out = nullptr,
                                   Tensor* deltas_out = nullptr,
                                   std::vector<Anchor>* anchors_out = nullptr) const;

  std::vector<NamedParam> parameters() const;
  std::size_t parameter_count() const;
  const DetectorConfig& config() const { return cfg_; }
  const Bafpn& pyramid_net() const { return bafpn_; }

 private:
  Tensor roi_features(const RefinedPyramid& pyr, const BBox& box) const;

  DetectorConfig cfg_;
  Backbone backbone_;
  Bafpn bafpn_;
  RpnHead rpn_head_;
  SecondStage second_;
};

}  // namespace bafdet
