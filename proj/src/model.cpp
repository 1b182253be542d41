#include "bafdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bafdet {

namespace {

// flattens per-level AxRxC score maps into one [A_total] vector, matching
// the anchor order of generate_anchors (level, ratio, row, col)
Tensor flatten_scores(const std::vector<Tensor>& levels) {
  std::size_t total = 0;
  for (const auto& l : levels) total += l.size();
  std::vector<double> out;
  out.reserve(total);
  for (const auto& l : levels) out.insert(out.end(), l.data().begin(), l.data().end());
  std::vector<Tensor> parents(levels.begin(), levels.end());
  return make_op({static_cast<int>(total)}, std::move(out), std::move(parents),
                 [](TensorNode& n) {
                   std::size_t off = 0;
                   for (auto& p : n.parents) {
                     auto& g = p->ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
                     off += g.size();
                   }
                 });
}

// per-level 4AxRxC delta maps -> [A_total x 4], anchor-major.
// channel layout within a level: 4*a + d
Tensor flatten_deltas(const std::vector<Tensor>& levels) {
  std::size_t total_anchors = 0;
  for (const auto& l : levels) total_anchors += l.size() / 4;
  std::vector<double> out(total_anchors * 4);
  std::size_t off = 0;
  for (const auto& l : levels) {
    const int A = l.dim(0) / 4, R = l.dim(1), C = l.dim(2);
    const auto& src = l.data();
    for (int a = 0; a < A; ++a)
      for (int d = 0; d < 4; ++d) {
        const double* plane = src.data() + (static_cast<std::size_t>(4 * a + d)) * R * C;
        for (int rc = 0; rc < R * C; ++rc)
          out[(off + static_cast<std::size_t>(a) * R * C + rc) * 4 + d] = plane[rc];
      }
    off += static_cast<std::size_t>(A) * R * C;
  }
  std::vector<Tensor> parents(levels.begin(), levels.end());
  return make_op({static_cast<int>(total_anchors), 4}, std::move(out),
                 std::move(parents), [](TensorNode& n) {
                   std::size_t off = 0;
                   for (auto& p : n.parents) {
                     auto& g = p->ensure_grad();
                     const int A = p->shape[0] / 4, R = p->shape[1], C = p->shape[2];
                     for (int a = 0; a < A; ++a)
                       for (int d = 0; d < 4; ++d) {
                         double* plane =
                             g.data() + (static_cast<std::size_t>(4 * a + d)) * R * C;
                         for (int rc = 0; rc < R * C; ++rc)
                           plane[rc] +=
                               n.grad[(off + static_cast<std::size_t>(a) * R * C + rc) * 4 + d];
                       }
                     off += static_cast<std::size_t>(A) * R * C;
                   }
                 });
}

// -log softmax(logits)[label]
Tensor softmax_ce(const Tensor& logits, int label) {
  const auto& x = logits.data();
  const std::size_t n = x.size();
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  const double loss = -(x[static_cast<std::size_t>(label)] - mx - std::log(s));
  return make_op({}, {loss}, {logits}, [label, n](TensorNode& nd) {
    const auto& x = nd.parents[0]->data;
    auto& g = nd.parents[0]->ensure_grad();
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : x) s += std::exp(v - mx);
    for (std::size_t i = 0; i < n; ++i) {
      const double soft = std::exp(x[i] - mx) / s;
      g[i] += nd.grad[0] * (soft - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
  });
}

// smooth-L1 between the gt-class slice of the 4K delta vector and a target
Tensor class_delta_loss(const Tensor& deltas, int class_id, const RegressionTarget& t) {
  const double* d = deltas.data().data() + 4 * class_id;
  const double tgt[4] = {t.tx, t.ty, t.tw, t.th};
  double loss = 0.0;
  for (int i = 0; i < 4; ++i) loss += smooth_l1(d[i] - tgt[i]);
  return make_op({}, {loss}, {deltas},
                 [class_id, t0 = t.tx, t1 = t.ty, t2 = t.tw, t3 = t.th](TensorNode& nd) {
                   auto& g = nd.parents[0]->ensure_grad();
                   const auto& x = nd.parents[0]->data;
                   const double tgt[4] = {t0, t1, t2, t3};
                   for (int i = 0; i < 4; ++i)
                     g[static_cast<std::size_t>(4 * class_id + i)] +=
                         nd.grad[0] *
                         smooth_l1_grad(x[static_cast<std::size_t>(4 * class_id + i)] - tgt[i]);
                 });
}

}  // namespace

BafDetector BafDetector::create(const DetectorConfig& cfg, std::uint64_t seed) {
  BafDetector m;
  m.cfg_ = cfg;
  m.backbone_ = Backbone::create(cfg.backbone, mix_seed(seed, 0xb0));
  m.bafpn_ = Bafpn::create(cfg.bafpn, cfg.backbone.stage_widths, mix_seed(seed, 0xf0));
  m.rpn_head_ = RpnHead::create(cfg.bafpn.width, 3, mix_seed(seed, 0xa0));
  m.second_ = SecondStage::create(cfg.bafpn.width * cfg.roi_size * cfg.roi_size,
                                  cfg.fc_hidden, mix_seed(seed, 0xc0));
  return m;
}

BafpnOutput BafDetector::feature_pyramid(const Tensor& image) const {
  return bafpn_.fuse_variant(backbone_.extract_pyramid(image));
}

std::vector<Detection> BafDetector::proposals(const RefinedPyramid& pyr, double img_w,
                                              double img_h, Tensor* scores_out,
                                              Tensor* deltas_out,
                                              std::vector<Anchor>* anchors_out) const {
  std::vector<Tensor> score_maps, delta_maps;
  std::vector<std::size_t> level_sizes;
  for (const Tensor& l : pyr.levels()) {
    auto o = rpn_head_.forward(l);
    level_sizes.push_back(o.logits.size());
    score_maps.push_back(o.logits);
    delta_maps.push_back(o.deltas);
  }
  Tensor scores = sigmoid(flatten_scores(score_maps));
  Tensor deltas = flatten_deltas(delta_maps);
  std::vector<Anchor> anchors = generate_anchors(pyramid_extents(pyr));
  if (anchors.size() != scores.size())
    throw std::runtime_error("proposals: anchor/score count mismatch");

  std::vector<Detection> cands;
  std::size_t off = 0;
  for (std::size_t lsz : level_sizes) {
    std::vector<std::size_t> idx(lsz);
    std::iota(idx.begin(), idx.end(), off);
    const std::size_t k = std::min<std::size_t>(lsz, static_cast<std::size_t>(cfg_.pre_nms_per_level));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = scores.data()[a], sb = scores.data()[b];
                        return sa != sb ? sa > sb : a < b;
                      });
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t ai = idx[i];
      RegressionTarget t{deltas.data()[4 * ai], deltas.data()[4 * ai + 1],
                         deltas.data()[4 * ai + 2], deltas.data()[4 * ai + 3]};
      BBox b = clip_box(decode_bbox(t, anchors[ai].box), img_w, img_h);
      if (b.w < 1.0 || b.h < 1.0) continue;
      cands.push_back({b, 0, scores.data()[ai]});
    }
    off += lsz;
  }
  std::vector<Detection> kept = nms(cands, cfg_.proposal_nms_iou);
  if (kept.size() > static_cast<std::size_t>(cfg_.post_nms))
    kept.resize(static_cast<std::size_t>(cfg_.post_nms));
  if (scores_out) *scores_out = scores;
  if (deltas_out) *deltas_out = deltas;
  if (anchors_out) *anchors_out = std::move(anchors);
  return kept;
}

Tensor BafDetector::roi_features(const RefinedPyramid& pyr, const BBox& box) const {
  const int level = roi_level(box);
  const auto levels = pyr.levels();
  const Tensor& feat = levels[static_cast<std::size_t>(level - 2)];
  const int stride = 4 << (level - 2);
  return roi_resize(feat, box, stride, cfg_.roi_size);
}

TrainStepLosses BafDetector::training_loss(const Tensor& image,
                                           const std::vector<GroundTruth>& gts,
                                           std::uint64_t step_seed) const {
  const double img_w = image.dim(2), img_h = image.dim(1);
  BafpnOutput pyr = feature_pyramid(image);
  Tensor scores, deltas;
  std::vector<Anchor> anchors;
  std::vector<Detection> props =
      proposals(pyr.pyramid, img_w, img_h, &scores, &deltas, &anchors);

  AnchorAssignment assign =
      assign_targets(anchors, gts, cfg_.rpn, mix_seed(step_seed, 0x5a));
  RpnLossResult rpn = rpn_loss(scores, deltas, assign, cfg_.rpn);

  TrainStepLosses out;
  out.rpn_cls = rpn.cls_term;
  out.rpn_reg = rpn.reg_term;
  out.rpn_positives = assign.positives;
  Tensor total = rpn.total;

  // ---- second stage: sample proposals (+ gt boxes), classify and regress
  struct Roi {
    BBox box;
    int label;  // 0..K-1 defect class, K background
    RegressionTarget target;
  };
  std::vector<Roi> pos, neg;
  auto consider = [&](const BBox& b) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double v = iou(b, gts[j].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(j);
      }
    }
    if (best_gt >= 0 && best >= cfg_.roi_pos_iou) {
      pos.push_back({b, gts[static_cast<std::size_t>(best_gt)].class_id,
                     encode_bbox(gts[static_cast<std::size_t>(best_gt)].box, b)});
    } else {
      neg.push_back({b, kNumClasses, {}});
    }
  };
  for (const auto& p : props) consider(p.box);
  for (const auto& g : gts) consider(clip_box(g.box, img_w, img_h));

  Rng rng(mix_seed(step_seed, 0x2d));
  auto shuffle = [&rng](std::vector<Roi>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.next_u64() % i]);
  };
  shuffle(pos);
  shuffle(neg);
  if (pos.size() > static_cast<std::size_t>(cfg_.roi_max_pos))
    pos.resize(static_cast<std::size_t>(cfg_.roi_max_pos));
  const std::size_t nneg =
      std::min(neg.size(), static_cast<std::size_t>(cfg_.roi_batch) - pos.size());
  neg.resize(nneg);

  const std::size_t nroi = pos.size() + neg.size();
  if (nroi > 0) {
    Tensor cls_sum = Tensor::scalar(0.0);
    Tensor reg_sum = Tensor::scalar(0.0);
    auto run = [&](const Roi& r) {
      SecondStageOutput o = second_.forward(roi_features(pyr.pyramid, r.box));
      cls_sum = add(cls_sum, softmax_ce(o.cls_logits, r.label));
      if (r.label < kNumClasses)
        reg_sum = add(reg_sum, class_delta_loss(o.deltas, r.label, r.target));
    };
    for (const auto& r : pos) run(r);
    for (const auto& r : neg) run(r);
    Tensor cls_loss = scale(cls_sum, 1.0 / static_cast<double>(nroi));
    Tensor reg_loss =
        scale(reg_sum, 1.0 / std::max<std::size_t>(1, pos.size()));
    out.roi_cls = cls_loss.item();
    out.roi_reg = reg_loss.item();
    out.roi_positives = static_cast<int>(pos.size());
    total = add(add(total, cls_loss), reg_loss);
  }
  out.total = total;
  return out;
}

std::vector<Detection> BafDetector::detect(const Tensor& image, double score_thr,
                                           double nms_thr) const {
  const double img_w = image.dim(2), img_h = image.dim(1);
  BafpnOutput pyr = feature_pyramid(image);
  std::vector<Detection> props = proposals(pyr.pyramid, img_w, img_h);
  std::vector<Detection> dets;
  for (const auto& p : props) {
    SecondStageOutput o = second_.forward(roi_features(pyr.pyramid, p.box));
    // softmax over K+1 logits
    const auto& z = o.cls_logits.data();
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    for (int k = 0; k < kNumClasses; ++k) {
      const double score = std::exp(z[static_cast<std::size_t>(k)] - mx) / s;
      if (score < score_thr) continue;
      RegressionTarget t{o.deltas.data()[4 * k], o.deltas.data()[4 * k + 1],
                         o.deltas.data()[4 * k + 2], o.deltas.data()[4 * k + 3]};
      BBox b = clip_box(decode_bbox(t, p.box), img_w, img_h);
      if (b.w < 1.0 || b.h < 1.0) continue;
      dets.push_back({b, k, score});
    }
  }
  return nms(dets, nms_thr);
}

std::vector<Detection> BafDetector::detect(const Tensor& image) const {
  return detect(image, cfg_.score_threshold, cfg_.nms_iou_threshold);
}

std::vector<NamedParam> BafDetector::parameters() const {
  std::vector<NamedParam> out;
  backbone_.collect("backbone", out);
  bafpn_.collect("bafpn", out);
  rpn_head_.collect("rpn", out);
  second_.collect("second_stage", out);
  return out;
}

std::size_t BafDetector::parameter_count() const {
  return backbone_.parameter_count() + bafpn_.parameter_count() +
         rpn_head_.parameter_count() + second_.parameter_count();
}

}  // namespace bafdet
