#include "bafdet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bafdet {

const char* const kClassNames[kNumClasses] = {"crack", "finger_interruption",
                                              "black_core"};

int class_id_from_name(const std::string& name) {
  for (int k = 0; k < kNumClasses; ++k)
    if (name == kClassNames[k]) return k;
  return -1;
}

BBox BBox::from_corners(double x1, double y1, double x2, double y2) {
  return BBox{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

RegressionTarget encode_bbox(const BBox& gt, const BBox& anchor) {
  if (anchor.w <= 0 || anchor.h <= 0 || gt.w <= 0 || gt.h <= 0)
    throw std::runtime_error("encode_bbox: non-positive box extents");
  RegressionTarget t;
  t.tx = (gt.x - anchor.x) / anchor.w;
  t.ty = (gt.y - anchor.y) / anchor.h;
  t.tw = std::log(gt.w / anchor.w);
  t.th = std::log(gt.h / anchor.h);
  return t;
}

BBox decode_bbox(const RegressionTarget& t, const BBox& anchor) {
  BBox b;
  b.x = anchor.x + t.tx * anchor.w;
  b.y = anchor.y + t.ty * anchor.h;
  b.w = anchor.w * std::exp(t.tw);
  b.h = anchor.h * std::exp(t.th);
  return b;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

BBox clip_box(const BBox& b, double img_w, double img_h) {
  const double x1 = std::clamp(b.x1(), 0.0, img_w);
  const double y1 = std::clamp(b.y1(), 0.0, img_h);
  const double x2 = std::clamp(b.x2(), 0.0, img_w);
  const double y2 = std::clamp(b.y2(), 0.0, img_h);
  return BBox::from_corners(x1, y1, x2, y2);
}

// ---- anchors --------------------------------------------------------------

static double level_area(int level) {
  // 32^2 on B2 up to 512^2 on B6
  const double base = 32.0 * std::pow(2.0, level - 2);
  return base * base;
}

std::vector<Anchor> generate_anchors(const std::vector<LevelExtents>& levels) {
  static const double kRatios[3] = {0.5, 1.0, 2.0};
  std::vector<Anchor> anchors;
  for (const auto& lv : levels) {
    const double area = level_area(lv.level);
    const double s = std::sqrt(area);
    for (double ratio : kRatios) {
      const double w = s / std::sqrt(ratio);
      const double h = s * std::sqrt(ratio);  // ratio = h/w, area preserved
      for (int r = 0; r < lv.rows; ++r) {
        for (int c = 0; c < lv.cols; ++c) {
          Anchor a;
          a.box = BBox{(c + 0.5) * lv.stride, (r + 0.5) * lv.stride, w, h};
          a.level = lv.level;
          a.ratio = ratio;
          anchors.push_back(a);
        }
      }
    }
  }
  return anchors;
}

std::vector<LevelExtents> pyramid_extents(const RefinedPyramid& pyr) {
  std::vector<LevelExtents> out;
  const Tensor* levels[5] = {&pyr.b2, &pyr.b3, &pyr.b4, &pyr.b5, &pyr.b6};
  int stride = 4;
  for (int i = 0; i < 5; ++i, stride *= 2)
    out.push_back({i + 2, levels[i]->dim(1), levels[i]->dim(2), stride});
  return out;
}

// ---- target assignment ----------------------------------------------------

AnchorAssignment assign_targets(const std::vector<Anchor>& anchors,
                                const std::vector<GroundTruth>& gts,
                                const LossConfig& cfg, std::uint64_t sample_seed) {
  if (anchors.empty()) throw std::invalid_argument("assign_targets: no anchors");
  const std::size_t na = anchors.size(), ng = gts.size();
  AnchorAssignment out;
  out.labels.assign(na, 0);
  out.targets.assign(na, {});

  std::vector<int> best_gt(na, -1);
  if (ng > 0) {
    std::vector<double> best_iou(na, 0.0);
    std::vector<double> gt_max(ng, 0.0);
    std::vector<std::vector<double>> m(na, std::vector<double>(ng));
    for (std::size_t i = 0; i < na; ++i) {
      for (std::size_t j = 0; j < ng; ++j) {
        const double v = iou(anchors[i].box, gts[j].box);
        m[i][j] = v;
        if (v > best_iou[i]) {
          best_iou[i] = v;
          best_gt[i] = static_cast<int>(j);
        }
        gt_max[j] = std::max(gt_max[j], v);
      }
    }
    for (std::size_t i = 0; i < na; ++i) {
      if (best_iou[i] >= cfg.iou_positive)
        out.labels[i] = 1;
      else if (best_iou[i] >= cfg.iou_negative)
        out.labels[i] = -1;
    }
    // every gt keeps its max-IoU anchor(s)
    for (std::size_t j = 0; j < ng; ++j) {
      if (gt_max[j] <= 0.0) continue;
      for (std::size_t i = 0; i < na; ++i) {
        if (m[i][j] >= gt_max[j] - 1e-9) {
          out.labels[i] = 1;
          if (best_gt[i] < 0 || m[i][static_cast<std::size_t>(best_gt[i])] < m[i][j])
            best_gt[i] = static_cast<int>(j);
        }
      }
    }
    for (std::size_t i = 0; i < na; ++i)
      if (out.labels[i] == 1)
        out.targets[i] = encode_bbox(gts[static_cast<std::size_t>(best_gt[i])].box,
                                     anchors[i].box);
  }

  // minibatch sample: up to max_positive positives, rest negatives
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < na; ++i) {
    if (out.labels[i] == 1)
      pos.push_back(i);
    else if (out.labels[i] == 0)
      neg.push_back(i);
  }
  Rng rng(sample_seed);
  auto shuffle = [&rng](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.next_u64() % i]);
  };
  shuffle(pos);
  shuffle(neg);
  const std::size_t keep_pos = std::min<std::size_t>(pos.size(),
                                                     static_cast<std::size_t>(cfg.max_positive));
  const std::size_t keep_neg =
      std::min(neg.size(), static_cast<std::size_t>(cfg.sample_size) - keep_pos);
  for (auto& l : out.labels)
    if (l != -1) l = -1;  // everything unsampled is ignored
  for (std::size_t i = 0; i < keep_pos; ++i) out.labels[pos[i]] = 1;
  for (std::size_t i = 0; i < keep_neg; ++i) out.labels[neg[i]] = 0;
  out.positives = static_cast<int>(keep_pos);
  out.negatives = static_cast<int>(keep_neg);
  return out;
}

// ---- RPN loss -------------------------------------------------------------

RpnLossResult rpn_loss(const Tensor& scores, const Tensor& deltas,
                       const AnchorAssignment& assign, const LossConfig& cfg) {
  const std::size_t na = assign.labels.size();
  if (scores.size() != na || deltas.size() != 4 * na)
    throw std::invalid_argument("rpn_loss: prediction/target lists misaligned");
  constexpr double kEps = 1e-12;

  double cls = 0.0, reg = 0.0;
  const auto& p = scores.data();
  const auto& t = deltas.data();
  for (std::size_t i = 0; i < na; ++i) {
    const int label = assign.labels[i];
    if (label < 0) continue;
    const double pc = std::clamp(p[i], kEps, 1.0 - kEps);
    cls += label == 1 ? -std::log(pc) : -std::log(1.0 - pc);
    if (label == 1) {
      const double* ti = t.data() + 4 * i;
      const auto& tt = assign.targets[i];
      reg += smooth_l1(ti[0] - tt.tx) + smooth_l1(ti[1] - tt.ty) +
             smooth_l1(ti[2] - tt.tw) + smooth_l1(ti[3] - tt.th);
    }
  }
  RpnLossResult r;
  r.cls_term = cls / cfg.n_cls;
  r.reg_term = cfg.lambda * reg / cfg.n_reg;
  auto labels = assign.labels;
  auto targets = assign.targets;
  r.total = make_op(
      {}, {r.cls_term + r.reg_term}, {scores, deltas},
      [labels = std::move(labels), targets = std::move(targets), cfg](TensorNode& n) {
        const double g = n.grad[0];
        auto& gp = n.parents[0]->ensure_grad();
        auto& gt = n.parents[1]->ensure_grad();
        const auto& p = n.parents[0]->data;
        const auto& t = n.parents[1]->data;
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const int label = labels[i];
          if (label < 0) continue;
          if (p[i] > kEps && p[i] < 1.0 - kEps) {
            const double d = label == 1 ? -1.0 / p[i] : 1.0 / (1.0 - p[i]);
            gp[i] += g * d / cfg.n_cls;
          }
          if (label == 1) {
            const double* ti = t.data() + 4 * i;
            const auto& tt = targets[i];
            const double w = g * cfg.lambda / cfg.n_reg;
            gt[4 * i + 0] += w * smooth_l1_grad(ti[0] - tt.tx);
            gt[4 * i + 1] += w * smooth_l1_grad(ti[1] - tt.ty);
            gt[4 * i + 2] += w * smooth_l1_grad(ti[2] - tt.tw);
            gt[4 * i + 3] += w * smooth_l1_grad(ti[3] - tt.th);
          }
        }
      });
  return r;
}

// ---- NMS ------------------------------------------------------------------

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&dets](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t oi : order) {
    const Detection& d = dets[oi];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// ---- RoI ------------------------------------------------------------------

int roi_level(const BBox& proposal, int k0) {
  const double s = std::sqrt(std::max(proposal.area(), 1.0));
  const int k = k0 + static_cast<int>(std::floor(std::log2(s / 224.0)));
  return std::clamp(k, 2, 6);
}

Tensor roi_resize(const Tensor& level_features, const BBox& proposal, int stride,
                  int out_size) {
  const int C = level_features.dim(0), R = level_features.dim(1),
            Cc = level_features.dim(2);
  const int S = out_size;
  // feature-cell extent of the proposal, at least one cell
  double r1 = proposal.y1() / stride, r2 = proposal.y2() / stride;
  double c1 = proposal.x1() / stride, c2 = proposal.x2() / stride;
  r1 = std::clamp(r1, 0.0, static_cast<double>(R - 1));
  c1 = std::clamp(c1, 0.0, static_cast<double>(Cc - 1));
  r2 = std::clamp(r2, r1 + 1.0, static_cast<double>(R));
  c2 = std::clamp(c2, c1 + 1.0, static_cast<double>(Cc));

  std::vector<double> out(static_cast<std::size_t>(C) * S * S);
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& src = level_features.data();
  for (int i = 0; i < S; ++i) {
    int rs = static_cast<int>(std::floor(r1 + (r2 - r1) * i / S));
    int re = static_cast<int>(std::ceil(r1 + (r2 - r1) * (i + 1) / S));
    rs = std::clamp(rs, 0, R - 1);
    re = std::clamp(re, rs + 1, R);
    for (int j = 0; j < S; ++j) {
      int cs = static_cast<int>(std::floor(c1 + (c2 - c1) * j / S));
      int ce = static_cast<int>(std::ceil(c1 + (c2 - c1) * (j + 1) / S));
      cs = std::clamp(cs, 0, Cc - 1);
      ce = std::clamp(ce, cs + 1, Cc);
      for (int ch = 0; ch < C; ++ch) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t besti = 0;
        for (int r = rs; r < re; ++r) {
          for (int c = cs; c < ce; ++c) {
            const std::size_t idx = (static_cast<std::size_t>(ch) * R + r) * Cc + c;
            if (src[idx] > best) {
              best = src[idx];
              besti = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * S + i) * S + j;
        out[o] = best;
        (*arg)[o] = besti;
      }
    }
  }
  return make_op({C, S, S}, std::move(out), {level_features}, [arg](TensorNode& n) {
    auto& g = n.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < n.grad.size(); ++o) g[(*arg)[o]] += n.grad[o];
  });
}

// ---- second stage ---------------------------------------------------------

SecondStage SecondStage::create(int in_features, int hidden, std::uint64_t seed) {
  SecondStage s;
  s.fc1_w_ = Tensor({hidden, in_features});
  s.fc1_b_ = Tensor({hidden});
  s.fc2_w_ = Tensor({hidden, hidden});
  s.fc2_b_ = Tensor({hidden});
  s.cls_w_ = Tensor({kNumClasses + 1, hidden});
  s.cls_b_ = Tensor({kNumClasses + 1});
  s.box_w_ = Tensor({4 * kNumClasses, hidden});
  s.box_b_ = Tensor({4 * kNumClasses});
  init_xavier(s.fc1_w_, in_features, hidden, mix_seed(seed, 1));
  init_xavier(s.fc2_w_, hidden, hidden, mix_seed(seed, 2));
  init_xavier(s.cls_w_, hidden, kNumClasses + 1, mix_seed(seed, 3));
  init_xavier(s.box_w_, hidden, 4 * kNumClasses, mix_seed(seed, 4));
  return s;
}

SecondStageOutput SecondStage::forward(const Tensor& roi_features) const {
  Tensor x = reshape(roi_features, {static_cast<int>(roi_features.size())});
  x = relu(linear(x, fc1_w_, fc1_b_));
  x = relu(linear(x, fc2_w_, fc2_b_));
  SecondStageOutput o;
  o.cls_logits = linear(x, cls_w_, cls_b_);
  o.deltas = linear(x, box_w_, box_b_);
  return o;
}

std::size_t SecondStage::parameter_count() const {
  return fc1_w_.size() + fc1_b_.size() + fc2_w_.size() + fc2_b_.size() +
         cls_w_.size() + cls_b_.size() + box_w_.size() + box_b_.size();
}

void SecondStage::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "/fc1_w", fc1_w_});
  out.push_back({prefix + "/fc1_b", fc1_b_});
  out.push_back({prefix + "/fc2_w", fc2_w_});
  out.push_back({prefix + "/fc2_b", fc2_b_});
  out.push_back({prefix + "/cls_w", cls_w_});
  out.push_back({prefix + "/cls_b", cls_b_});
  out.push_back({prefix + "/box_w", box_w_});
  out.push_back({prefix + "/box_b", box_b_});
}

// ---- RPN head -------------------------------------------------------------

RpnHead RpnHead::create(int width, int anchors_per_cell, std::uint64_t seed) {
  RpnHead h;
  h.anchors_per_cell_ = anchors_per_cell;
  h.shared_ = ConvLayer::create(width, width, 3, 1, 1, mix_seed(seed, 1));
  h.obj_ = ConvLayer::create(width, anchors_per_cell, 1, 1, 0, mix_seed(seed, 2));
  h.box_ = ConvLayer::create(width, 4 * anchors_per_cell, 1, 1, 0, mix_seed(seed, 3));
  return h;
}

RpnHead::LevelOutput RpnHead::forward(const Tensor& level) const {
  Tensor x = relu(shared_.forward(level));
  return LevelOutput{obj_.forward(x), box_.forward(x)};
}

std::size_t RpnHead::parameter_count() const {
  return shared_.parameter_count() + obj_.parameter_count() + box_.parameter_count();
}

void RpnHead::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  shared_.collect(prefix + "/shared", out);
  obj_.collect(prefix + "/obj", out);
  box_.collect(prefix + "/box", out);
}

}  // namespace bafdet
