#include "bafdet/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace bafdet {

PRF precision_recall_f(const ClassificationCounts& c) {
  PRF r;
  if (c.tp + c.fp == 0 || c.tp + c.fn == 0) {
    r.degenerate = true;
    return r;
  }
  r.precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  r.recall = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.f_measure = (r.precision + r.recall) > 0.0
                    ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                    : 0.0;
  return r;
}

double miss_rate_percent(long misses, long total) {
  if (total <= 0) return 0.0;
  return 100.0 * static_cast<double>(misses) / static_cast<double>(total);
}

namespace {

struct FlatDet {
  std::size_t image = 0;
  double score = 0;
  BBox box;
};

double envelope_area(std::vector<double> rec, std::vector<double> prec) {
  // precision envelope from the right, then area over recall
  std::vector<double> mrec{0.0};
  mrec.insert(mrec.end(), rec.begin(), rec.end());
  mrec.push_back(rec.empty() ? 0.0 : rec.back());
  std::vector<double> mpre{0.0};
  mpre.insert(mpre.end(), prec.begin(), prec.end());
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i)
    mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

}  // namespace

EvalResult evaluate_detections(const std::vector<ImageDetections>& dets,
                               const std::vector<ImageGroundTruth>& gts,
                               double iou_thr) {
  std::map<std::string, std::size_t> image_index;
  for (std::size_t i = 0; i < gts.size(); ++i) image_index[gts[i].image_id] = i;

  EvalResult out;
  double iou_sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    std::vector<FlatDet> flat;
    for (const auto& im : dets) {
      auto it = image_index.find(im.image_id);
      if (it == image_index.end())
        throw std::runtime_error("evaluate_detections: unknown image id " + im.image_id);
      for (const auto& d : im.dets) {
        if (d.class_id < 0 || d.class_id >= kNumClasses)
          throw std::runtime_error("evaluate_detections: unknown class id");
        if (d.class_id == k) flat.push_back({it->second, d.score, d.box});
      }
    }
    std::stable_sort(flat.begin(), flat.end(),
                     [](const FlatDet& a, const FlatDet& b) { return a.score > b.score; });

    long ngt = 0;
    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) {
      used[i].assign(gts[i].gts.size(), false);
      for (const auto& g : gts[i].gts)
        if (g.class_id == k) ++ngt;
    }

    long tp = 0, fp = 0;
    std::vector<double> rec, prec;
    PRCurve& curve = out.curves[static_cast<std::size_t>(k)];
    for (const auto& d : flat) {
      const auto& img_gts = gts[d.image].gts;
      double best = 0.0;
      int best_j = -1;
      for (std::size_t j = 0; j < img_gts.size(); ++j) {
        if (img_gts[j].class_id != k || used[d.image][j]) continue;
        const double v = iou(d.box, img_gts[j].box);
        if (v >= iou_thr && v > best) {
          best = v;
          best_j = static_cast<int>(j);
        }
      }
      if (best_j >= 0) {
        used[d.image][static_cast<std::size_t>(best_j)] = true;
        ++tp;
        iou_sum += best;
        ++out.matches;
      } else {
        ++fp;
      }
      rec.push_back(ngt > 0 ? static_cast<double>(tp) / static_cast<double>(ngt) : 0.0);
      prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      curve.points.push_back({rec.back(), prec.back(), d.score});
    }
    curve.ap = ngt > 0 ? envelope_area(rec, prec) : 0.0;
    out.ap[static_cast<std::size_t>(k)] = curve.ap;
  }
  out.map = std::accumulate(out.ap.begin(), out.ap.end(), 0.0) / kNumClasses;
  out.miou = out.matches > 0 ? iou_sum / static_cast<double>(out.matches) : 0.0;
  return out;
}

ConfusionMatrix confusion(const std::vector<ImageDetections>& dets,
                          const std::vector<ImageGroundTruth>& gts,
                          double score_thr, double iou_thr) {
  std::map<std::string, const ImageDetections*> by_id;
  for (const auto& im : dets) by_id[im.image_id] = &im;

  ConfusionMatrix cm;
  for (const auto& img : gts) {
    std::vector<Detection> active;
    if (auto it = by_id.find(img.image_id); it != by_id.end())
      for (const auto& d : it->second->dets)
        if (d.score >= score_thr) active.push_back(d);

    if (img.gts.empty()) {
      // defect-free image: predicted class of the top detection, if any
      if (active.empty()) {
        cm.counts[kNumClasses][kNumClasses]++;
      } else {
        const auto top = std::max_element(
            active.begin(), active.end(),
            [](const Detection& a, const Detection& b) { return a.score < b.score; });
        cm.counts[kNumClasses][static_cast<std::size_t>(top->class_id)]++;
      }
      continue;
    }
    for (const auto& g : img.gts) {
      double best = 0.0;
      int best_class = -1;
      for (const auto& d : active) {
        const double v = iou(d.box, g.box);
        if (v >= iou_thr && v > best) {
          best = v;
          best_class = d.class_id;
        }
      }
      const std::size_t col =
          best_class >= 0 ? static_cast<std::size_t>(best_class) : kNumClasses;
      cm.counts[static_cast<std::size_t>(g.class_id)][col]++;
    }
  }
  for (int k = 0; k < kNumClasses; ++k) {
    long total = 0;
    for (long v : cm.counts[static_cast<std::size_t>(k)]) total += v;
    cm.miss_rate_pct[static_cast<std::size_t>(k)] =
        miss_rate_percent(cm.counts[static_cast<std::size_t>(k)][kNumClasses], total);
  }
  return cm;
}

}  // namespace bafdet
