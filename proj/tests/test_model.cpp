#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "bafdet/model.hpp"

using namespace bafdet;

namespace {

DetectorConfig tiny_config(PyramidVariant v = PyramidVariant::kBidirectional,
                           AttentionKind a = AttentionKind::kCosine) {
  DetectorConfig cfg;
  cfg.backbone.stem_channels = 4;
  cfg.backbone.stage_widths = {4, 4, 8, 8};
  cfg.backbone.blocks_per_stage = 1;
  cfg.backbone.input_size = 64;
  cfg.bafpn.width = 8;
  cfg.bafpn.variant = v;
  cfg.bafpn.attention = a;
  cfg.fc_hidden = 16;
  cfg.rpn.n_reg = 341;
  return cfg;
}

Tensor test_image(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(64 * 64);
  for (auto& x : v) x = rng.uniform();
  return Tensor({1, 64, 64}, v);
}

}  // namespace

TEST_CASE("pyramid levels have the expected shapes and strides") {
  const BafDetector model = BafDetector::create(tiny_config(), 0);
  const BafpnOutput out = model.feature_pyramid(test_image(1));
  CHECK(out.pyramid.b2.shape() == Shape{8, 16, 16});
  CHECK(out.pyramid.b3.shape() == Shape{8, 8, 8});
  CHECK(out.pyramid.b4.shape() == Shape{8, 4, 4});
  CHECK(out.pyramid.b5.shape() == Shape{8, 2, 2});
  CHECK(out.pyramid.b6.shape() == Shape{8, 1, 1});
  CHECK(out.has_maps);
  CHECK(out.map3.attention.dim(0) == 64);
  CHECK(out.map4.attention.dim(0) == 16);
}

TEST_CASE("parameter counts: bidirectional strictly exceeds topdown for all attentions") {
  std::size_t counts[2][3];
  int vi = 0;
  for (auto v : {PyramidVariant::kTopDownOnly, PyramidVariant::kBidirectional}) {
    int ai = 0;
    for (auto a : {AttentionKind::kNone, AttentionKind::kDotProduct, AttentionKind::kCosine})
      counts[vi][ai++] = BafDetector::create(tiny_config(v, a), 0).parameter_count();
    ++vi;
  }
  for (int ai = 0; ai < 3; ++ai) CHECK(counts[1][ai] > counts[0][ai]);
  CHECK(counts[1][1] == counts[1][2]);  // dot vs cosine: same parameterization

  const BafDetector model = BafDetector::create(tiny_config(), 3);
  std::size_t total = 0;
  for (const auto& p : model.parameters()) total += p.tensor.size();
  CHECK(total == model.parameter_count());
}

TEST_CASE("parameter names are unique") {
  const BafDetector model = BafDetector::create(tiny_config(), 0);
  const auto params = model.parameters();
  std::set<std::string> names;
  for (const auto& p : params) names.insert(p.name);
  CHECK(names.size() == params.size());
}

TEST_CASE("training_loss is finite and reaches every parameter family") {
  const BafDetector model = BafDetector::create(tiny_config(), 5);
  std::vector<GroundTruth> gts = {{BBox{20, 24, 16, 12}, 0}, {BBox{44, 40, 10, 18}, 2}};
  const TrainStepLosses losses = model.training_loss(test_image(2), gts, 7);
  CHECK(std::isfinite(losses.total.item()));
  CHECK(losses.total.item() > 0.0);
  CHECK(losses.rpn_positives > 0);
  backward(losses.total);

  double backbone_g = 0, bafpn_g = 0, rpn_g = 0, head_g = 0;
  for (const auto& p : model.parameters()) {
    if (!p.tensor.has_grad()) continue;
    double norm = 0;
    for (double v : p.tensor.grad()) norm += std::abs(v);
    if (p.name.rfind("backbone", 0) == 0) backbone_g += norm;
    else if (p.name.rfind("bafpn", 0) == 0) bafpn_g += norm;
    else if (p.name.rfind("rpn", 0) == 0) rpn_g += norm;
    else head_g += norm;
  }
  CHECK(backbone_g > 0.0);
  CHECK(bafpn_g > 0.0);
  CHECK(rpn_g > 0.0);
  CHECK(head_g > 0.0);
}

TEST_CASE("training_loss is deterministic in the step seed") {
  const BafDetector model = BafDetector::create(tiny_config(), 6);
  std::vector<GroundTruth> gts = {{BBox{32, 32, 20, 20}, 1}};
  const Tensor img = test_image(3);
  const double a = model.training_loss(img, gts, 42).total.item();
  const double b = model.training_loss(img, gts, 42).total.item();
  CHECK(a == b);
}

TEST_CASE("detect output is deterministic, clipped and above threshold") {
  const BafDetector model = BafDetector::create(tiny_config(), 8);
  const Tensor img = test_image(4);
  const auto d1 = model.detect(img, 0.05, 0.5);
  const auto d2 = model.detect(img, 0.05, 0.5);
  REQUIRE(d1.size() == d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) {
    CHECK(d1[i].score == d2[i].score);
    CHECK(d1[i].box.x == d2[i].box.x);
    CHECK(d1[i].score >= 0.05);
    CHECK(d1[i].class_id >= 0);
    CHECK(d1[i].class_id < kNumClasses);
    CHECK(d1[i].box.x1() >= -1e-9);
    CHECK(d1[i].box.y1() >= -1e-9);
    CHECK(d1[i].box.x2() <= 64.0 + 1e-9);
    CHECK(d1[i].box.y2() <= 64.0 + 1e-9);
  }
}

TEST_CASE("proposals stay within the image and within the post-NMS budget") {
  DetectorConfig cfg = tiny_config();
  const BafDetector model = BafDetector::create(cfg, 9);
  const BafpnOutput out = model.feature_pyramid(test_image(5));
  const auto props = model.proposals(out.pyramid, 64, 64);
  CHECK(static_cast<int>(props.size()) <= cfg.post_nms);
  CHECK(!props.empty());
  for (const auto& p : props) {
    CHECK(p.box.x1() >= -1e-9);
    CHECK(p.box.x2() <= 64.0 + 1e-9);
    CHECK(p.box.w > 0);
    CHECK(p.box.h > 0);
  }
  // sorted by objectness
  for (std::size_t i = 1; i < props.size(); ++i)
    CHECK(props[i - 1].score >= props[i].score);
}
