#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <map>

#include "bafdet/bafpn.hpp"
#include "oracles.hpp"

using namespace bafdet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

BackbonePyramid random_pyramid(Rng& rng, const std::array<int, 4>& widths, int base) {
  BackbonePyramid c;
  c.c2 = random_tensor({widths[0], base, base}, rng);
  c.c3 = random_tensor({widths[1], base / 2, base / 2}, rng);
  c.c4 = random_tensor({widths[2], base / 4, base / 4}, rng);
  c.c5 = random_tensor({widths[3], base / 8, base / 8}, rng);
  return c;
}

std::map<std::string, Tensor> weights_of(const Bafpn& f) {
  std::vector<NamedParam> params;
  f.collect("f", params);
  std::map<std::string, Tensor> out;
  for (auto& p : params) out.emplace(p.name, p.tensor);
  return out;
}

orc::Vol oconv(const std::map<std::string, Tensor>& w, const std::string& name,
               const orc::Vol& in, int stride, int pad) {
  return orc::conv2d(in, w.at("f/" + name + "/w"), w.at("f/" + name + "/b"), stride,
                     pad);
}

void check_close(const Tensor& got, const orc::Vol& want, double tol = 1e-9) {
  REQUIRE(got.shape() == Shape{want.c, want.h, want.w});
  for (std::size_t i = 0; i < want.v.size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want.v[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("top_down matches a straight-line transcription") {
  const std::array<int, 4> widths{2, 3, 3, 4};
  BafpnConfig cfg;
  cfg.width = 2;
  const Bafpn f = Bafpn::create(cfg, widths, 7);
  Rng rng(21);
  const BackbonePyramid c = random_pyramid(rng, widths, 8);
  const TopDownPyramid p = f.top_down(c);

  const auto w = weights_of(f);
  const orc::Vol p5 = oconv(w, "merge5", oconv(w, "lat5", orc::from_tensor(c.c5), 1, 0), 1, 1);
  const orc::Vol p4 = oconv(
      w, "merge4",
      orc::add(orc::upsample2(p5), oconv(w, "lat4", orc::from_tensor(c.c4), 1, 0)), 1, 1);
  const orc::Vol p3 = oconv(
      w, "merge3",
      orc::add(orc::upsample2(p4), oconv(w, "lat3", orc::from_tensor(c.c3), 1, 0)), 1, 1);
  const orc::Vol p2 = oconv(
      w, "merge2",
      orc::add(orc::upsample2(p3), oconv(w, "lat2", orc::from_tensor(c.c2), 1, 0)), 1, 1);
  check_close(p.p5, p5);
  check_close(p.p4, p4);
  check_close(p.p3, p3);
  check_close(p.p2, p2);
}

TEST_CASE("top_down rejects non-halving pyramids") {
  const std::array<int, 4> widths{2, 2, 2, 2};
  const Bafpn f = Bafpn::create(BafpnConfig{.width = 2}, widths, 0);
  Rng rng(22);
  BackbonePyramid c = random_pyramid(rng, widths, 8);
  c.c4 = random_tensor({2, 3, 3}, rng);  // breaks the halving chain
  CHECK_THROWS_AS(f.top_down(c), std::invalid_argument);
}

TEST_CASE("bottom_up_refine matches a straight-line transcription (cosine)") {
  const std::array<int, 4> widths{2, 2, 2, 2};
  BafpnConfig cfg;
  cfg.width = 2;
  cfg.variant = PyramidVariant::kBidirectional;
  cfg.attention = AttentionKind::kCosine;
  const Bafpn f = Bafpn::create(cfg, widths, 9);
  Rng rng(23);
  const BackbonePyramid c = random_pyramid(rng, widths, 8);
  const TopDownPyramid p = f.top_down(c);
  const BafpnOutput out = f.bottom_up_refine(c, p);
  CHECK(out.has_maps);

  const auto w = weights_of(f);
  auto vol = [](const Tensor& t) { return orc::from_tensor(t); };
  const orc::Vol b2 = oconv(w, "b2_conv", vol(p.p2), 1, 0);
  // B3: fuse the three heads with alpha=beta=gamma=0.5, then non-local refine
  orc::Vol fused3 = orc::axpy(0.5, oconv(w, "c3_conv", vol(c.c3), 1, 0), 0.5,
                              oconv(w, "p3_conv", vol(p.p3), 1, 0));
  fused3 = orc::axpy(1.0, fused3, 0.5, oconv(w, "down23", b2, 2, 1));
  const orc::Vol b3 = orc::attention(fused3, w.at("f/attn3/value_w"),
                                     w.at("f/attn3/value_b"), true);
  orc::Vol fused4 = orc::axpy(0.5, oconv(w, "c4_conv", vol(c.c4), 1, 0), 0.5,
                              oconv(w, "p4_conv", vol(p.p4), 1, 0));
  fused4 = orc::axpy(1.0, fused4, 0.5, orc::conv2d(b3, w.at("f/down34/w"),
                                                   w.at("f/down34/b"), 2, 1));
  const orc::Vol b4 = orc::attention(fused4, w.at("f/attn4/value_w"),
                                     w.at("f/attn4/value_b"), true);
  const orc::Vol b5 = orc::add(oconv(w, "p5_conv", vol(p.p5), 1, 0),
                               orc::conv2d(b4, w.at("f/down45/w"), w.at("f/down45/b"), 2, 1));
  const orc::Vol b6 = orc::maxpool2(b5);

  check_close(out.pyramid.b2, b2);
  check_close(out.pyramid.b3, b3, 1e-8);
  check_close(out.pyramid.b4, b4, 1e-8);
  check_close(out.pyramid.b5, b5, 1e-8);
  check_close(out.pyramid.b6, b6, 1e-8);
}

TEST_CASE("attention-free fusion is the plain weighted sum of the heads") {
  const std::array<int, 4> widths{2, 2, 2, 2};
  BafpnConfig cfg;
  cfg.width = 2;
  cfg.attention = AttentionKind::kNone;
  const Bafpn f = Bafpn::create(cfg, widths, 10);
  Rng rng(24);
  const BackbonePyramid c = random_pyramid(rng, widths, 8);
  const BafpnOutput out = f.fuse_variant(c);
  CHECK_FALSE(out.has_maps);
  const TopDownPyramid p = f.top_down(c);
  const auto w = weights_of(f);
  const orc::Vol b2 = oconv(w, "b2_conv", orc::from_tensor(p.p2), 1, 0);
  orc::Vol fused3 = orc::axpy(0.5, oconv(w, "c3_conv", orc::from_tensor(c.c3), 1, 0),
                              0.5, oconv(w, "p3_conv", orc::from_tensor(p.p3), 1, 0));
  fused3 = orc::axpy(1.0, fused3, 0.5, oconv(w, "down23", b2, 2, 1));
  check_close(out.pyramid.b3, fused3, 1e-9);
}

TEST_CASE("top-down ablation variants skip the bottom-up path") {
  const std::array<int, 4> widths{2, 2, 2, 2};
  BafpnConfig cfg;
  cfg.width = 2;
  cfg.variant = PyramidVariant::kTopDownOnly;
  cfg.attention = AttentionKind::kNone;
  const Bafpn f = Bafpn::create(cfg, widths, 11);
  Rng rng(25);
  const BackbonePyramid c = random_pyramid(rng, widths, 8);
  const BafpnOutput out = f.fuse_variant(c);
  const TopDownPyramid p = f.top_down(c);
  CHECK(out.pyramid.b3.data() == p.p3.data());
  CHECK(out.pyramid.b4.data() == p.p4.data());
  CHECK(out.pyramid.b5.data() == p.p5.data());
  CHECK_THROWS_AS(f.bottom_up_refine(c, p), std::runtime_error);
}

TEST_CASE("parameter counts: bidirectional variants are strictly larger") {
  const std::array<int, 4> widths{4, 8, 16, 32};
  auto count = [&widths](PyramidVariant v, AttentionKind a) {
    BafpnConfig cfg;
    cfg.width = 8;
    cfg.variant = v;
    cfg.attention = a;
    return Bafpn::create(cfg, widths, 0).parameter_count();
  };
  for (auto a : {AttentionKind::kNone, AttentionKind::kDotProduct, AttentionKind::kCosine})
    CHECK(count(PyramidVariant::kBidirectional, a) >
          count(PyramidVariant::kTopDownOnly, a));
  // attention adds exactly the two value projections
  CHECK(count(PyramidVariant::kBidirectional, AttentionKind::kCosine) ==
        count(PyramidVariant::kBidirectional, AttentionKind::kNone) + 2 * (8 * 8 + 8));
  // dot and cosine share the same parameterization
  CHECK(count(PyramidVariant::kBidirectional, AttentionKind::kDotProduct) ==
        count(PyramidVariant::kBidirectional, AttentionKind::kCosine));
}

TEST_CASE("gradient check: top_down over 20 seeds") {
  const std::array<int, 4> widths{2, 2, 2, 2};
  const Bafpn f = Bafpn::create(BafpnConfig{.width = 2}, widths, 3);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(500, seed));
    std::vector<Tensor> inputs = {random_tensor({2, 8, 8}, rng),
                                  random_tensor({2, 4, 4}, rng),
                                  random_tensor({2, 2, 2}, rng),
                                  random_tensor({2, 1, 1}, rng)};
    auto fn = [&f](std::vector<Tensor>& in) {
      BackbonePyramid c{in[0], in[1], in[2], in[3]};
      const TopDownPyramid p = f.top_down(c);
      return sum(add(sum(p.p2), add(sum(p.p3), add(sum(p.p4), sum(p.p5)))));
    };
    worst = std::max(worst, grad_check(fn, inputs).max_error);
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("gradient check: bottom_up_refine over 20 seeds") {
  const std::array<int, 4> widths{2, 2, 2, 2};
  BafpnConfig cfg;
  cfg.width = 2;
  cfg.attention = AttentionKind::kCosine;
  const Bafpn f = Bafpn::create(cfg, widths, 4);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(mix_seed(600, seed));
    std::vector<Tensor> inputs = {random_tensor({2, 8, 8}, rng),
                                  random_tensor({2, 4, 4}, rng),
                                  random_tensor({2, 2, 2}, rng),
                                  random_tensor({2, 1, 1}, rng)};
    auto fn = [&f](std::vector<Tensor>& in) {
      BackbonePyramid c{in[0], in[1], in[2], in[3]};
      const BafpnOutput out = f.bottom_up_refine(c, f.top_down(c));
      Tensor s = sum(out.pyramid.b2);
      for (const Tensor& t : {out.pyramid.b3, out.pyramid.b4, out.pyramid.b5,
                              out.pyramid.b6})
        s = add(s, sum(t));
      return s;
    };
    worst = std::max(worst, grad_check(fn, inputs).max_error);
  }
  CHECK(worst <= 1e-3);
}
