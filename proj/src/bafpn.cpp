#include "bafdet/bafpn.hpp"

#include <stdexcept>

namespace bafdet {

namespace {

void check_halving(const Tensor& upper, const Tensor& lower, const char* who) {
  if (upper.dim(1) != lower.dim(1) / 2 || upper.dim(2) != lower.dim(2) / 2)
    throw std::invalid_argument(std::string(who) +
                                ": pyramid extents are not a halving chain");
}

}  // namespace

Bafpn Bafpn::create(const BafpnConfig& cfg, const std::array<int, 4>& bw,
                    std::uint64_t seed) {
  Bafpn f;
  f.cfg_ = cfg;
  f.has_attention_ = cfg.attention != AttentionKind::kNone;
  f.has_bottom_up_ = cfg.variant == PyramidVariant::kBidirectional;
  const int d = cfg.width;
  f.lat2_ = ConvLayer::create(bw[0], d, 1, 1, 0, mix_seed(seed, 2));
  f.lat3_ = ConvLayer::create(bw[1], d, 1, 1, 0, mix_seed(seed, 3));
  f.lat4_ = ConvLayer::create(bw[2], d, 1, 1, 0, mix_seed(seed, 4));
  f.lat5_ = ConvLayer::create(bw[3], d, 1, 1, 0, mix_seed(seed, 5));
  f.merge2_ = ConvLayer::create(d, d, 3, 1, 1, mix_seed(seed, 12));
  f.merge3_ = ConvLayer::create(d, d, 3, 1, 1, mix_seed(seed, 13));
  f.merge4_ = ConvLayer::create(d, d, 3, 1, 1, mix_seed(seed, 14));
  f.merge5_ = ConvLayer::create(d, d, 3, 1, 1, mix_seed(seed, 15));
  if (f.has_bottom_up_) {
    f.b2_conv_ = ConvLayer::create(d, d, 1, 1, 0, mix_seed(seed, 22));
    f.c3_conv_ = ConvLayer::create(bw[1], d, 1, 1, 0, mix_seed(seed, 23));
    f.p3_conv_ = ConvLayer::create(d, d, 1, 1, 0, mix_seed(seed, 24));
    f.c4_conv_ = ConvLayer::create(bw[2], d, 1, 1, 0, mix_seed(seed, 25));
    f.p4_conv_ = ConvLayer::create(d, d, 1, 1, 0, mix_seed(seed, 26));
    f.p5_conv_ = ConvLayer::create(d, d, 1, 1, 0, mix_seed(seed, 27));
    f.down23_ = ConvLayer::create(d, d, 3, 2, 1, mix_seed(seed, 32));
    f.down34_ = ConvLayer::create(d, d, 3, 2, 1, mix_seed(seed, 33));
    f.down45_ = ConvLayer::create(d, d, 3, 2, 1, mix_seed(seed, 34));
  }
  if (f.has_attention_) {
    const auto mode = cfg.attention == AttentionKind::kCosine
                          ? SimilarityMode::kCosine
                          : SimilarityMode::kDotProduct;
    f.attn3_ = MultiHeadCosineAttention::create(d, mode, mix_seed(seed, 43));
    f.attn4_ = MultiHeadCosineAttention::create(d, mode, mix_seed(seed, 44));
    f.attn3_.alpha = f.attn4_.alpha = cfg.alpha;
    f.attn3_.beta = f.attn4_.beta = cfg.beta;
    f.attn3_.gamma = f.attn4_.gamma = cfg.gamma;
  }
  return f;
}

TopDownPyramid Bafpn::top_down(const BackbonePyramid& c) const {
  check_halving(c.c3, c.c2, "top_down");
  check_halving(c.c4, c.c3, "top_down");
  check_halving(c.c5, c.c4, "top_down");
  TopDownPyramid p;
  p.p5 = merge5_.forward(lat5_.forward(c.c5));
  p.p4 = merge4_.forward(add(upsample2_nearest(p.p5), lat4_.forward(c.c4)));
  p.p3 = merge3_.forward(add(upsample2_nearest(p.p4), lat3_.forward(c.c3)));
  p.p2 = merge2_.forward(add(upsample2_nearest(p.p3), lat2_.forward(c.c2)));
  return p;
}

BafpnOutput Bafpn::bottom_up_refine(const BackbonePyramid& c,
                                    const TopDownPyramid& p) const {
  if (!has_bottom_up_)
    throw std::runtime_error("bottom_up_refine: variant is top-down only");
  BafpnOutput out;
  auto& b = out.pyramid;
  b.b2 = b2_conv_.forward(p.p2);
  // B3, B4: three heads fused, refined by attention when configured
  const Tensor h3x = c3_conv_.forward(c.c3);
  const Tensor h3y = p3_conv_.forward(p.p3);
  const Tensor h3z = down23_.forward(b.b2);
  if (has_attention_) {
    AttentionResult r3 = attention_module(h3x, h3y, h3z, attn3_);
    b.b3 = r3.output;
    out.map3 = r3.map;
  } else {
    MultiHeadCosineAttention fuse_only;
    fuse_only.alpha = cfg_.alpha;
    fuse_only.beta = cfg_.beta;
    fuse_only.gamma = cfg_.gamma;
    b.b3 = fuse_heads(h3x, h3y, h3z, fuse_only);
  }
  const Tensor h4x = c4_conv_.forward(c.c4);
  const Tensor h4y = p4_conv_.forward(p.p4);
  const Tensor h4z = down34_.forward(b.b3);
  if (has_attention_) {
    AttentionResult r4 = attention_module(h4x, h4y, h4z, attn4_);
    b.b4 = r4.output;
    out.map4 = r4.map;
    out.has_maps = true;
  } else {
    MultiHeadCosineAttention fuse_only;
    fuse_only.alpha = cfg_.alpha;
    fuse_only.beta = cfg_.beta;
    fuse_only.gamma = cfg_.gamma;
    b.b4 = fuse_heads(h4x, h4y, h4z, fuse_only);
  }
  b.b5 = add(p5_conv_.forward(p.p5), down45_.forward(b.b4));
  b.b6 = maxpool2(b.b5);
  return out;
}

Tensor Bafpn::refine_single(const Tensor& x, const MultiHeadCosineAttention& attn,
                            SimilarityMap* map_out) const {
  AttentionResult r;
  r.map = similarity(x, attn.mode);
  Tensor g = conv2d(x, attn.value_weight, attn.value_bias, 1, 0);
  Tensor y_flat =
      matmul(reshape(g, {x.dim(0), x.dim(1) * x.dim(2)}), transpose(r.map.attention));
  if (map_out) *map_out = r.map;
  return add(reshape(y_flat, x.shape()), x);
}

BafpnOutput Bafpn::top_down_variant(const BackbonePyramid& c) const {
  TopDownPyramid p = top_down(c);
  BafpnOutput out;
  auto& b = out.pyramid;
  b.b2 = p.p2;
  // in the top-down ablation rows the middle two levels are still refined
  // by the (single-input) attention module when one is configured
  if (has_attention_) {
    b.b3 = refine_single(p.p3, attn3_, &out.map3);
    b.b4 = refine_single(p.p4, attn4_, &out.map4);
    out.has_maps = true;
  } else {
    b.b3 = p.p3;
    b.b4 = p.p4;
  }
  b.b5 = p.p5;
  b.b6 = maxpool2(b.b5);
  return out;
}

BafpnOutput Bafpn::fuse_variant(const BackbonePyramid& c) const {
  if (cfg_.variant == PyramidVariant::kTopDownOnly) return top_down_variant(c);
  return bottom_up_refine(c, top_down(c));
}

std::size_t Bafpn::parameter_count() const {
  std::size_t n = 0;
  for (const ConvLayer* l : {&lat2_, &lat3_, &lat4_, &lat5_, &merge2_, &merge3_,
                             &merge4_, &merge5_})
    n += l->parameter_count();
  if (has_bottom_up_)
    for (const ConvLayer* l : {&b2_conv_, &c3_conv_, &p3_conv_, &c4_conv_, &p4_conv_,
                               &p5_conv_, &down23_, &down34_, &down45_})
      n += l->parameter_count();
  if (has_attention_) n += attn3_.parameter_count() + attn4_.parameter_count();
  return n;
}

void Bafpn::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  lat2_.collect(prefix + "/lat2", out);
  lat3_.collect(prefix + "/lat3", out);
  lat4_.collect(prefix + "/lat4", out);
  lat5_.collect(prefix + "/lat5", out);
  merge2_.collect(prefix + "/merge2", out);
  merge3_.collect(prefix + "/merge3", out);
  merge4_.collect(prefix + "/merge4", out);
  merge5_.collect(prefix + "/merge5", out);
  if (has_bottom_up_) {
    b2_conv_.collect(prefix + "/b2_conv", out);
    c3_conv_.collect(prefix + "/c3_conv", out);
    p3_conv_.collect(prefix + "/p3_conv", out);
    c4_conv_.collect(prefix + "/c4_conv", out);
    p4_conv_.collect(prefix + "/p4_conv", out);
    p5_conv_.collect(prefix + "/p5_conv", out);
    down23_.collect(prefix + "/down23", out);
    down34_.collect(prefix + "/down34", out);
    down45_.collect(prefix + "/down45", out);
  }
  if (has_attention_) {
    out.push_back({prefix + "/attn3/value_w", attn3_.value_weight});
    out.push_back({prefix + "/attn3/value_b", attn3_.value_bias});
    out.push_back({prefix + "/attn4/value_w", attn4_.value_weight});
    out.push_back({prefix + "/attn4/value_b", attn4_.value_bias});
  }
}

ConvLayer& Bafpn::lateral(int level) {
  switch (level) {
    case 2: return lat2_;
    case 3: return lat3_;
    case 4: return lat4_;
    case 5: return lat5_;
  }
  throw std::invalid_argument("lateral: level out of range");
}

ConvLayer& Bafpn::merge(int level) {
  switch (level) {
    case 2: return merge2_;
    case 3: return merge3_;
    case 4: return merge4_;
    case 5: return merge5_;
  }
  throw std::invalid_argument("merge: level out of range");
}

}  // namespace bafdet
