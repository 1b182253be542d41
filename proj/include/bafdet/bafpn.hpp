#pragma once

#include <cstdint>
#include <vector>

#include "bafdet/attention.hpp"
#include "bafdet/backbone.hpp"

namespace bafdet {

struct TopDownPyramid {
  Tensor p2, p3, p4, p5;
};

struct RefinedPyramid {
  Tensor b2, b3, b4, b5, b6;
  std::vector<Tensor> levels() const { return {b2, b3, b4, b5, b6}; }
};

enum class PyramidVariant { kTopDownOnly, kBidirectional };
enum class AttentionKind { kNone, kDotProduct, kCosine };

struct BafpnConfig {
  int width = 64;  // d
  PyramidVariant variant = PyramidVariant::kBidirectional;
  AttentionKind attention = AttentionKind::kCosine;
  double alpha = 0.5, beta = 0.5, gamma = 0.5;
};

struct BafpnOutput {
  RefinedPyramid pyramid;
  bool has_maps = false;
  SimilarityMap map3, map4;  // similarity maps at the two refined levels
};

/// Top-down pyramid (lateral 1x1 + merge 3x3) plus the attention-refined
/// bottom-up path producing B2..B6 for the detection head.
class Bafpn {
 public:
  static Bafpn create(const BafpnConfig& cfg,
                      const std::array<int, 4>& backbone_widths, std::uint64_t seed);

  TopDownPyramid top_down(const BackbonePyramid& c) const;
  BafpnOutput bottom_up_refine(const BackbonePyramid& c, const TopDownPyramid& p) const;
  /// Full pass for the configured variant.
  BafpnOutput fuse_variant(const BackbonePyramid& c) const;

  const BafpnConfig& config() const { return cfg_; }
  const MultiHeadCosineAttention& attention3() const { return attn3_; }
  const MultiHeadCosineAttention& attention4() const { return attn4_; }
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

  // test hooks: overwrite individual layers
  ConvLayer& lateral(int level);  // 2..5
  ConvLayer& merge(int level);    // 2..5

 private:
  BafpnOutput top_down_variant(const BackbonePyramid& c) const;
  Tensor refine_single(const Tensor& x, const MultiHeadCosineAttention& attn,
                       SimilarityMap* map_out) const;

  BafpnConfig cfg_;
  bool has_attention_ = false;
  bool has_bottom_up_ = false;
  ConvLayer lat2_, lat3_, lat4_, lat5_;      // 1x1, backbone width -> d
  ConvLayer merge2_, merge3_, merge4_, merge5_;  // 3x3 pad 1, d -> d
  // bottom-up path
  ConvLayer b2_conv_, c3_conv_, p3_conv_, c4_conv_, p4_conv_, p5_conv_;  // 1x1
  ConvLayer down23_, down34_, down45_;  // 3x3 stride 2 pad 1, learned
  MultiHeadCosineAttention attn3_, attn4_;
};

}  // namespace bafdet
