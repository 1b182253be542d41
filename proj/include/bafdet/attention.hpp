#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bafdet/tensor.hpp"

namespace bafdet {

enum class SimilarityMode { kCosine, kDotProduct };

/// Multi-head cosine non-local attention: three weighted input heads fused
/// into one map, refined by an NxN position-affinity matrix with a residual
/// connection. g(.) is a channel-preserving 1x1 convolution.
struct MultiHeadCosineAttention {
  double alpha = 0.5;
  double beta = 0.5;
  double gamma = 0.5;
  SimilarityMode mode = SimilarityMode::kCosine;
  Tensor value_weight;  // C x C x 1 x 1
  Tensor value_bias;    // C

  static MultiHeadCosineAttention create(int channels, SimilarityMode mode,
                                         std::uint64_t seed);
  std::size_t parameter_count() const;
};

struct SimilarityMap {
  Tensor values;     // N x N, pre-softmax affinities f
  Tensor attention;  // N x N, row-softmaxed weights s
};

struct MapStatistics {
  double brightness = 0.0;                 // mean gray level
  double contrast = 0.0;                   // population standard deviation
  std::array<std::uint64_t, 256> histogram{};  // over min-max normalized values
};

Tensor fuse_heads(const Tensor& x_head, const Tensor& y_head, const Tensor& z_head,
                  const MultiHeadCosineAttention& cfg);

SimilarityMap similarity(const Tensor& x, SimilarityMode mode);

Tensor attention_apply(const Tensor& x, const MultiHeadCosineAttention& cfg);

/// Full module: fuse the three heads, then refine. Exposes the similarity
/// map for visualization.
struct AttentionResult {
  Tensor output;
  SimilarityMap map;
};
AttentionResult attention_module(const Tensor& x_head, const Tensor& y_head,
                                 const Tensor& z_head,
                                 const MultiHeadCosineAttention& cfg);

MapStatistics map_statistics(const Tensor& m);

}  // namespace bafdet
