#include "bafdet/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bafdet {

MultiHeadCosineAttention MultiHeadCosineAttention::create(int channels,
                                                          SimilarityMode mode,
                                                          std::uint64_t seed) {
  MultiHeadCosineAttention a;
  a.mode = mode;
  a.value_weight = Tensor({channels, channels, 1, 1});
  a.value_bias = Tensor({channels});
  init_xavier(a.value_weight, channels, channels, seed);
  return a;
}

std::size_t MultiHeadCosineAttention::parameter_count() const {
  return value_weight.size() + value_bias.size();
}

Tensor fuse_heads(const Tensor& x_head, const Tensor& y_head, const Tensor& z_head,
                  const MultiHeadCosineAttention& cfg) {
  if (x_head.shape() != y_head.shape() || x_head.shape() != z_head.shape())
    throw std::invalid_argument("fuse_heads: head shapes differ");
  return add(add(scale(x_head, cfg.alpha), scale(y_head, cfg.beta)),
             scale(z_head, cfg.gamma));
}

SimilarityMap similarity(const Tensor& x, SimilarityMode mode) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("similarity: expected CxWxH input");
  const int c = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor flat = reshape(x, {c, n});
  SimilarityMap m;
  if (mode == SimilarityMode::kCosine) {
    Tensor u = normalize_columns(flat);
    m.values = matmul(transpose(u), u);
  } else {
    m.values = matmul(transpose(flat), flat);
  }
  m.attention = softmax_rows(m.values);
  return m;
}

Tensor attention_apply(const Tensor& x, const MultiHeadCosineAttention& cfg) {
  const int c = x.dim(0), w = x.dim(1), h = x.dim(2);
  SimilarityMap m = similarity(x, cfg.mode);
  Tensor g = conv2d(x, cfg.value_weight, cfg.value_bias, 1, 0);
  Tensor g_flat = reshape(g, {c, w * h});
  // y_j = sum_i s[j][i] * g_i  <=>  y_flat = g_flat * s^T
  Tensor y_flat = matmul(g_flat, transpose(m.attention));
  return add(reshape(y_flat, {c, w, h}), x);
}

AttentionResult attention_module(const Tensor& x_head, const Tensor& y_head,
                                 const Tensor& z_head,
                                 const MultiHeadCosineAttention& cfg) {
  AttentionResult r;
  Tensor fused = fuse_heads(x_head, y_head, z_head, cfg);
  const int c = fused.dim(0), w = fused.dim(1), h = fused.dim(2);
  r.map = similarity(fused, cfg.mode);
  Tensor g = conv2d(fused, cfg.value_weight, cfg.value_bias, 1, 0);
  Tensor y_flat = matmul(reshape(g, {c, w * h}), transpose(r.map.attention));
  r.output = add(reshape(y_flat, {c, w, h}), fused);
  return r;
}

MapStatistics map_statistics(const Tensor& m) {
  const auto& v = m.data();
  if (v.empty()) throw std::runtime_error("map_statistics: empty tensor");
  MapStatistics s;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  s.brightness = mean;
  s.contrast = std::sqrt(var);
  const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
  const double mn = *mn_it, mx = *mx_it;
  for (double x : v) {
    int bin = 0;
    if (mx > mn) bin = std::min(255, static_cast<int>((x - mn) / (mx - mn) * 256.0));
    s.histogram[static_cast<std::size_t>(bin)]++;
  }
  return s;
}

}  // namespace bafdet
