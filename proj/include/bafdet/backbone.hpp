#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bafdet/tensor.hpp"

namespace bafdet {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

/// Learned convolution layer (weights + bias + geometry).
struct ConvLayer {
  Tensor weight;  // Cout x Cin x k x k
  Tensor bias;    // Cout
  int stride = 1;
  int pad = 0;

  static ConvLayer create(int cin, int cout, int k, int stride, int pad,
                          std::uint64_t seed);
  Tensor forward(const Tensor& x) const;
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct BackbonePyramid {
  Tensor c2, c3, c4, c5;  // strides 4, 8, 16, 32
};

struct BackboneConfig {
  int in_channels = 1;
  int stem_channels = 32;
  std::array<int, 4> stage_widths{32, 64, 128, 256};  // C2..C5
  int blocks_per_stage = 2;
  int input_size = 128;  // must be divisible by 32
};

/// Small convolutional feature extractor: 7x7/2 stem + maxpool, then four
/// 3x3 stages (the last three at stride 2) yielding C2..C5.
class Backbone {
 public:
  static Backbone create(const BackboneConfig& cfg, std::uint64_t seed);

  BackbonePyramid extract_pyramid(const Tensor& image) const;

  const BackboneConfig& config() const { return cfg_; }
  std::size_t parameter_count() const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;

 private:
  BackboneConfig cfg_;
  ConvLayer stem_;
  std::vector<std::vector<ConvLayer>> stages_;  // 4 stages
};

}  // namespace bafdet
