#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bafdet/tensor.hpp"

namespace bafdet {

struct GrayImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t& at(int x, int y) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

void write_pgm(const std::string& path, const GrayImage& img);
GrayImage read_pgm(const std::string& path);

/// 1 x H x W tensor with values in [0, 1].
Tensor image_to_tensor(const GrayImage& img);

/// Min-max normalizes any 2-d (or single-channel 3-d) tensor to 8-bit.
GrayImage tensor_to_image(const Tensor& t);

void draw_rect(GrayImage& img, int x1, int y1, int x2, int y2, std::uint8_t value);

}  // namespace bafdet
