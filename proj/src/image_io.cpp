#include "bafdet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>

namespace bafdet {

void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error(path + ": not a P5 PGM");
  int w = 0, h = 0, maxval = 0;
  auto next_int = [&in, &path]() {
    // skip whitespace and '#' comments
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int v;
    if (!(in >> v)) throw std::runtime_error(path + ": bad PGM header");
    return v;
  };
  w = next_int();
  h = next_int();
  maxval = next_int();
  if (maxval != 255) throw std::runtime_error(path + ": only 8-bit PGM supported");
  in.get();  // single whitespace after maxval
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw std::runtime_error(path + ": truncated PGM data");
  return img;
}

Tensor image_to_tensor(const GrayImage& img) {
  std::vector<double> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = img.pixels[i] / 255.0;
  return Tensor({1, img.height, img.width}, std::move(data));
}

GrayImage tensor_to_image(const Tensor& t) {
  const auto& s = t.shape();
  int h, w;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else {
    throw std::invalid_argument("tensor_to_image: expected HxW or 1xHxW");
  }
  const auto& v = t.data();
  const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
  const double mn = *mn_it, range = *mx_it - mn;
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(
        range > 0 ? std::clamp((v[i] - mn) / range * 255.0, 0.0, 255.0) : 0.0);
  return img;
}

void draw_rect(GrayImage& img, int x1, int y1, int x2, int y2, std::uint8_t value) {
  x1 = std::clamp(x1, 0, img.width - 1);
  x2 = std::clamp(x2, 0, img.width - 1);
  y1 = std::clamp(y1, 0, img.height - 1);
  y2 = std::clamp(y2, 0, img.height - 1);
  for (int x = x1; x <= x2; ++x) {
    img.at(x, y1) = value;
    img.at(x, y2) = value;
  }
  for (int y = y1; y <= y2; ++y) {
    img.at(x1, y) = value;
    img.at(x2, y) = value;
  }
}

}  // namespace bafdet
