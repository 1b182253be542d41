#include "bafdet/backbone.hpp"

#include <stdexcept>

namespace bafdet {

ConvLayer ConvLayer::create(int cin, int cout, int k, int stride, int pad,
                            std::uint64_t seed) {
  ConvLayer l;
  l.weight = Tensor({cout, cin, k, k});
  l.bias = Tensor({cout});
  l.stride = stride;
  l.pad = pad;
  init_xavier(l.weight, cin * k * k, cout * k * k, seed);
  return l;
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, pad);
}

void ConvLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + "/w", weight});
  out.push_back({prefix + "/b", bias});
}

Backbone Backbone::create(const BackboneConfig& cfg, std::uint64_t seed) {
  Backbone b;
  b.cfg_ = cfg;
  b.stem_ = ConvLayer::create(cfg.in_channels, cfg.stem_channels, 7, 2, 3,
                              mix_seed(seed, 1));
  int cin = cfg.stem_channels;
  for (int s = 0; s < 4; ++s) {
    std::vector<ConvLayer> stage;
    const int w = cfg.stage_widths[static_cast<std::size_t>(s)];
    for (int blk = 0; blk < cfg.blocks_per_stage; ++blk) {
      // first block of stages C3..C5 downsamples
      const int stride = (blk == 0 && s > 0) ? 2 : 1;
      stage.push_back(ConvLayer::create(blk == 0 ? cin : w, w, 3, stride, 1,
                                        mix_seed(seed, 100 + 10 * s + blk)));
    }
    cin = w;
    b.stages_.push_back(std::move(stage));
  }
  return b;
}

BackbonePyramid Backbone::extract_pyramid(const Tensor& image) const {
  if (image.shape().size() != 3 || image.dim(0) != cfg_.in_channels)
    throw std::invalid_argument("extract_pyramid: expected " +
                                std::to_string(cfg_.in_channels) + "xWxH image");
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
    throw std::runtime_error("extract_pyramid: extents must be divisible by 32");

  Tensor x = maxpool2(relu(stem_.forward(image)));  // stride 4
  std::vector<Tensor> levels;
  for (const auto& stage : stages_) {
    for (const auto& conv : stage) x = relu(conv.forward(x));
    levels.push_back(x);
  }
  return BackbonePyramid{levels[0], levels[1], levels[2], levels[3]};
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = stem_.parameter_count();
  for (const auto& stage : stages_)
    for (const auto& conv : stage) n += conv.parameter_count();
  return n;
}

void Backbone::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  stem_.collect(prefix + "/stem", out);
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t blk = 0; blk < stages_[s].size(); ++blk)
      stages_[s][blk].collect(prefix + "/stage" + std::to_string(s + 2) + "/conv" +
                                  std::to_string(blk),
                              out);
}

}  // namespace bafdet
