#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bafdet/attention.hpp"
#include "oracles.hpp"

using namespace bafdet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("fuse_heads is the weighted sum of the three inputs") {
  MultiHeadCosineAttention cfg =
      MultiHeadCosineAttention::create(2, SimilarityMode::kCosine, 0);
  cfg.alpha = 0.25;
  cfg.beta = 0.5;
  cfg.gamma = 2.0;
  Tensor x({2, 1, 1}, {1, 2}), y({2, 1, 1}, {10, 20}), z({2, 1, 1}, {100, 200});
  Tensor u = fuse_heads(x, y, z, cfg);
  CHECK(u.data()[0] == doctest::Approx(0.25 * 1 + 0.5 * 10 + 2.0 * 100));
  CHECK(u.data()[1] == doctest::Approx(0.25 * 2 + 0.5 * 20 + 2.0 * 200));
}

TEST_CASE("cosine pre-softmax entries lie in [-1, 1] on 1000 random tensors") {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const int c = rng.uniform_int(1, 4);
    const int h = rng.uniform_int(1, 3), w = rng.uniform_int(1, 3);
    Tensor x = random_tensor({c, h, w}, rng, std::exp(rng.uniform(-3.0, 3.0)));
    const SimilarityMap m = similarity(x, SimilarityMode::kCosine);
    for (double v : m.values.data()) {
      CHECK(v >= -1.0 - 1e-12);
      CHECK(v <= 1.0 + 1e-12);
    }
    // pre-softmax range [-1,1] bounds every attention row's max/min ratio by e^2
    const int n = m.attention.dim(0);
    for (int r = 0; r < n; ++r) {
      double mn = 1e300, mx = -1e300;
      for (int i = 0; i < n; ++i) {
        const double v = m.attention.data()[static_cast<std::size_t>(r) * n + i];
        mn = std::min(mn, v);
        mx = std::max(mx, v);
      }
      CHECK(mx / mn <= std::exp(2.0) * (1 + 1e-12));
    }
  }
}

TEST_CASE("cosine map is invariant under positive input scaling, dot is not") {
  Rng rng(12);
  Tensor x = random_tensor({3, 2, 2}, rng);
  Tensor xs(x.shape(), x.data());
  for (auto& v : xs.data()) v *= 10.0;

  const SimilarityMap c1 = similarity(x, SimilarityMode::kCosine);
  const SimilarityMap c2 = similarity(xs, SimilarityMode::kCosine);
  double max_diff = 0;
  for (std::size_t i = 0; i < c1.values.size(); ++i)
    max_diff = std::max(max_diff, std::abs(c1.values.data()[i] - c2.values.data()[i]));
  CHECK(max_diff <= 1e-9);

  const SimilarityMap d1 = similarity(x, SimilarityMode::kDotProduct);
  const SimilarityMap d2 = similarity(xs, SimilarityMode::kDotProduct);
  double dot_diff = 0;
  for (std::size_t i = 0; i < d1.values.size(); ++i)
    dot_diff = std::max(dot_diff, std::abs(d1.values.data()[i] - d2.values.data()[i]));
  CHECK(dot_diff > 1.0);
}

TEST_CASE("zero value-projection reduces attention_apply to the identity, bitwise") {
  Rng rng(13);
  MultiHeadCosineAttention cfg =
      MultiHeadCosineAttention::create(3, SimilarityMode::kCosine, 0);
  for (auto& v : cfg.value_weight.data()) v = 0.0;
  for (auto& v : cfg.value_bias.data()) v = 0.0;
  Tensor x = random_tensor({3, 2, 3}, rng);
  const Tensor y = attention_apply(x, cfg);
  REQUIRE(y.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("attention_apply matches the double-loop oracle in both modes") {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const SimilarityMode mode =
        trial % 2 ? SimilarityMode::kDotProduct : SimilarityMode::kCosine;
    MultiHeadCosineAttention cfg = MultiHeadCosineAttention::create(
        3, mode, mix_seed(99, static_cast<std::uint64_t>(trial)));
    Tensor x = random_tensor({3, 3, 2}, rng);
    const Tensor y = attention_apply(x, cfg);
    const orc::Vol ref = orc::attention(orc::from_tensor(x), cfg.value_weight,
                                        cfg.value_bias, mode == SimilarityMode::kCosine);
    for (std::size_t i = 0; i < ref.v.size(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref.v[i]).epsilon(1e-10));
  }
}

TEST_CASE("attention_module fuses heads then refines, exposing the map") {
  Rng rng(15);
  MultiHeadCosineAttention cfg =
      MultiHeadCosineAttention::create(2, SimilarityMode::kCosine, 5);
  Tensor x = random_tensor({2, 2, 2}, rng), y = random_tensor({2, 2, 2}, rng),
         z = random_tensor({2, 2, 2}, rng);
  const AttentionResult r = attention_module(x, y, z, cfg);
  const Tensor fused = fuse_heads(x, y, z, cfg);
  const Tensor direct = attention_apply(fused, cfg);
  for (std::size_t i = 0; i < direct.size(); ++i)
    CHECK(r.output.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-12));
  CHECK(r.map.attention.dim(0) == 4);
}

TEST_CASE("gradient check: attention_apply in both modes over 20 seeds") {
  for (auto mode : {SimilarityMode::kCosine, SimilarityMode::kDotProduct}) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(mix_seed(400, seed));
      MultiHeadCosineAttention cfg = MultiHeadCosineAttention::create(2, mode, seed);
      std::vector<Tensor> inputs = {random_tensor({2, 2, 2}, rng),
                                    cfg.value_weight, cfg.value_bias};
      auto fn = [mode](std::vector<Tensor>& in) {
        MultiHeadCosineAttention local;
        local.mode = mode;
        local.value_weight = in[1];
        local.value_bias = in[2];
        return sum(attention_apply(in[0], local));
      };
      worst = std::max(worst, grad_check(fn, inputs).max_error);
    }
    CHECK(worst <= 1e-3);
  }
}

TEST_CASE("map_statistics: constant map lands in bin 0; empty map throws") {
  Tensor flat({2, 2}, {0.7, 0.7, 0.7, 0.7});
  const MapStatistics s = map_statistics(flat);
  CHECK(s.brightness == doctest::Approx(0.7));
  CHECK(s.contrast == doctest::Approx(0.0));
  CHECK(s.histogram[0] == 4);
  for (int i = 1; i < 256; ++i) CHECK(s.histogram[i] == 0);
  CHECK_THROWS_AS(map_statistics(Tensor({0, 2})), std::runtime_error);
}

TEST_CASE("map_statistics histogram covers all samples") {
  Rng rng(16);
  Tensor m = random_tensor({5, 5}, rng);
  const MapStatistics s = map_statistics(m);
  std::uint64_t total = 0;
  for (auto v : s.histogram) total += v;
  CHECK(total == 25);
}

TEST_CASE("parameter_count counts the value projection") {
  const MultiHeadCosineAttention cfg =
      MultiHeadCosineAttention::create(8, SimilarityMode::kCosine, 0);
  CHECK(cfg.parameter_count() == 8 * 8 + 8);
}
