// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "omniseg/backbone.hpp"
#include "omniseg/errors.hpp"
#include "omniseg/nn/layers.hpp"
#include "oracles.hpp"

namespace omniseg {
namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Direct nested-loop convolution with zero padding k/2.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                          int stride) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), k = w.dim(2), pad = k / 2;
  const int oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, co, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b[static_cast<size_t>(o)];
          for (int c = 0; c < ci; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = yy * stride + ky - pad, ix = xx * stride + kx - pad;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                acc += w.at(o, c, ky, kx) * x.at(s, c, iy, ix);
              }
          y.at(s, o, yy, xx) = acc;
        }
  return y;
}

TEST(Conv2d, MatchesNaiveConvolution) {
  for (int stride : {1, 2}) {
    for (int k : {1, 3}) {
      nn::Conv2d<double> conv("c", 3, 5, k, stride);
      Rng rng(4);
      conv.init(rng);
      for (auto& v : conv.bias().value.values()) v = rng.uniform(-1, 1);
      const auto x = random_tensor({2, 3, 6, 6}, 9);
      const auto y = conv.forward(x, false);
      const auto ref = naive_conv(x, conv.weight().value, conv.bias().value, stride);
      ASSERT_EQ(y.shape(), ref.shape());
      for (size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv2d, InitIsDeterministicAndHeBounded) {
  nn::Conv2d<float> a("c", 4, 6, 3), b("c", 4, 6, 3);
  Rng ra(3), rb(3);
  a.init(ra);
  b.init(rb);
  EXPECT_EQ(a.weight().value.values().size(), 6u * 4 * 9);
  const double bound = std::sqrt(6.0 / (4 * 9));
  for (size_t i = 0; i < a.weight().value.size(); ++i) {
    EXPECT_EQ(a.weight().value[i], b.weight().value[i]);
    EXPECT_LE(std::abs(a.weight().value[i]), bound);
  }
}

TEST(GroupNorm, PerGroupMomentsAtIdentityAffine) {
  nn::GroupNorm<double> gn("gn", 12, 4);
  const auto x = random_tensor({3, 12, 5, 7}, 17, -3.0, 5.0);
  const auto y = gn.forward(x, false);
  const int per = 3 * 5 * 7;
  for (int n = 0; n < 3; ++n) {
    for (int g = 0; g < 4; ++g) {
      double sum = 0, sq = 0;
      for (int c = g * 3; c < g * 3 + 3; ++c)
        for (int h = 0; h < 5; ++h)
          for (int w = 0; w < 7; ++w) sum += y.at(n, c, h, w);
      const double mean = sum / per;
      for (int c = g * 3; c < g * 3 + 3; ++c)
        for (int h = 0; h < 5; ++h)
          for (int w = 0; w < 7; ++w) sq += (y.at(n, c, h, w) - mean) * (y.at(n, c, h, w) - mean);
      EXPECT_NEAR(mean, 0.0, 1e-4);
      EXPECT_NEAR(sq / per, 1.0, 1e-4);
    }
  }
}

TEST(GroupNorm, RejectsIndivisibleGroups) {
  EXPECT_THROW(nn::GroupNorm<float>("gn", 10, 4), ValidationError);
}

template <typename Layer>
void check_layer_gradient(Layer& layer, const Tensor<double>& x, std::uint64_t seed) {
  // Scalar loss = <r, layer(x)> for a fixed random r.
  const auto y0 = layer.forward(x, false);
  const auto r = random_tensor(y0.shape(), seed);
  auto loss = [&](const Tensor<double>& in) {
    const auto y = layer.forward(in, false);
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  layer.forward(x, true);
  const auto dx = layer.backward(r);
  Tensor<double> probe = x;
  std::vector<double> fd, an;
  for (size_t i = 0; i < probe.size(); ++i) {
    fd.push_back(oracle::central_difference([&] { return loss(probe); }, probe[i], 1e-6));
    an.push_back(dx[i]);
  }
  EXPECT_LT(oracle::relative_error(an, fd), 1e-6);
}

TEST(LayerGradients, ConvBlockAndResidual) {
  nn::ConvBlock<double> block("b", 4, 8, 4, 2);
  Rng rng(5);
  block.init(rng);
  check_layer_gradient(block, random_tensor({2, 4, 6, 6}, 1), 2);
  nn::ResidualBlock<double> res("r", 4, 2);
  res.init(rng);
  check_layer_gradient(res, random_tensor({1, 4, 5, 5}, 3), 4);
}

TEST(Functional, UpsampleConcatSplitPool) {
  const auto x = random_tensor({2, 3, 2, 3}, 8);
  const auto up = nn::upsample_nearest2x(x);
  ASSERT_EQ(up.shape(), (Shape{2, 3, 4, 6}));
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 6; ++w) EXPECT_EQ(up.at(1, 2, h, w), x.at(1, 2, h / 2, w / 2));
  const auto back = nn::upsample_nearest2x_backward(Tensor<double>({2, 3, 4, 6}, 1.0));
  for (auto v : back.values()) EXPECT_EQ(v, 4.0);

  const auto y = random_tensor({2, 5, 2, 3}, 9);
  const auto cat = nn::concat_channels(x, y);
  ASSERT_EQ(cat.dim(1), 8);
  auto [a, b] = nn::split_channels(cat, 3);
  EXPECT_EQ(a.values().size(), x.size());
  for (size_t i = 0; i < x.size(); ++i) EXPECT_EQ(a[i], x[i]);
  for (size_t i = 0; i < y.size(); ++i) EXPECT_EQ(b[i], y[i]);

  const auto gap = nn::global_avg_pool(x);
  ASSERT_EQ(gap.shape(), (Shape{2, 3}));
  double s = 0;
  for (int h = 0; h < 2; ++h)
    for (int w = 0; w < 3; ++w) s += x.at(1, 1, h, w);
  EXPECT_NEAR(gap[1 * 3 + 1], s / 6.0, 1e-15);
}

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.base_channels = 8;
  cfg.levels = 2;
  cfg.groupnorm_groups = 4;
  return cfg;
}

TEST(Backbone, DefaultShapes) {
  Backbone<float> net(BackboneConfig{}, 1);
  Tensor<float> x({1, 3, 512, 512}, 0.5f);
  const auto f = net.forward(x, false);
  EXPECT_EQ(f.decoder_map.shape(), (Shape{1, 8, 512, 512}));
  EXPECT_EQ(f.gap_feature.shape(), (Shape{1, 256}));
  EXPECT_TRUE(f.gap_feature.all_finite());
}

TEST(Backbone, SpatialDimsPreservedForValidSizes) {
  Backbone<float> net(small_config(), 2);
  for (auto [h, w] : {std::pair{8, 8}, {12, 20}, {16, 4}}) {
    Tensor<float> x({2, 3, h, w}, 0.1f);
    const auto f = net.forward(x, false);
    EXPECT_EQ(f.decoder_map.shape(), (Shape{2, 8, h, w}));
  }
}

TEST(Backbone, Divisibility) {
  BackboneConfig cfg = small_config();
  cfg.levels = 4;
  Backbone<float> net(cfg, 3);
  EXPECT_NO_THROW(net.forward(Tensor<float>({1, 3, 48, 48}, 0.2f), false));
  EXPECT_THROW(net.forward(Tensor<float>({1, 3, 50, 50}, 0.2f), false), ShapeError);
}

TEST(Backbone, RejectsNonFiniteInput) {
  Backbone<float> net(small_config(), 3);
  Tensor<float> x({1, 3, 8, 8}, 0.2f);
  x[5] = std::nanf("");
  EXPECT_THROW(net.forward(x, false), ValidationError);
}

TEST(Backbone, ConfigValidation) {
  BackboneConfig cfg;
  cfg.decoder_out_channels = 16;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = BackboneConfig{};
  cfg.groupnorm_groups = 7;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Backbone, ZeroProjectionGivesZeroMap) {
  Backbone<double> net(small_config(), 4);
  net.output_projection().weight().value.fill(0.0);
  net.output_projection().bias().value.fill(0.0);
  const auto f = net.forward(random_tensor({2, 3, 8, 8}, 5, 0.0, 1.0), false);
  for (auto v : f.decoder_map.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, IdenticalImagesGiveIdenticalRows) {
  Backbone<float> net(small_config(), 5);
  Tensor<float> x({2, 3, 8, 8});
  Rng rng(6);
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 8; ++w) x.at(0, c, h, w) = x.at(1, c, h, w) = static_cast<float>(rng.uniform());
  const auto f = net.forward(x, false);
  const auto m0 = f.decoder_map.slab(0), m1 = f.decoder_map.slab(1);
  for (size_t i = 0; i < m0.size(); ++i) EXPECT_EQ(m0[i], m1[i]);
  const auto g0 = f.gap_feature.slab(0), g1 = f.gap_feature.slab(1);
  for (size_t i = 0; i < g0.size(); ++i) EXPECT_EQ(g0[i], g1[i]);
}

TEST(Backbone, GapIsSpatialMeanOfBottleneck) {
  Backbone<double> net(small_config(), 6);
  const auto f = net.forward(random_tensor({2, 3, 16, 12}, 7, 0.0, 1.0), false);
  const auto& z = net.bottleneck();
  ASSERT_EQ(z.dim(1), 256);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 256; ++c) {
      double s = 0;
      for (int h = 0; h < z.dim(2); ++h)
        for (int w = 0; w < z.dim(3); ++w) s += z.at(n, c, h, w);
      EXPECT_NEAR(f.gap_feature[static_cast<size_t>(n) * 256 + c], s / (z.dim(2) * z.dim(3)), 1e-12);
    }
  }
}

TEST(Backbone, SeedDeterminesWeights) {
  Backbone<float> a(small_config(), 9), b(small_config(), 9), c(small_config(), 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    for (size_t k = 0; k < pa[i]->value.size(); ++k) {
      EXPECT_EQ(pa[i]->value[k], pb[i]->value[k]);
      differs |= pa[i]->value[k] != pc[i]->value[k];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Backbone, InputGradientOfSumMatchesFiniteDifferences) {
  Backbone<double> net(small_config(), 11);
  auto x = random_tensor({1, 3, 16, 16}, 12, 0.0, 1.0);
  auto loss = [&] {
    const auto f = net.forward(x, false);
    double s = 0;
    for (auto v : f.decoder_map.values()) s += v;
    return s;
  };
  const auto f = net.forward(x, true);
  const auto dx = net.backward(Tensor<double>(f.decoder_map.shape(), 1.0),
                               Tensor<double>(f.gap_feature.shape(), 0.0));
  std::vector<double> fd, an;
  for (size_t i = 0; i < x.size(); ++i) {
    fd.push_back(oracle::central_difference(loss, x[i], 1e-7));
    an.push_back(dx[i]);
  }
  EXPECT_LT(oracle::relative_error(an, fd), 1e-3);
}

}  // namespace
}  // namespace omniseg
