// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "omniseg/dynamic_head.hpp"
#include "omniseg/errors.hpp"
#include "omniseg/losses_metrics.hpp"
#include "oracles.hpp"

namespace omniseg {
namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> to_vector(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(HeadSpec, BudgetIs162) {
  EXPECT_EQ(HeadSpec::total_params(), 162);
  EXPECT_EQ(HeadSpec::kLayers[0].param_count(), 72);
  EXPECT_EQ(HeadSpec::kLayers[1].param_count(), 72);
  EXPECT_EQ(HeadSpec::kLayers[2].param_count(), 18);
}

TEST(SliceParams, IotaLayout) {
  std::vector<double> iota(162);
  std::iota(iota.begin(), iota.end(), 0.0);
  const auto s = slice_params<double>(iota);
  EXPECT_EQ(s[0].weight.front(), 0.0);
  EXPECT_EQ(s[0].weight.size(), 64u);
  EXPECT_EQ(s[0].bias.front(), 64.0);
  EXPECT_EQ(s[1].weight.front(), 72.0);
  EXPECT_EQ(s[1].weight.back(), 135.0);
  EXPECT_EQ(s[1].bias.front(), 136.0);
  EXPECT_EQ(s[2].weight.front(), 144.0);
  EXPECT_EQ(s[2].weight.size(), 16u);
  EXPECT_EQ(to_vector(s[2].bias), (std::vector<double>{160.0, 161.0}));
}

TEST(SliceParams, PartitionRoundTrip) {
  const auto omega = random_tensor({1, 162}, 3);
  const auto s = slice_params<double>(omega.values());
  std::vector<double> joined;
  for (const auto& layer : s) {
    joined.insert(joined.end(), layer.weight.begin(), layer.weight.end());
    joined.insert(joined.end(), layer.bias.begin(), layer.bias.end());
  }
  EXPECT_EQ(joined, to_vector(omega.values()));
}

TEST(SliceParams, WrongLength) {
  std::vector<double> v(161);
  EXPECT_THROW(slice_params<double>(v), ShapeError);
  v.resize(163);
  EXPECT_THROW(slice_params<double>(v), ShapeError);
}

TEST(Controller, MatchesDenseAffineOracle) {
  Controller<double> ctrl(256, 7, 4, 5);
  Rng rng(6);
  for (auto& b : ctrl.bias().value.values()) b = rng.uniform(-0.5, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto gap = random_tensor({1, 256}, 100 + trial);
    const int t = static_cast<int>(rng.uniform_int(0, 6)), s = static_cast<int>(rng.uniform_int(0, 3));
    std::vector<TaskCode> tc{encode_task(t, 7)};
    std::vector<ScaleCode> sc{encode_scale(s, 4)};
    const auto out = ctrl.forward(gap, tc, sc, false);
    ASSERT_EQ(out.omega.shape(), (Shape{1, 162}));
    std::vector<double> x = to_vector(gap.values());
    for (int k = 0; k < 7; ++k) x.push_back(k == t);
    for (int k = 0; k < 4; ++k) x.push_back(k == s);
    const auto ref = oracle::dense_affine(ctrl.weight().value.values(), ctrl.bias().value.values(), x);
    EXPECT_LT(oracle::relative_error(to_vector(out.omega.values()), ref), 1e-12);
  }
}

TEST(Controller, ZeroParamsGiveZeroOmega) {
  Controller<double> ctrl(256, 7, 4, 5);
  ctrl.weight().value.fill(0.0);
  std::vector<TaskCode> tc{encode_task(1, 7)};
  std::vector<ScaleCode> sc{encode_scale(1, 4)};
  const auto out = ctrl.forward(random_tensor({3, 256}, 2), tc, sc, false);
  for (auto v : out.omega.values()) EXPECT_EQ(v, 0.0);
}

TEST(Controller, LengthMismatchNames267) {
  Controller<double> ctrl(256, 7, 4, 5);
  std::vector<TaskCode> tc{encode_task(1, 8)};
  std::vector<ScaleCode> sc{encode_scale(1, 4)};
  try {
    ctrl.forward(random_tensor({1, 256}, 2), tc, sc, false);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("267"), std::string::npos) << e.what();
  }
  std::vector<TaskCode> ok{encode_task(1, 7)};
  EXPECT_THROW(ctrl.forward(random_tensor({1, 255}, 2), ok, sc, false), ShapeError);
}

TEST(Controller, TaskSensitivity) {
  Controller<double> ctrl(256, 7, 4, 8);
  const auto gap = random_tensor({1, 256}, 9);
  std::vector<ScaleCode> sc{encode_scale(2, 4)};
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 7; ++t) {
    std::vector<TaskCode> tc{encode_task(t, 7)};
    rows.push_back(to_vector(ctrl.forward(gap, tc, sc, false).omega.values()));
  }
  for (int i = 0; i < 7; ++i)
    for (int j = i + 1; j < 7; ++j) EXPECT_NE(rows[static_cast<size_t>(i)], rows[static_cast<size_t>(j)]);
  std::vector<TaskCode> tc{encode_task(3, 7)};
  EXPECT_EQ(to_vector(ctrl.forward(gap, tc, sc, false).omega.values()), rows[3]);
}

TEST(DynamicHead, MatchesPointwiseMlpOracle) {
  const auto m = random_tensor({2, 8, 8, 8}, 21);
  ControllerOutput<double> params{random_tensor({2, 162}, 22)};
  const auto pred = head_forward(m, params);
  ASSERT_EQ(pred.logits.shape(), (Shape{2, 2, 8, 8}));
  double worst = 0;
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        std::vector<double> px(8);
        for (int c = 0; c < 8; ++c) px[static_cast<size_t>(c)] = m.at(n, c, y, x);
        const auto z = oracle::pointwise_head(params.row(n), px);
        worst = std::max({worst, std::abs(z[0] - pred.logits.at(n, 0, y, x)),
                          std::abs(z[1] - pred.logits.at(n, 1, y, x))});
      }
  EXPECT_LT(worst, 1e-12);
}

TEST(DynamicHead, ZeroOmega) {
  ControllerOutput<double> params{Tensor<double>({1, 162})};
  const auto pred = head_forward(random_tensor({1, 8, 4, 4}, 1), params);
  for (auto v : pred.logits.values()) EXPECT_EQ(v, 0.0);
  const auto prob = pred.probabilities();
  for (auto v : prob.values()) EXPECT_EQ(v, 0.5);
  EXPECT_EQ(pred.masks().front().foreground(), 0u);
}

TEST(DynamicHead, IdentityComposition) {
  Tensor<double> omega({1, 162});
  for (int i = 0; i < 8; ++i) {
    omega[static_cast<size_t>(i * 8 + i)] = 1.0;
    omega[static_cast<size_t>(72 + i * 8 + i)] = 1.0;
  }
  omega[144 + 0] = 1.0;      // row 0 picks channel 0
  omega[144 + 8 + 1] = 1.0;  // row 1 picks channel 1
  const auto m = random_tensor({1, 8, 5, 5}, 4, 0.0, 1.0);
  const auto pred = head_forward(m, ControllerOutput<double>{omega});
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) {
      EXPECT_DOUBLE_EQ(pred.logits.at(0, 0, y, x), m.at(0, 0, y, x));
      EXPECT_DOUBLE_EQ(pred.logits.at(0, 1, y, x), m.at(0, 1, y, x));
    }
}

TEST(DynamicHead, PixelLocality) {
  auto m = random_tensor({1, 8, 6, 6}, 31);
  ControllerOutput<double> params{random_tensor({1, 162}, 32)};
  const auto before = head_forward(m, params);
  for (int c = 0; c < 8; ++c) m.at(0, c, 2, 3) += 0.7;
  const auto after = head_forward(m, params);
  for (int k = 0; k < 2; ++k)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        if (y == 2 && x == 3) {
          EXPECT_NE(after.logits.at(0, k, y, x), before.logits.at(0, k, y, x));
        } else {
          EXPECT_EQ(after.logits.at(0, k, y, x), before.logits.at(0, k, y, x));
        }
      }
}

TEST(DynamicHead, BatchPermutation) {
  const auto m = random_tensor({3, 8, 4, 4}, 41);
  const auto omega = random_tensor({3, 162}, 42);
  const auto base = head_forward(m, ControllerOutput<double>{omega});
  const int perm[3] = {2, 0, 1};
  Tensor<double> pm(m.shape()), po(omega.shape());
  for (int i = 0; i < 3; ++i) {
    std::ranges::copy(m.slab(perm[i]), pm.slab(i).begin());
    std::ranges::copy(omega.slab(perm[i]), po.slab(i).begin());
  }
  const auto permuted = head_forward(pm, ControllerOutput<double>{po});
  for (int i = 0; i < 3; ++i) EXPECT_EQ(to_vector(permuted.logits.slab(i)), to_vector(base.logits.slab(perm[i])));
}

TEST(DynamicHead, ChannelMismatch) {
  ControllerOutput<double> params{random_tensor({1, 162}, 1)};
  EXPECT_THROW(head_forward(random_tensor({1, 7, 4, 4}, 2), params), ShapeError);
  ControllerOutput<double> two{random_tensor({2, 162}, 1)};
  EXPECT_THROW(head_forward(random_tensor({3, 8, 4, 4}, 2), two), ShapeError);
}

TEST(DynamicHead, TiesResolveToBackground) {
  Tensor<double> logits({1, 2, 1, 3});
  logits.at(0, 0, 0, 0) = 1.0, logits.at(0, 1, 0, 0) = 1.0;
  logits.at(0, 0, 0, 1) = 0.0, logits.at(0, 1, 0, 1) = 0.5;
  logits.at(0, 0, 0, 2) = 0.5, logits.at(0, 1, 0, 2) = 0.0;
  const auto mask = Prediction<double>{logits}.masks().front();
  EXPECT_EQ(mask.pixels, (std::vector<std::uint8_t>{0, 1, 0}));
}

// Loss through controller -> slice -> head w.r.t. the controller parameters.
TEST(DynamicHead, ControllerGradientMatchesFiniteDifferences) {
  Controller<double> ctrl(256, 7, 4, 51);
  DynamicHead<double> head;
  const auto gap = random_tensor({2, 256}, 52);
  const auto m = random_tensor({2, 8, 8, 8}, 53);
  std::vector<TaskCode> tc{encode_task(1, 7), encode_task(5, 7)};
  std::vector<ScaleCode> sc{encode_scale(0, 4), encode_scale(3, 4)};
  Rng rng(54);
  std::vector<BinaryMask> masks{oracle::random_mask(rng, 8, 8, 0.4), oracle::random_mask(rng, 8, 8, 0.6)};
  std::vector<WeightMap> weights{boundary_weight_map(masks[0]), boundary_weight_map(masks[1])};

  auto loss = [&] {
    const auto omega = ctrl.forward(gap, tc, sc, false);
    return total_loss<double>(head_forward(m, omega).logits, masks, weights).total;
  };
  const auto omega = ctrl.forward(gap, tc, sc, true);
  const auto pred = head.forward(m, omega, true);
  const auto value = total_loss<double>(pred.logits, masks, weights);
  const auto grads = head.backward(value.d_logits);
  ctrl.weight().zero_grad();
  ctrl.bias().zero_grad();
  ctrl.backward(grads.d_omega);

  std::vector<double> an, fd;
  for (auto* p : ctrl.parameters()) {
    for (int k = 0; k < 200; ++k) {
      const size_t i = static_cast<size_t>(rng.uniform_int(0, static_cast<long>(p->value.size()) - 1));
      an.push_back(p->grad[i]);
      fd.push_back(oracle::central_difference(loss, p->value[i], 1e-6));
    }
  }
  EXPECT_LT(oracle::relative_error(an, fd), 1e-3);
}

TEST(DynamicHead, DecoderMapGradientMatchesFiniteDifferences) {
  DynamicHead<double> head;
  auto m = random_tensor({1, 8, 4, 4}, 61);
  const ControllerOutput<double> omega{random_tensor({1, 162}, 62)};
  const auto r = random_tensor({1, 2, 4, 4}, 63);
  auto loss = [&] {
    const auto p = head_forward(m, omega);
    double s = 0;
    for (size_t i = 0; i < r.size(); ++i) s += r[i] * p.logits[i];
    return s;
  };
  head.forward(m, omega, true);
  const auto g = head.backward(r);
  std::vector<double> an, fd;
  for (size_t i = 0; i < m.size(); ++i) {
    an.push_back(g.d_decoder_map[i]);
    fd.push_back(oracle::central_difference(loss, m[i], 1e-6));
  }
  EXPECT_LT(oracle::relative_error(an, fd), 1e-6);
}

}  // namespace
}  // namespace omniseg
