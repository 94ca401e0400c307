// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Building blocks with hand-written backward passes. Every layer caches what
// its backward pass needs during forward() when gradients are enabled, so a
// layer instance serves exactly one forward/backward pair at a time.

#pragma once

#include <string>
#include <utility>

#include "omniseg/nn/parameter.hpp"
#include "omniseg/rng.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg::nn {

/// Square-kernel 2D convolution, zero padding of kernel/2, via im2col + GEMM.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride = 1);

  /// He-uniform fan-in weights, zero bias.
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  /// Accumulates parameter gradients and returns dL/dx.
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(ParameterList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  int out_size(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }

  int in_ = 0;
  int out_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

/// Group normalization with per-channel affine terms.
template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int groups, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& dy);

  void collect(ParameterList<T>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  int groups() const { return groups_; }

 private:
  int channels_ = 0;
  int groups_ = 1;
  double eps_ = 1e-5;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> output_;
};

/// conv -> ReLU -> group norm.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, int in_channels, int out_channels, int groups, int stride = 1);

  void init(Rng& rng) { conv_.init(rng); }
  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParameterList<T>& out) {
    conv_.collect(out);
    norm_.collect(out);
  }

  Conv2d<T>& conv() { return conv_; }
  GroupNorm<T>& norm() { return norm_; }

 private:
  Conv2d<T> conv_;
  ReLU<T> relu_;
  GroupNorm<T> norm_;
};

/// x + block2(block1(x)) with 3x3 convolutions at constant width.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int channels, int groups);

  void init(Rng& rng) {
    first_.init(rng);
    second_.init(rng);
  }
  Tensor<T> forward(const Tensor<T>& x, bool keep_for_backward);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(ParameterList<T>& out) {
    first_.collect(out);
    second_.collect(out);
  }

 private:
  ConvBlock<T> first_;
  ConvBlock<T> second_;
};

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);
template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& dy);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Inverse of concat_channels for gradients: splits at channel `first_channels`.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels);

/// N x C x H x W -> N x C spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int height, int width);

}  // namespace omniseg::nn
