// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "omniseg/datamodel.hpp"
#include "omniseg/nn/parameter.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

struct HeadLayerShape {
  int in;
  int out;
  constexpr int weight_count() const { return in * out; }
  constexpr int param_count() const { return in * out + out; }
};

/// Three 1x1 convolutions 8 -> 8 -> 8 -> 2 whose weights come from the
/// controller. Layout of one parameter row, in order:
///   [w1(64) b1(8) w2(64) b2(8) w3(16) b3(2)]
/// with each weight block row-major (out, in).
struct HeadSpec {
  static constexpr std::array<HeadLayerShape, 3> kLayers{{{8, 8}, {8, 8}, {8, 2}}};
  static constexpr int kInputChannels = 8;
  static constexpr int kOutputChannels = 2;

  static constexpr int layer_offset(int layer) {
    int offset = 0;
    for (int i = 0; i < layer; ++i) offset += kLayers[static_cast<size_t>(i)].param_count();
    return offset;
  }
  static constexpr int total_params() { return layer_offset(3); }
};

static_assert(HeadSpec::total_params() == 162);

template <typename T>
struct HeadLayerParams {
  HeadLayerShape shape;
  std::span<const T> weight;  // out x in, row-major
  std::span<const T> bias;    // out
};

/// Partitions a 162-value row into the three head layers. Throws ShapeError
/// on any other length.
template <typename T>
std::array<HeadLayerParams<T>, 3> slice_params(std::span<const T> omega_row);

template <typename T>
struct ControllerOutput {
  Tensor<T> omega;  // N x 162

  int batch() const { return omega.dim(0); }
  std::span<const T> row(int n) const { return omega.slab(n); }
  std::array<HeadLayerParams<T>, 3> slices(int n) const { return slice_params<T>(row(n)); }
};

/// Class-aware controller: a 1x1 convolution over the 1x1-spatial vector
/// GAP(F) || task code || scale code, emitting one head parameter row per
/// sample. Weight is stored (162, feature_dim + m + n).
template <typename T>
class Controller {
 public:
  Controller(int feature_dim, int num_tasks, int num_scales, std::uint64_t seed);

  int feature_dim() const { return feature_dim_; }
  int num_tasks() const { return num_tasks_; }
  int num_scales() const { return num_scales_; }
  int input_dim() const { return feature_dim_ + num_tasks_ + num_scales_; }

  /// gap_feature is N x feature_dim; task and scale spans hold one code per
  /// sample, or a single code broadcast across the batch.
  ControllerOutput<T> forward(const Tensor<T>& gap_feature, std::span<const TaskCode> tasks,
                              std::span<const ScaleCode> scales, bool keep_for_backward = true);

  /// Accumulates weight/bias gradients; returns dL/d gap_feature.
  Tensor<T> backward(const Tensor<T>& d_omega);

  /// The concatenated controller input used by the latest forward pass.
  const Tensor<T>& fused_input() const { return fused_; }

  nn::Parameter<T>& weight() { return weight_; }
  nn::Parameter<T>& bias() { return bias_; }
  nn::ParameterList<T> parameters() { return {&weight_, &bias_}; }

 private:
  int feature_dim_;
  int num_tasks_;
  int num_scales_;
  nn::Parameter<T> weight_;
  nn::Parameter<T> bias_;
  Tensor<T> fused_;
};

template <typename T>
struct Prediction {
  Tensor<T> logits;  // N x 2 x H x W

  /// Channel softmax of the logits.
  Tensor<T> probabilities() const;
  /// Per-sample argmax mask; ties resolve to background.
  std::vector<BinaryMask> masks() const;
};

/// Applies each sample's own head parameters to its decoder map.
template <typename T>
class DynamicHead {
 public:
  Prediction<T> forward(const Tensor<T>& decoder_map, const ControllerOutput<T>& params,
                        bool keep_for_backward = true);

  struct Gradients {
    Tensor<T> d_decoder_map;
    Tensor<T> d_omega;
  };
  Gradients backward(const Tensor<T>& d_logits);

 private:
  Tensor<T> input_;
  Tensor<T> omega_;
  Tensor<T> hidden1_;
  Tensor<T> hidden2_;
};

/// Stateless inference convenience over DynamicHead.
template <typename T>
Prediction<T> head_forward(const Tensor<T>& decoder_map, const ControllerOutput<T>& params);

}  // namespace omniseg
