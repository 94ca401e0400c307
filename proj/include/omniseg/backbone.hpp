// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "omniseg/nn/layers.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

struct BackboneConfig {
  int in_channels = 3;
  int base_channels = 32;
  /// Number of stride-2 downsamplings.
  int levels = 4;
  /// Width of the fused bottleneck whose spatial mean feeds the controller.
  int bottleneck_channels = 256;
  /// Channels of the decoder map consumed by the dynamic head. Must be 8.
  int decoder_out_channels = 8;
  int groupnorm_groups = 8;

  /// Throws ValidationError describing the first violated constraint.
  void validate() const;
  int channels_at(int level) const { return base_channels << level; }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& doc);

template <typename T>
struct BackboneFeatures {
  Tensor<T> decoder_map;  // N x 8 x H x W
  Tensor<T> gap_feature;  // N x 256
};

/// 2D residual U-Net.
///
/// Encoder level l (channels base*2^l): residual block, kept as the skip
/// tensor, then a stride-2 conv block doubling the width. A 3x3 fusion block
/// maps the deepest map to `bottleneck_channels`; its spatial mean is the GAP
/// feature. Decoder level l: nearest 2x upsample + conv block to the level
/// width, concat with the skip, a merge conv block back to the level width and
/// a residual refinement block. A 1x1 projection yields the decoder map.
template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  /// Images are N x C x H x W with H and W divisible by 2^levels.
  BackboneFeatures<T> forward(const Tensor<T>& images, bool keep_for_backward = true);

  /// Gradients w.r.t. the decoder map and the GAP feature; returns dL/dimages.
  Tensor<T> backward(const Tensor<T>& d_decoder_map, const Tensor<T>& d_gap);

  /// Raw fused bottleneck from the latest forward pass (before pooling).
  const Tensor<T>& bottleneck() const { return bottleneck_; }

  nn::ParameterList<T> parameters();
  nn::Conv2d<T>& output_projection() { return out_proj_; }

 private:
  struct EncoderStage {
    nn::ResidualBlock<T> residual;
    nn::ConvBlock<T> down;
  };
  struct DecoderStage {
    nn::ConvBlock<T> up;
    nn::ConvBlock<T> merge;
    nn::ResidualBlock<T> refine;
    int skip_channels = 0;
  };

  BackboneConfig config_;
  nn::ConvBlock<T> stem_;
  std::vector<EncoderStage> encoder_;
  nn::ConvBlock<T> fusion_;
  // Stored deepest-first so decoder_[0] consumes the bottleneck.
  std::vector<DecoderStage> decoder_;
  nn::Conv2d<T> out_proj_;
  Tensor<T> bottleneck_;
};

}  // namespace omniseg
