// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "omniseg/backbone.hpp"
#include "omniseg/datamodel.hpp"
#include "omniseg/dynamic_head.hpp"

namespace omniseg {

/// Backbone, controller and dynamic head wired together: the decoder map of
/// each sample is filtered by head parameters generated from its own GAP
/// feature, task code and scale code.
template <typename T>
class OmniSegNet {
 public:
  OmniSegNet(const BackboneConfig& config, int num_tasks, int num_scales, std::uint64_t seed);

  Prediction<T> forward(const Tensor<T>& images, std::span<const TaskCode> tasks,
                        std::span<const ScaleCode> scales, bool keep_for_backward = true);
  /// Backpropagates dL/dlogits through head, controller and backbone;
  /// returns dL/dimages.
  Tensor<T> backward(const Tensor<T>& d_logits);

  nn::ParameterList<T> parameters();
  void zero_grad();

  Backbone<T>& backbone() { return backbone_; }
  Controller<T>& controller() { return controller_; }
  int num_tasks() const { return controller_.num_tasks(); }
  int num_scales() const { return controller_.num_scales(); }

  /// Features and head parameters from the latest forward pass.
  const BackboneFeatures<T>& last_features() const { return features_; }
  const ControllerOutput<T>& last_controller_output() const { return omega_; }

 private:
  Backbone<T> backbone_;
  Controller<T> controller_;
  DynamicHead<T> head_;
  BackboneFeatures<T> features_;
  ControllerOutput<T> omega_;
};

/// Stacks channels-last sample images into an N x C x H x W tensor.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image* const> images);
template <typename T>
Tensor<T> image_to_tensor(const Image& image);

}  // namespace omniseg
