// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Checkpoint archive layout:
//   8 bytes   magic "OMNISEG1"
//   8 bytes   little-endian length L of the JSON header
//   L bytes   UTF-8 JSON header: epoch, validation DSC, image size, backbone
//             config, registries, dynamic-head parameter layout and a tensor
//             index {name, shape, offset, count}
//   payload   little-endian float32 values, tensors back to back

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "omniseg/backbone.hpp"
#include "omniseg/datamodel.hpp"
#include "omniseg/model.hpp"

namespace omniseg {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  int epoch = 0;
  double val_mean_dsc = 0.0;
  /// Side length of the square training images; inference inputs must match.
  int image_size = 0;
  BackboneConfig backbone;
  Registries registries;
  nlohmann::json train_config = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

template <typename T>
std::vector<NamedTensor> snapshot_parameters(OmniSegNet<T>& net);

/// Copies stored tensors into `net`. Throws SchemaError on a missing name or
/// a shape mismatch.
template <typename T>
void restore_parameters(OmniSegNet<T>& net, const Checkpoint& checkpoint);

/// Rebuilds the network described by the checkpoint and loads its weights.
OmniSegNet<float> build_network(const Checkpoint& checkpoint);

/// Throws SchemaError unless the checkpoint's registries equal `expected`.
void require_registries(const Checkpoint& checkpoint, const Registries& expected);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace omniseg
