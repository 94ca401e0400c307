// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/model.hpp"

#include "omniseg/rng.hpp"

namespace omniseg {

template <typename T>
OmniSegNet<T>::OmniSegNet(const BackboneConfig& config, int num_tasks, int num_scales,
                          std::uint64_t seed)
    : backbone_(config, derive_seed({seed, 1})),
      controller_(config.bottleneck_channels, num_tasks, num_scales, derive_seed({seed, 2})) {}

template <typename T>
Prediction<T> OmniSegNet<T>::forward(const Tensor<T>& images, std::span<const TaskCode> tasks,
                                     std::span<const ScaleCode> scales, bool keep) {
  features_ = backbone_.forward(images, keep);
  omega_ = controller_.forward(features_.gap_feature, tasks, scales, keep);
  return head_.forward(features_.decoder_map, omega_, keep);
}

template <typename T>
Tensor<T> OmniSegNet<T>::backward(const Tensor<T>& d_logits) {
  auto head_grads = head_.backward(d_logits);
  Tensor<T> d_gap = controller_.backward(head_grads.d_omega);
  return backbone_.backward(head_grads.d_decoder_map, d_gap);
}

template <typename T>
nn::ParameterList<T> OmniSegNet<T>::parameters() {
  auto params = backbone_.parameters();
  for (auto* p : controller_.parameters()) params.push_back(p);
  return params;
}

template <typename T>
void OmniSegNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image* const> images) {
  if (images.empty()) throw ValidationError("images_to_tensor: empty batch");
  const Image& first = *images.front();
  const int n = static_cast<int>(images.size());
  Tensor<T> out({n, first.channels, first.height, first.width});
  for (int i = 0; i < n; ++i) {
    const Image& img = *images[static_cast<size_t>(i)];
    if (img.channels != first.channels || img.height != first.height || img.width != first.width) {
      throw ShapeError("images_to_tensor: batch mixes image sizes");
    }
    for (int c = 0; c < img.channels; ++c) {
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) out.at(i, c, y, x) = static_cast<T>(img.at(y, x, c));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  const Image* ptr = &image;
  return images_to_tensor<T>(std::span<const Image* const>(&ptr, 1));
}

template class OmniSegNet<float>;
template class OmniSegNet<double>;
template Tensor<float> images_to_tensor<float>(std::span<const Image* const>);
template Tensor<double> images_to_tensor<double>(std::span<const Image* const>);
template Tensor<float> image_to_tensor<float>(const Image&);
template Tensor<double> image_to_tensor<double>(const Image&);

}  // namespace omniseg
