// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/backbone.hpp"

#include <string>

#include <nlohmann/json.hpp>

#include "omniseg/rng.hpp"

namespace omniseg {

void BackboneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("backbone config: " + msg); };
  if (in_channels <= 0) fail("in_channels must be positive");
  if (base_channels <= 0) fail("base_channels must be positive");
  if (levels < 1 || levels > 8) fail("levels must lie in [1, 8]");
  if (bottleneck_channels <= 0) fail("bottleneck_channels must be positive");
  if (decoder_out_channels != 8) {
    fail("decoder_out_channels must be 8 to feed the 162-parameter dynamic head");
  }
  if (groupnorm_groups <= 0) fail("groupnorm_groups must be positive");
  for (int l = 0; l <= levels; ++l) {
    if (channels_at(l) % groupnorm_groups != 0) {
      fail(std::to_string(groupnorm_groups) + " groups do not divide " +
           std::to_string(channels_at(l)) + " channels at level " + std::to_string(l));
    }
  }
  if (bottleneck_channels % groupnorm_groups != 0) {
    fail("groupnorm_groups must divide bottleneck_channels");
  }
}

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"in_channels", c.in_channels},
          {"base_channels", c.base_channels},
          {"levels", c.levels},
          {"bottleneck_channels", c.bottleneck_channels},
          {"decoder_out_channels", c.decoder_out_channels},
          {"groupnorm_groups", c.groupnorm_groups}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& doc) {
  BackboneConfig c;
  try {
    c.in_channels = doc.at("in_channels").get<int>();
    c.base_channels = doc.at("base_channels").get<int>();
    c.levels = doc.at("levels").get<int>();
    c.bottleneck_channels = doc.at("bottleneck_channels").get<int>();
    c.decoder_out_channels = doc.at("decoder_out_channels").get<int>();
    c.groupnorm_groups = doc.at("groupnorm_groups").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int groups = config_.groupnorm_groups;
  const int levels = config_.levels;
  stem_ = nn::ConvBlock<T>("stem", config_.in_channels, config_.base_channels, groups);
  for (int l = 0; l < levels; ++l) {
    const std::string prefix = "encoder." + std::to_string(l);
    encoder_.push_back({nn::ResidualBlock<T>(prefix + ".res", config_.channels_at(l), groups),
                        nn::ConvBlock<T>(prefix + ".down", config_.channels_at(l),
                                         config_.channels_at(l + 1), groups, 2)});
  }
  fusion_ = nn::ConvBlock<T>("fusion", config_.channels_at(levels), config_.bottleneck_channels,
                             groups);
  int incoming = config_.bottleneck_channels;
  for (int l = levels - 1; l >= 0; --l) {
    const std::string prefix = "decoder." + std::to_string(l);
    const int width = config_.channels_at(l);
    decoder_.push_back({nn::ConvBlock<T>(prefix + ".up", incoming, width, groups),
                        nn::ConvBlock<T>(prefix + ".merge", 2 * width, width, groups),
                        nn::ResidualBlock<T>(prefix + ".res", width, groups), width});
    incoming = width;
  }
  out_proj_ = nn::Conv2d<T>("decoder.out", config_.base_channels, config_.decoder_out_channels, 1);

  // Initialization order is fixed by construction order, so a seed maps to
  // exactly one set of weights.
  Rng rng(derive_seed({seed, 0xb0b0ULL}));
  stem_.init(rng);
  for (auto& stage : encoder_) {
    stage.residual.init(rng);
    stage.down.init(rng);
  }
  fusion_.init(rng);
  for (auto& stage : decoder_) {
    stage.up.init(rng);
    stage.merge.init(rng);
    stage.refine.init(rng);
  }
  out_proj_.init(rng);
}

template <typename T>
BackboneFeatures<T> Backbone<T>::forward(const Tensor<T>& images, bool keep) {
  if (images.rank() != 4 || images.dim(1) != config_.in_channels) {
    throw ShapeError("backbone expects N x " + std::to_string(config_.in_channels) +
                     " x H x W input, got " + shape_str(images.shape()));
  }
  const int factor = 1 << config_.levels;
  if (images.dim(2) % factor != 0 || images.dim(3) % factor != 0 || images.dim(2) == 0 ||
      images.dim(3) == 0) {
    throw ShapeError("input " + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                     " is not divisible by 2^levels = " + std::to_string(factor));
  }
  if (!images.all_finite()) throw ValidationError("backbone input contains non-finite values");

  std::vector<Tensor<T>> skips;
  Tensor<T> x = stem_.forward(images, keep);
  for (auto& stage : encoder_) {
    x = stage.residual.forward(x, keep);
    skips.push_back(x);
    x = stage.down.forward(x, keep);
  }
  bottleneck_ = fusion_.forward(x, keep);
  BackboneFeatures<T> features;
  features.gap_feature = nn::global_avg_pool(bottleneck_);

  x = bottleneck_;
  for (size_t i = 0; i < decoder_.size(); ++i) {
    auto& stage = decoder_[i];
    x = stage.up.forward(nn::upsample_nearest2x(x), keep);
    x = stage.merge.forward(nn::concat_channels(x, skips[skips.size() - 1 - i]), keep);
    x = stage.refine.forward(x, keep);
  }
  features.decoder_map = out_proj_.forward(x, keep);
  return features;
}

template <typename T>
Tensor<T> Backbone<T>::backward(const Tensor<T>& d_decoder_map, const Tensor<T>& d_gap) {
  Tensor<T> g = out_proj_.backward(d_decoder_map);
  std::vector<Tensor<T>> d_skips(decoder_.size());
  for (size_t i = decoder_.size(); i-- > 0;) {
    auto& stage = decoder_[i];
    g = stage.merge.backward(stage.refine.backward(g));
    auto [d_up, d_skip] = nn::split_channels(g, stage.skip_channels);
    d_skips[decoder_.size() - 1 - i] = std::move(d_skip);
    g = nn::upsample_nearest2x_backward(stage.up.backward(d_up));
  }
  g += nn::global_avg_pool_backward(d_gap, bottleneck_.dim(2), bottleneck_.dim(3));
  g = fusion_.backward(g);
  for (int l = static_cast<int>(encoder_.size()) - 1; l >= 0; --l) {
    g = encoder_[l].down.backward(g);
    g += d_skips[l];
    g = encoder_[l].residual.backward(g);
  }
  return stem_.backward(g);
}

template <typename T>
nn::ParameterList<T> Backbone<T>::parameters() {
  nn::ParameterList<T> out;
  stem_.collect(out);
  for (auto& stage : encoder_) {
    stage.residual.collect(out);
    stage.down.collect(out);
  }
  fusion_.collect(out);
  for (auto& stage : decoder_) {
    stage.up.collect(out);
    stage.merge.collect(out);
    stage.refine.collect(out);
  }
  out_proj_.collect(out);
  return out;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace omniseg
