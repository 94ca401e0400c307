// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "omniseg/dynamic_head.hpp"
#include "omniseg/errors.hpp"

namespace omniseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'M', 'N', 'I', 'S', 'E', 'G', '1'};

nlohmann::json head_layout() {
  nlohmann::json layout = nlohmann::json::array();
  const char* names[3] = {"1", "2", "3"};
  for (int l = 0; l < 3; ++l) {
    const auto shape = HeadSpec::kLayers[static_cast<size_t>(l)];
    const int offset = HeadSpec::layer_offset(l);
    layout.push_back({{"name", std::string("w") + names[l]},
                      {"offset", offset},
                      {"shape", {shape.out, shape.in, 1, 1}}});
    layout.push_back({{"name", std::string("b") + names[l]},
                      {"offset", offset + shape.weight_count()},
                      {"shape", {shape.out}}});
  }
  return {{"total", HeadSpec::total_params()}, {"slices", layout}};
}

}  // namespace

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
std::vector<NamedTensor> snapshot_parameters(OmniSegNet<T>& net) {
  std::vector<NamedTensor> out;
  for (auto* p : net.parameters()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

template <typename T>
void restore_parameters(OmniSegNet<T>& net, const Checkpoint& checkpoint) {
  for (auto* p : net.parameters()) {
    const NamedTensor* stored = checkpoint.find(p->name);
    if (stored == nullptr) throw SchemaError("checkpoint lacks parameter '" + p->name + "'");
    if (stored->value.shape() != p->value.shape()) {
      throw SchemaError("parameter '" + p->name + "' has shape " +
                        shape_str(stored->value.shape()) + " in checkpoint, network expects " +
                        shape_str(p->value.shape()));
    }
    p->value = stored->value.template cast<T>();
  }
}

OmniSegNet<float> build_network(const Checkpoint& checkpoint) {
  OmniSegNet<float> net(checkpoint.backbone, checkpoint.registries.classes.size(),
                        checkpoint.registries.scales.size(), 0);
  restore_parameters(net, checkpoint);
  return net;
}

void require_registries(const Checkpoint& checkpoint, const Registries& expected) {
  if (!(checkpoint.registries == expected)) {
    throw SchemaError("checkpoint registries differ from the active registries: checkpoint has " +
                      registries_to_json(checkpoint.registries).dump() + ", expected " +
                      registries_to_json(expected).dump());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  nlohmann::json header;
  header["format"] = "omniseg-checkpoint";
  header["version"] = 1;
  header["epoch"] = checkpoint.epoch;
  header["val_mean_dsc"] = checkpoint.val_mean_dsc;
  header["image_size"] = checkpoint.image_size;
  header["backbone"] = to_json(checkpoint.backbone);
  header["registries"] = registries_to_json(checkpoint.registries);
  header["train_config"] = checkpoint.train_config;
  header["dynamic_head"] = head_layout();
  header["dtype"] = "float32";
  nlohmann::json index = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& t : checkpoint.tensors) {
    index.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset},
                     {"count", t.value.size()}});
    offset += t.value.size();
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : checkpoint.tensors) {
      out.write(reinterpret_cast<const char*>(t.value.data()),
                static_cast<std::streamsize>(t.value.size() * sizeof(float)));
    }
    if (!out) throw RuntimeFailure("cannot write checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0 || len > (1u << 30)) {
    throw SchemaError(path.string() + " is not an omniseg checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw SchemaError(path.string() + ": truncated header");

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("format") != "omniseg-checkpoint" || header.at("version") != 1) {
      throw SchemaError(path.string() + ": unsupported checkpoint format");
    }
    if (header.at("dynamic_head").at("total").get<int>() != HeadSpec::total_params()) {
      throw SchemaError(path.string() + ": dynamic head size differs from 162");
    }
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.val_mean_dsc = header.at("val_mean_dsc").get<double>();
    ckpt.image_size = header.at("image_size").get<int>();
    ckpt.backbone = backbone_config_from_json(header.at("backbone"));
    ckpt.registries = registries_from_json(header.at("registries"));
    ckpt.train_config = header.at("train_config");
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t{entry.at("name").get<std::string>(),
                    Tensor<float>(entry.at("shape").get<Shape>())};
      if (t.value.size() != entry.at("count").get<size_t>()) {
        throw SchemaError(path.string() + ": tensor '" + t.name + "' count mismatch");
      }
      in.read(reinterpret_cast<char*>(t.value.data()),
              static_cast<std::streamsize>(t.value.size() * sizeof(float)));
      if (!in) throw SchemaError(path.string() + ": truncated payload at '" + t.name + "'");
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  return ckpt;
}

template std::vector<NamedTensor> snapshot_parameters(OmniSegNet<float>&);
template std::vector<NamedTensor> snapshot_parameters(OmniSegNet<double>&);
template void restore_parameters(OmniSegNet<float>&, const Checkpoint&);
template void restore_parameters(OmniSegNet<double>&, const Checkpoint&);

}  // namespace omniseg
