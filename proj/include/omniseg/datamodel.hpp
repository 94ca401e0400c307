// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace omniseg {

/// One-hot code of fixed length with exactly one active position.
/// TaskCode and ScaleCode are distinct instantiations so that a tissue code
/// can never be passed where a magnification code is expected.
template <typename Tag>
class OneHotCode {
 public:
  /// Throws IndexError when `index` is outside [0, length).
  static OneHotCode encode(int index, int length);

  int length() const { return static_cast<int>(bits_.size()); }
  /// Position of the active element.
  int index() const { return index_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const OneHotCode&, const OneHotCode&) = default;

 private:
  OneHotCode(int index, std::vector<std::uint8_t> bits) : index_(index), bits_(std::move(bits)) {}

  int index_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct TaskTag;
struct ScaleTag;
using TaskCode = OneHotCode<TaskTag>;
using ScaleCode = OneHotCode<ScaleTag>;

TaskCode encode_task(int task_id, int m);
ScaleCode encode_scale(int scale_id, int n);

/// Recovers the id from a raw 0/1 vector; rejects anything not one-hot.
int decode_one_hot(const std::vector<std::uint8_t>& bits);

struct ClassEntry {
  int id = 0;
  std::string name;
  std::string semantic_label;
  friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

class ClassRegistry {
 public:
  ClassRegistry() = default;
  /// Validates contiguous ids and unique names.
  explicit ClassRegistry(std::vector<ClassEntry> entries);

  int size() const { return static_cast<int>(entries_.size()); }
  const ClassEntry& entry(int id) const;
  const std::vector<ClassEntry>& entries() const { return entries_; }
  std::optional<int> find(const std::string& name) const;
  /// Like find() but throws RegistryError listing the valid names.
  int id_of(const std::string& name) const;
  std::string names_joined() const;

  friend bool operator==(const ClassRegistry&, const ClassRegistry&) = default;

 private:
  std::vector<ClassEntry> entries_;
};

struct ScaleEntry {
  int id = 0;
  int magnification = 0;
  friend bool operator==(const ScaleEntry&, const ScaleEntry&) = default;
};

class ScaleRegistry {
 public:
  ScaleRegistry() = default;
  explicit ScaleRegistry(std::vector<ScaleEntry> entries);

  int size() const { return static_cast<int>(entries_.size()); }
  const ScaleEntry& entry(int id) const;
  const std::vector<ScaleEntry>& entries() const { return entries_; }
  int id_of_magnification(int magnification) const;

  friend bool operator==(const ScaleRegistry&, const ScaleRegistry&) = default;

 private:
  std::vector<ScaleEntry> entries_;
};

struct Registries {
  ClassRegistry classes;
  ScaleRegistry scales;
  friend bool operator==(const Registries&, const Registries&) = default;
};

/// Seven tissue tasks [TUFT, CAP, PT, DT, PTC, ART, HUBMAP_MV] and the
/// magnifications [5, 10, 20, 40].
Registries default_registries();

nlohmann::json registries_to_json(const Registries& registries);
Registries registries_from_json(const nlohmann::json& doc);

enum class Source { kNeptune, kHubmap, kSynthetic };
enum class Split { kTrain, kVal, kTest };

std::string to_string(Source source);
std::string to_string(Split split);
Source parse_source(const std::string& text);
Split parse_split(const std::string& text);

/// Channels-last image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
  size_t foreground() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct Sample {
  Image image;
  BinaryMask mask;
  int task_id = 0;
  int scale_id = 0;
  Source source = Source::kSynthetic;
  Split split = Split::kTrain;
  std::string id;
};

/// Checks dims, binarity and registry membership. `expected_size` of 0 accepts
/// any square-or-not size; otherwise height and width must both equal it.
void validate_sample(const Sample& sample, const Registries& registries, int expected_size = 0);

}  // namespace omniseg
