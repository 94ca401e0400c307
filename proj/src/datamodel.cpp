// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <nlohmann/json.hpp>

#include "omniseg/errors.hpp"

namespace omniseg {

template <typename Tag>
OneHotCode<Tag> OneHotCode<Tag>::encode(int index, int length) {
  if (length <= 0) {
    throw IndexError("one-hot length must be positive, got " + std::to_string(length));
  }
  if (index < 0 || index >= length) {
    throw IndexError("id " + std::to_string(index) + " out of range for one-hot length " +
                     std::to_string(length));
  }
  std::vector<std::uint8_t> bits(static_cast<size_t>(length), 0);
  bits[static_cast<size_t>(index)] = 1;
  return OneHotCode(index, std::move(bits));
}

template class OneHotCode<TaskTag>;
template class OneHotCode<ScaleTag>;

TaskCode encode_task(int task_id, int m) { return TaskCode::encode(task_id, m); }
ScaleCode encode_scale(int scale_id, int n) { return ScaleCode::encode(scale_id, n); }

int decode_one_hot(const std::vector<std::uint8_t>& bits) {
  int found = -1;
  for (size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] > 1) throw ValidationError("one-hot vector holds a non-binary value");
    if (bits[i] == 1) {
      if (found >= 0) throw ValidationError("one-hot vector has more than one active element");
      found = static_cast<int>(i);
    }
  }
  if (found < 0) throw ValidationError("one-hot vector has no active element");
  return found;
}

ClassRegistry::ClassRegistry(std::vector<ClassEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string> names;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != static_cast<int>(i)) {
      throw RegistryError("class ids must be 0..m-1 in order; entry " + std::to_string(i) +
                          " has id " + std::to_string(entries_[i].id));
    }
    if (entries_[i].name.empty()) throw RegistryError("class entry with empty name");
    if (!names.insert(entries_[i].name).second) {
      throw RegistryError("duplicate class name '" + entries_[i].name + "'");
    }
  }
}

const ClassEntry& ClassRegistry::entry(int id) const {
  if (id < 0 || id >= size()) {
    throw RegistryError("task id " + std::to_string(id) + " not in class registry of size " +
                        std::to_string(size()));
  }
  return entries_[static_cast<size_t>(id)];
}

std::optional<int> ClassRegistry::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.id;
  }
  return std::nullopt;
}

int ClassRegistry::id_of(const std::string& name) const {
  if (auto id = find(name)) return *id;
  throw RegistryError("unknown task '" + name + "'; valid names: " + names_joined());
}

std::string ClassRegistry::names_joined() const {
  std::string out;
  for (const auto& e : entries_) {
    if (!out.empty()) out += ", ";
    out += e.name;
  }
  return out;
}

ScaleRegistry::ScaleRegistry(std::vector<ScaleEntry> entries) : entries_(std::move(entries)) {
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id != static_cast<int>(i)) {
      throw RegistryError("scale ids must be 0..n-1 in order; entry " + std::to_string(i) +
                          " has id " + std::to_string(entries_[i].id));
    }
    if (entries_[i].magnification <= 0) throw RegistryError("magnification must be positive");
    if (i > 0 && entries_[i].magnification <= entries_[i - 1].magnification) {
      throw RegistryError("magnifications must be strictly increasing");
    }
  }
}

const ScaleEntry& ScaleRegistry::entry(int id) const {
  if (id < 0 || id >= size()) {
    throw RegistryError("scale id " + std::to_string(id) + " not in scale registry of size " +
                        std::to_string(size()));
  }
  return entries_[static_cast<size_t>(id)];
}

int ScaleRegistry::id_of_magnification(int magnification) const {
  for (const auto& e : entries_) {
    if (e.magnification == magnification) return e.id;
  }
  std::string valid;
  for (const auto& e : entries_) valid += (valid.empty() ? "" : ", ") + std::to_string(e.magnification);
  throw RegistryError("magnification " + std::to_string(magnification) +
                      " not in scale registry; valid: " + valid);
}

Registries default_registries() {
  ClassRegistry classes({{0, "TUFT", "TUFT"},
                         {1, "CAP", "CAP"},
                         {2, "PT", "PT"},
                         {3, "DT", "DT"},
                         {4, "PTC", "MV"},
                         {5, "ART", "ART"},
                         {6, "HUBMAP_MV", "MV"}});
  ScaleRegistry scales({{0, 5}, {1, 10}, {2, 20}, {3, 40}});
  return {std::move(classes), std::move(scales)};
}

nlohmann::json registries_to_json(const Registries& registries) {
  nlohmann::json doc;
  doc["classes"] = nlohmann::json::array();
  for (const auto& e : registries.classes.entries()) {
    doc["classes"].push_back({{"id", e.id}, {"name", e.name}, {"semantic_label", e.semantic_label}});
  }
  doc["scales"] = nlohmann::json::array();
  for (const auto& e : registries.scales.entries()) {
    doc["scales"].push_back({{"id", e.id}, {"magnification", e.magnification}});
  }
  return doc;
}

Registries registries_from_json(const nlohmann::json& doc) {
  try {
    std::vector<ClassEntry> classes;
    for (const auto& c : doc.at("classes")) {
      classes.push_back({c.at("id").get<int>(), c.at("name").get<std::string>(),
                         c.at("semantic_label").get<std::string>()});
    }
    std::vector<ScaleEntry> scales;
    for (const auto& s : doc.at("scales")) {
      scales.push_back({s.at("id").get<int>(), s.at("magnification").get<int>()});
    }
    return {ClassRegistry(std::move(classes)), ScaleRegistry(std::move(scales))};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed registry config: ") + e.what());
  }
}

std::string to_string(Source source) {
  switch (source) {
    case Source::kNeptune: return "NEPTUNE";
    case Source::kHubmap: return "HUBMAP";
    case Source::kSynthetic: return "SYNTHETIC";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

namespace {
std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}
}  // namespace

Source parse_source(const std::string& text) {
  const auto t = lower(text);
  if (t == "neptune") return Source::kNeptune;
  if (t == "hubmap") return Source::kHubmap;
  if (t == "synthetic") return Source::kSynthetic;
  throw ValidationError("unknown source '" + text + "' (expected NEPTUNE, HUBMAP or SYNTHETIC)");
}

Split parse_split(const std::string& text) {
  const auto t = lower(text);
  if (t == "train") return Split::kTrain;
  if (t == "val" || t == "validation") return Split::kVal;
  if (t == "test") return Split::kTest;
  throw ValidationError("unknown split '" + text + "' (expected train, val or test)");
}

size_t BinaryMask::foreground() const {
  return static_cast<size_t>(std::count(pixels.begin(), pixels.end(), std::uint8_t{1}));
}

void validate_sample(const Sample& sample, const Registries& registries, int expected_size) {
  const auto& img = sample.image;
  const auto& mask = sample.mask;
  if (img.height != mask.height || img.width != mask.width) {
    throw ShapeError("sample '" + sample.id + "': image " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + " vs mask " + std::to_string(mask.height) + "x" +
                     std::to_string(mask.width));
  }
  if (img.pixels.size() != static_cast<size_t>(img.height) * img.width * img.channels ||
      mask.pixels.size() != static_cast<size_t>(mask.height) * mask.width) {
    throw ShapeError("sample '" + sample.id + "': pixel buffer does not match its dims");
  }
  if (expected_size > 0 && (img.height != expected_size || img.width != expected_size)) {
    throw ShapeError("sample '" + sample.id + "' is " + std::to_string(img.height) + "x" +
                     std::to_string(img.width) + ", expected " + std::to_string(expected_size) +
                     "x" + std::to_string(expected_size));
  }
  for (auto v : mask.pixels) {
    if (v > 1) throw ValidationError("sample '" + sample.id + "': mask is not binary");
  }
  for (float v : img.pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError("sample '" + sample.id + "': image values must lie in [0, 1]");
    }
  }
  registries.classes.entry(sample.task_id);
  registries.scales.entry(sample.scale_id);
}

}  // namespace omniseg
