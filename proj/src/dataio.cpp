// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include <png.h>

#include "omniseg/errors.hpp"
#include "omniseg/rng.hpp"

namespace omniseg {

// ------------------------------------------------------------ raster I/O

Raster read_png(const fs::path& path, int channels) {
  if (channels != 1 && channels != 3) throw ValidationError("read_png: channels must be 1 or 3");
  if (!fs::exists(path)) throw ValidationError("file not found: " + path.string());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ValidationError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Raster raster{static_cast<int>(image.height), static_cast<int>(image.width), channels, {}};
  raster.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ValidationError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return raster;
}

void write_png(const fs::path& path, const Raster& raster) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw ValidationError("write_png: channels must be 1 or 3");
  }
  if (raster.data.size() != static_cast<size_t>(raster.height) * raster.width * raster.channels) {
    throw ShapeError("write_png: buffer does not match dims");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  image.format = raster.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, raster.data.data(), 0, nullptr)) {
    throw RuntimeFailure("cannot write PNG " + path.string() + ": " + image.message);
  }
}

Image raster_to_image(const Raster& raster) {
  Image image(raster.height, raster.width, raster.channels);
  for (size_t i = 0; i < raster.data.size(); ++i) image.pixels[i] = raster.data[i] / 255.0f;
  return image;
}

Raster image_to_raster(const Image& image) {
  Raster raster{image.height, image.width, image.channels, {}};
  raster.data.resize(image.pixels.size());
  for (size_t i = 0; i < image.pixels.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    raster.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return raster;
}

BinaryMask raster_to_mask(const Raster& raster, const std::string& context) {
  if (raster.channels != 1) throw ValidationError(context + ": mask must be single-channel");
  bool has_one = false, has_255 = false;
  for (auto v : raster.data) {
    if (v == 1) {
      has_one = true;
    } else if (v == 255) {
      has_255 = true;
    } else if (v != 0) {
      throw ValidationError(context + ": mask pixel value " + std::to_string(v) +
                            " is not binary (expected {0,1} or {0,255})");
    }
  }
  if (has_one && has_255) {
    throw ValidationError(context + ": mask mixes values 1 and 255");
  }
  BinaryMask mask(raster.height, raster.width);
  for (size_t i = 0; i < raster.data.size(); ++i) mask.pixels[i] = raster.data[i] ? 1 : 0;
  return mask;
}

Raster mask_to_raster(const BinaryMask& mask) {
  Raster raster{mask.height, mask.width, 1, std::vector<std::uint8_t>(mask.pixels.size())};
  for (size_t i = 0; i < mask.pixels.size(); ++i) raster.data[i] = mask.pixels[i] ? 255 : 0;
  return raster;
}

// -------------------------------------------------------------- stitching

namespace {

// Quadrant q of a 2x2 layout, row-major.
constexpr std::array<std::array<int, 2>, 4> kQuadrantOrigin{{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};

template <typename Patch, typename Getter>
void check_quartet(std::span<const Patch> patches, int patch_size, Getter channels_of) {
  if (patches.size() != 4) {
    throw ShapeError("stitch4 needs exactly 4 patches, got " + std::to_string(patches.size()));
  }
  for (size_t i = 0; i < 4; ++i) {
    if (patches[i].height != patch_size || patches[i].width != patch_size) {
      throw ShapeError("stitch4: patch " + std::to_string(i) + " is " +
                       std::to_string(patches[i].height) + "x" + std::to_string(patches[i].width) +
                       ", expected " + std::to_string(patch_size) + "x" +
                       std::to_string(patch_size));
    }
    if (channels_of(patches[i]) != channels_of(patches[0])) {
      throw ShapeError("stitch4: patches disagree on channel count");
    }
  }
}

}  // namespace

Image stitch4(std::span<const Image> patches, int patch_size) {
  check_quartet(patches, patch_size, [](const Image& p) { return p.channels; });
  const int c = patches[0].channels;
  Image out(2 * patch_size, 2 * patch_size, c);
  const size_t row_len = static_cast<size_t>(patch_size) * c;
  for (size_t q = 0; q < 4; ++q) {
    const auto [qy, qx] = kQuadrantOrigin[q];
    for (int y = 0; y < patch_size; ++y) {
      const float* src = patches[q].pixels.data() + y * row_len;
      float* dst = &out.at(qy * patch_size + y, qx * patch_size, 0);
      std::copy(src, src + row_len, dst);
    }
  }
  return out;
}

BinaryMask stitch4(std::span<const BinaryMask> patches, int patch_size) {
  check_quartet(patches, patch_size, [](const BinaryMask&) { return 1; });
  BinaryMask out(2 * patch_size, 2 * patch_size);
  for (size_t q = 0; q < 4; ++q) {
    const auto [qy, qx] = kQuadrantOrigin[q];
    for (int y = 0; y < patch_size; ++y) {
      const auto* src = patches[q].pixels.data() + static_cast<size_t>(y) * patch_size;
      std::copy(src, src + patch_size, &out.at(qy * patch_size + y, qx * patch_size));
    }
  }
  return out;
}

std::array<Image, 4> crop_quadrants(const Image& image) {
  if (image.height % 2 || image.width % 2 || image.height != image.width) {
    throw ShapeError("crop_quadrants needs a square image with even side");
  }
  const int half = image.height / 2;
  std::array<Image, 4> out;
  for (size_t q = 0; q < 4; ++q) {
    const auto [qy, qx] = kQuadrantOrigin[q];
    out[q] = Image(half, half, image.channels);
    for (int y = 0; y < half; ++y) {
      const float* src =
          image.pixels.data() + (static_cast<size_t>(qy * half + y) * image.width + qx * half) * image.channels;
      std::copy(src, src + static_cast<size_t>(half) * image.channels, &out[q].at(y, 0, 0));
    }
  }
  return out;
}

std::array<BinaryMask, 4> crop_quadrants(const BinaryMask& mask) {
  if (mask.height % 2 || mask.width % 2 || mask.height != mask.width) {
    throw ShapeError("crop_quadrants needs a square mask with even side");
  }
  const int half = mask.height / 2;
  std::array<BinaryMask, 4> out;
  for (size_t q = 0; q < 4; ++q) {
    const auto [qy, qx] = kQuadrantOrigin[q];
    out[q] = BinaryMask(half, half);
    for (int y = 0; y < half; ++y) {
      const auto* src =
          mask.pixels.data() + static_cast<size_t>(qy * half + y) * mask.width + qx * half;
      std::copy(src, src + half, &out[q].at(y, 0));
    }
  }
  return out;
}

// --------------------------------------------------------------- manifest

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

fs::path manifest_root(const fs::path& manifest_path) {
  if (const char* env = std::getenv("OMNISEG_DATA_ROOT"); env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  return manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
}

Manifest load_manifest(const fs::path& path, const Registries& registries,
                       std::optional<fs::path> root_override) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  Manifest manifest;
  manifest.root = root_override ? *root_override : manifest_root(path);

  std::string line;
  int line_no = 0;
  auto fail = [&path, &line_no](const std::string& msg) {
    throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      if (line != kManifestHeader) fail(std::string("header must be '") + kManifestHeader + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 7) fail("expected 7 fields, got " + std::to_string(fields.size()));
    ManifestRow row;
    row.image_path = fields[0];
    row.mask_path = fields[1];
    row.task = fields[2];
    row.group_id = fields[6];
    row.line = line_no;
    try {
      registries.classes.id_of(row.task);
      std::size_t used = 0;
      row.magnification = std::stoi(fields[3], &used);
      if (used != fields[3].size()) fail("magnification '" + fields[3] + "' is not an integer");
      registries.scales.id_of_magnification(row.magnification);
      row.split = parse_split(fields[4]);
      row.source = parse_source(fields[5]);
    } catch (const ValidationError& e) {
      fail(e.what());
    } catch (const std::logic_error&) {
      fail("magnification '" + fields[3] + "' is not an integer");
    }
    if (row.source == Source::kNeptune && row.split == Split::kTest) {
      ++manifest.dropped_neptune_test;
      continue;
    }
    for (const auto* rel : {&row.image_path, &row.mask_path}) {
      if (rel->empty()) fail("empty path");
      if (!fs::exists(manifest.root / *rel)) {
        fail("file not found: " + (manifest.root / *rel).string());
      }
    }
    manifest.rows.push_back(std::move(row));
  }
  if (line_no == 0) throw ValidationError("manifest " + path.string() + " is empty");
  return manifest;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
  out << kManifestHeader << '\n';
  for (const auto& row : manifest.rows) {
    out << row.image_path << ',' << row.mask_path << ',' << row.task << ',' << row.magnification
        << ',' << to_string(row.split) << ',' << to_string(row.source) << ',' << row.group_id
        << '\n';
  }
  if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
}

Sample load_sample(const Manifest& manifest, const ManifestRow& row,
                   const Registries& registries) {
  const std::string context = "manifest line " + std::to_string(row.line);
  Sample sample;
  try {
    sample.image = raster_to_image(read_png(manifest.root / row.image_path, 3));
    sample.mask = raster_to_mask(read_png(manifest.root / row.mask_path, 1), context);
  } catch (const ValidationError& e) {
    throw ValidationError(context + ": " + e.what());
  }
  sample.task_id = registries.classes.id_of(row.task);
  sample.scale_id = registries.scales.id_of_magnification(row.magnification);
  sample.source = row.source;
  sample.split = row.split;
  sample.id = row.group_id.empty() ? row.image_path : row.group_id;
  if (sample.image.height != sample.mask.height || sample.image.width != sample.mask.width) {
    throw ShapeError(context + ": image and mask sizes differ");
  }
  return sample;
}

std::vector<Sample> load_dataset(const Manifest& manifest, const Registries& registries,
                                 std::optional<Split> split, int workers) {
  // Each unit is one row, or the four rows of a stitch group.
  std::vector<std::vector<const ManifestRow*>> units;
  std::map<std::string, size_t> group_unit;
  for (const auto& row : manifest.rows) {
    if (split && row.split != *split) continue;
    if (row.group_id.empty()) {
      units.push_back({&row});
      continue;
    }
    auto [it, fresh] = group_unit.try_emplace(row.group_id, units.size());
    if (fresh) units.emplace_back();
    units[it->second].push_back(&row);
  }
  for (auto& unit : units) {
    if (unit.size() == 1 && unit[0]->group_id.empty()) continue;
    if (unit.size() != 4) {
      throw ShapeError("stitch group '" + unit[0]->group_id + "' has " +
                       std::to_string(unit.size()) + " rows, expected 4");
    }
    std::sort(unit.begin(), unit.end(),
              [](const ManifestRow* a, const ManifestRow* b) { return a->image_path < b->image_path; });
    for (const auto* row : unit) {
      if (row->task != unit[0]->task || row->magnification != unit[0]->magnification ||
          row->split != unit[0]->split || row->source != unit[0]->source) {
        throw ValidationError("stitch group '" + row->group_id +
                              "' mixes task, magnification, split or source");
      }
    }
  }

  std::vector<Sample> samples(units.size());
  auto load_unit = [&](size_t u) {
    const auto& unit = units[u];
    if (unit.size() == 1) {
      samples[u] = load_sample(manifest, *unit[0], registries);
      return;
    }
    std::vector<Image> images;
    std::vector<BinaryMask> masks;
    Sample first;
    for (const auto* row : unit) {
      Sample s = load_sample(manifest, *row, registries);
      images.push_back(std::move(s.image));
      masks.push_back(std::move(s.mask));
      if (row == unit.front()) first = std::move(s);
    }
    first.image = stitch4(images);
    first.mask = stitch4(masks);
    samples[u] = std::move(first);
  };

  workers = std::max(1, workers);
  if (workers == 1 || units.size() < 2) {
    for (size_t u = 0; u < units.size(); ++u) load_unit(u);
    return samples;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t u = static_cast<size_t>(w); u < units.size(); u += static_cast<size_t>(workers)) {
          load_unit(u);
        }
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return samples;
}

// ----------------------------------------------------------------- splits

std::array<size_t, 3> split_counts(size_t n, std::array<int, 3> ratios) {
  long total = 0;
  for (int r : ratios) {
    if (r < 0) throw ValidationError("split ratios must be non-negative");
    total += r;
  }
  if (total == 0) throw ValidationError("split ratios must not all be zero");
  std::array<size_t, 3> counts{};
  std::array<size_t, 3> remainder{};
  size_t assigned = 0;
  for (size_t i = 0; i < 3; ++i) {
    const auto scaled = static_cast<unsigned long long>(n) * static_cast<unsigned long long>(ratios[i]);
    counts[i] = static_cast<size_t>(scaled / static_cast<unsigned long long>(total));
    remainder[i] = static_cast<size_t>(scaled % static_cast<unsigned long long>(total));
    assigned += counts[i];
  }
  while (assigned < n) {
    size_t best = 0;
    for (size_t i = 1; i < 3; ++i) {
      if (remainder[i] > remainder[best]) best = i;
    }
    ++counts[best];
    remainder[best] = 0;
    ++assigned;
  }
  return counts;
}

std::vector<Split> assign_splits(size_t n, std::array<int, 3> ratios, std::uint64_t seed) {
  const auto counts = split_counts(n, ratios);
  std::vector<Split> order;
  order.insert(order.end(), counts[0], Split::kTrain);
  order.insert(order.end(), counts[1], Split::kVal);
  order.insert(order.end(), counts[2], Split::kTest);
  Rng rng(derive_seed({seed, 0x5917ULL}));
  rng.shuffle(order.begin(), order.end());
  return order;
}

// -------------------------------------------------------------- synthetic

namespace {

template <typename Inside>
void rasterize(BinaryMask& mask, double x0, double y0, double x1, double y1, Inside inside) {
  const int lo_x = std::max(0, static_cast<int>(std::floor(x0)) - 1);
  const int hi_x = std::min(mask.width - 1, static_cast<int>(std::ceil(x1)) + 1);
  const int lo_y = std::max(0, static_cast<int>(std::floor(y0)) - 1);
  const int hi_y = std::min(mask.height - 1, static_cast<int>(std::ceil(y1)) + 1);
  for (int y = lo_y; y <= hi_y; ++y) {
    for (int x = lo_x; x <= hi_x; ++x) {
      if (inside(x + 0.5, y + 0.5)) mask.at(y, x) = 1;
    }
  }
}

}  // namespace

void rasterize_disk(BinaryMask& mask, double cx, double cy, double radius) {
  rasterize(mask, cx - radius, cy - radius, cx + radius, cy + radius, [&](double x, double y) {
    return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius;
  });
}

void rasterize_ring(BinaryMask& mask, double cx, double cy, double inner, double outer) {
  rasterize(mask, cx - outer, cy - outer, cx + outer, cy + outer, [&](double x, double y) {
    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    return d2 >= inner * inner && d2 <= outer * outer;
  });
}

void rasterize_ellipse(BinaryMask& mask, double cx, double cy, double rx, double ry, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double r = std::max(rx, ry);
  rasterize(mask, cx - r, cy - r, cx + r, cy + r, [&](double x, double y) {
    const double u = (x - cx) * c + (y - cy) * s;
    const double v = -(x - cx) * s + (y - cy) * c;
    return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
  });
}

void rasterize_box(BinaryMask& mask, double cx, double cy, double half_len, double half_wid,
                   double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double r = std::hypot(half_len, half_wid);
  rasterize(mask, cx - r, cy - r, cx + r, cy + r, [&](double x, double y) {
    const double u = (x - cx) * c + (y - cy) * s;
    const double v = -(x - cx) * s + (y - cy) * c;
    return std::abs(u) <= half_len && std::abs(v) <= half_wid;
  });
}

void rasterize_polyline(BinaryMask& mask, std::span<const std::array<double, 2>> points,
                        double half_width) {
  for (size_t i = 0; i + 1 < points.size(); ++i) {
    const auto [ax, ay] = points[i];
    const auto [bx, by] = points[i + 1];
    const double dx = bx - ax, dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    rasterize(mask, std::min(ax, bx) - half_width, std::min(ay, by) - half_width,
              std::max(ax, bx) + half_width, std::max(ay, by) + half_width,
              [&](double x, double y) {
                double t = len2 > 0 ? ((x - ax) * dx + (y - ay) * dy) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double px = ax + t * dx - x, py = ay + t * dy - y;
                return px * px + py * py <= half_width * half_width;
              });
  }
}

namespace {

using Color = std::array<float, 3>;

// Pale eosin-like background and darker per-task structure colors.
constexpr Color kBackground{0.88f, 0.74f, 0.82f};
constexpr std::array<Color, 7> kTaskColor{{{0.45f, 0.20f, 0.55f},
                                           {0.55f, 0.25f, 0.45f},
                                           {0.70f, 0.35f, 0.50f},
                                           {0.50f, 0.30f, 0.65f},
                                           {0.62f, 0.12f, 0.25f},
                                           {0.40f, 0.10f, 0.30f},
                                           {0.60f, 0.08f, 0.20f}}};

Image textured_background(int size, Rng& rng, double noise) {
  Image image(size, size, 3);
  // Low-frequency stain variation from a few random plane waves.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 3> waves;
  for (auto& w : waves) {
    w = {rng.uniform(-3.0, 3.0) / size, rng.uniform(-3.0, 3.0) / size,
         rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.01, 0.03)};
  }
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double shade = 0.0;
      for (const auto& w : waves) {
        shade += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
      }
      for (int c = 0; c < 3; ++c) {
        const double v = kBackground[static_cast<size_t>(c)] + shade + noise * rng.normal();
        image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return image;
}

std::vector<std::array<double, 2>> random_curve(Rng& rng, int size) {
  const double margin = 0.1 * size;
  double x = rng.uniform(margin, size - margin), y = rng.uniform(margin, size - margin);
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const int steps = 12;
  const double step = 0.06 * size;
  std::vector<std::array<double, 2>> points{{x, y}};
  for (int i = 0; i < steps; ++i) {
    heading += rng.uniform(-0.5, 0.5);
    x = std::clamp(x + step * std::cos(heading), 0.0, size - 1.0);
    y = std::clamp(y + step * std::sin(heading), 0.0, size - 1.0);
    points.push_back({x, y});
  }
  return points;
}

BinaryMask draw_structures(int task_id, int size, Rng& rng) {
  BinaryMask mask(size, size);
  const double s = size;
  auto centre = [&](double margin) { return rng.uniform(margin * s, (1.0 - margin) * s); };
  const double thin = std::max(1.5, s / 64.0);
  switch (task_id) {
    case 0:  // TUFT: lobulated filled ellipses
      for (int i = rng.uniform_int(1, 2); i > 0; --i) {
        rasterize_ellipse(mask, centre(0.25), centre(0.25), rng.uniform(0.10, 0.18) * s,
                          rng.uniform(0.08, 0.14) * s, rng.uniform(0.0, std::numbers::pi));
      }
      break;
    case 1:  // CAP: capsule rings
      rasterize_ring(mask, centre(0.3), centre(0.3), 0.13 * s, rng.uniform(0.17, 0.2) * s);
      break;
    case 2:  // PT: elongated tubule sections
      for (int i = rng.uniform_int(2, 3); i > 0; --i) {
        rasterize_box(mask, centre(0.2), centre(0.2), rng.uniform(0.08, 0.14) * s,
                      rng.uniform(0.03, 0.05) * s, rng.uniform(0.0, std::numbers::pi));
      }
      break;
    case 3:  // DT: clusters of small round sections
      for (int i = rng.uniform_int(3, 5); i > 0; --i) {
        rasterize_disk(mask, centre(0.12), centre(0.12), rng.uniform(0.04, 0.07) * s);
      }
      break;
    case 5:  // ART: thick-walled vessel
      rasterize_ring(mask, centre(0.3), centre(0.3), rng.uniform(0.05, 0.08) * s,
                     rng.uniform(0.15, 0.2) * s);
      break;
    case 4:  // PTC and HUBMAP_MV: thin curvilinear vessels
    case 6:
    default:
      for (int i = rng.uniform_int(2, 3); i > 0; --i) {
        const auto curve = random_curve(rng, size);
        rasterize_polyline(mask, curve, thin);
      }
      break;
  }
  return mask;
}

}  // namespace

Image render_background(int size, std::uint64_t seed, double noise) {
  Rng rng(derive_seed({seed, 0xbac6ULL}));
  return textured_background(size, rng, noise);
}

int synthetic_magnification(int task_id) {
  static constexpr std::array<int, 7> kMagnification{5, 5, 10, 10, 40, 10, 20};
  if (task_id < 0 || task_id >= static_cast<int>(kMagnification.size())) {
    throw IndexError("no synthetic magnification for task " + std::to_string(task_id));
  }
  return kMagnification[static_cast<size_t>(task_id)];
}

Sample render_synthetic(int task_id, int index, const SyntheticSpec& spec,
                        const Registries& registries) {
  if (spec.image_size < 16) throw ValidationError("synthetic image_size must be at least 16");
  const auto& entry = registries.classes.entry(task_id);
  Rng rng(derive_seed({spec.seed, static_cast<std::uint64_t>(task_id),
                       static_cast<std::uint64_t>(index)}));
  Sample sample;
  sample.image = textured_background(spec.image_size, rng, spec.noise);
  sample.mask = draw_structures(task_id, spec.image_size, rng);
  const Color color = kTaskColor[static_cast<size_t>(task_id) % kTaskColor.size()];
  for (int y = 0; y < spec.image_size; ++y) {
    for (int x = 0; x < spec.image_size; ++x) {
      if (!sample.mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        const double v = color[static_cast<size_t>(c)] + spec.noise * rng.normal();
        sample.image.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  sample.task_id = task_id;
  sample.scale_id = registries.scales.id_of_magnification(synthetic_magnification(task_id));
  sample.source = Source::kSynthetic;
  sample.id = entry.name + "_" + std::to_string(index);
  return sample;
}

Manifest gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir,
                       const Registries& registries) {
  if (spec.count_per_task <= 0) throw ValidationError("count_per_task must be positive");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw RuntimeFailure("cannot create output directory " + out_dir.string());
  }
  Manifest manifest;
  manifest.root = out_dir;
  for (const auto& entry : registries.classes.entries()) {
    const auto splits = assign_splits(static_cast<size_t>(spec.count_per_task), spec.split_ratios,
                                      derive_seed({spec.seed, static_cast<std::uint64_t>(entry.id)}));
    for (int i = 0; i < spec.count_per_task; ++i) {
      Sample sample = render_synthetic(entry.id, i, spec, registries);
      const Split split = splits[static_cast<size_t>(i)];
      char stem[32];
      std::snprintf(stem, sizeof stem, "%05d", i);
      const fs::path dir = fs::path(to_string(Source::kSynthetic)) / entry.name / to_string(split);
      const std::string image_rel = (dir / (std::string(stem) + "_image.png")).generic_string();
      const std::string mask_rel = (dir / (std::string(stem) + "_mask.png")).generic_string();
      write_png(out_dir / image_rel, image_to_raster(sample.image));
      write_png(out_dir / mask_rel, mask_to_raster(sample.mask));
      manifest.rows.push_back({image_rel, mask_rel, entry.name,
                               registries.scales.entry(sample.scale_id).magnification, split,
                               Source::kSynthetic, "", 0});
    }
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace omniseg
