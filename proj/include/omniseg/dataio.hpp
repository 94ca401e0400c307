// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omniseg/datamodel.hpp"

namespace omniseg {

namespace fs = std::filesystem;

// ------------------------------------------------------------ raster I/O

/// 8-bit interleaved pixels as stored on disk.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;
};

/// Reads a PNG converted to 1 (gray) or 3 (RGB) channels.
Raster read_png(const fs::path& path, int channels);
void write_png(const fs::path& path, const Raster& raster);

Image raster_to_image(const Raster& raster);
/// Rounds [0,1] values to 8 bits; out-of-range values are clamped.
Raster image_to_raster(const Image& image);
/// Accepts masks stored as {0,1} or {0,255}; anything else throws
/// ValidationError mentioning `context`.
BinaryMask raster_to_mask(const Raster& raster, const std::string& context);
/// Writes foreground as 255.
Raster mask_to_raster(const BinaryMask& mask);

// -------------------------------------------------------------- stitching

inline constexpr int kPatchSize = 256;

/// Places four equal patches as [top-left, top-right, bottom-left,
/// bottom-right]. Throws ShapeError unless there are exactly four patches of
/// patch_size x patch_size with matching channel counts.
Image stitch4(std::span<const Image> patches, int patch_size = kPatchSize);
BinaryMask stitch4(std::span<const BinaryMask> patches, int patch_size = kPatchSize);

/// Inverse of stitch4: splits an even-sized image into its four quadrants.
std::array<Image, 4> crop_quadrants(const Image& image);
std::array<BinaryMask, 4> crop_quadrants(const BinaryMask& mask);

// --------------------------------------------------------------- manifest

inline constexpr const char* kManifestHeader =
    "image_path,mask_path,task,magnification,split,source,group_id";

struct ManifestRow {
  std::string image_path;  // relative to Manifest::root
  std::string mask_path;
  std::string task;
  int magnification = 0;
  Split split = Split::kTrain;
  Source source = Source::kSynthetic;
  std::string group_id;  // empty unless the row is one of four stitched patches
  int line = 0;          // 1-based line in the manifest file, for diagnostics
};

struct Manifest {
  fs::path root;
  std::vector<ManifestRow> rows;
  /// NEPTUNE rows assigned to the test split are dropped at load.
  size_t dropped_neptune_test = 0;
};

/// Directory that manifest paths resolve against: OMNISEG_DATA_ROOT when set,
/// otherwise the manifest's own directory.
fs::path manifest_root(const fs::path& manifest_path);

/// Parses and validates a manifest: exact header, registry membership of task
/// and magnification, existing files. Errors name the offending line.
Manifest load_manifest(const fs::path& path, const Registries& registries,
                       std::optional<fs::path> root_override = std::nullopt);
void write_manifest(const fs::path& path, const Manifest& manifest);

/// Loads one unstitched row.
Sample load_sample(const Manifest& manifest, const ManifestRow& row, const Registries& registries);

/// Loads every sample of `split` (all splits when nullopt). Rows sharing a
/// group_id are stitched; inside a group, patches are ordered by image_path so
/// the result does not depend on manifest row order. `workers` threads decode
/// files; the output is identical for any worker count.
std::vector<Sample> load_dataset(const Manifest& manifest, const Registries& registries,
                                 std::optional<Split> split = std::nullopt, int workers = 1);

// ----------------------------------------------------------------- splits

/// Largest-remainder apportionment of n items by integer ratios; ties go to
/// the earlier split. {3,1,1} of 5440 gives 3264/1088/1088.
std::array<size_t, 3> split_counts(size_t n, std::array<int, 3> ratios);

/// Seeded shuffle of [0, n) cut into train/val/test by split_counts.
std::vector<Split> assign_splits(size_t n, std::array<int, 3> ratios, std::uint64_t seed);

// -------------------------------------------------------------- synthetic

struct SyntheticSpec {
  int count_per_task = 8;
  int image_size = 512;
  /// Standard deviation of the additive pixel noise.
  double noise = 0.03;
  std::uint64_t seed = 0;
  /// Train/val/test ratios applied per task.
  std::array<int, 3> split_ratios{3, 1, 1};
};

/// Pixel-centre rasterizers used by the generator.
void rasterize_disk(BinaryMask& mask, double cx, double cy, double radius);
void rasterize_ring(BinaryMask& mask, double cx, double cy, double inner, double outer);
void rasterize_ellipse(BinaryMask& mask, double cx, double cy, double rx, double ry, double angle);
void rasterize_box(BinaryMask& mask, double cx, double cy, double half_len, double half_wid,
                   double angle);
void rasterize_polyline(BinaryMask& mask, std::span<const std::array<double, 2>> points,
                        double half_width);

/// Textured stain-like background without any structure.
Image render_background(int size, std::uint64_t seed, double noise = 0.03);

/// Renders one sample of the given task of the default registry.
Sample render_synthetic(int task_id, int index, const SyntheticSpec& spec,
                        const Registries& registries);

/// Writes images, masks and `manifest.csv` under `out_dir` with the layout
/// <out_dir>/<SOURCE>/<TASK>/<split>/<index>_{image,mask}.png. Deterministic
/// under spec.seed. Returns the manifest.
Manifest gen_synthetic(const SyntheticSpec& spec, const fs::path& out_dir,
                       const Registries& registries);

/// Default magnification for synthetic samples of each default task.
int synthetic_magnification(int task_id);

}  // namespace omniseg
