// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numbers>

#include <gtest/gtest.h>

#include "omniseg/dataio.hpp"
#include "omniseg/errors.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace omniseg {
namespace {

using omniseg::testing::TempDir;

Image random_image(int size, int channels, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, channels);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(Stitch, ConstantPatchesLandInOrder) {
  std::vector<Image> patches;
  for (int i = 0; i < 4; ++i) patches.emplace_back(256, 256, 3, static_cast<float>(i));
  const auto out = stitch4(patches);
  ASSERT_EQ(out.height, 512);
  ASSERT_EQ(out.width, 512);
  EXPECT_EQ(out.at(0, 0, 0), 0.0f);
  EXPECT_EQ(out.at(100, 300, 2), 1.0f);
  EXPECT_EQ(out.at(300, 100, 1), 2.0f);
  EXPECT_EQ(out.at(511, 511, 0), 3.0f);
  EXPECT_EQ(out.at(255, 256, 0), 1.0f);
  EXPECT_EQ(out.at(256, 255, 0), 2.0f);
}

TEST(Stitch, RoundTripAndMaskConservation) {
  Rng rng(2);
  std::vector<Image> images;
  std::vector<BinaryMask> masks;
  size_t fg = 0;
  for (int i = 0; i < 4; ++i) {
    images.push_back(random_image(256, 3, 10 + i));
    masks.push_back(oracle::random_mask(rng, 256, 256, 0.1 * (i + 1)));
    fg += masks.back().foreground();
  }
  const auto image = stitch4(images);
  const auto mask = stitch4(masks);
  EXPECT_EQ(mask.foreground(), fg);
  const auto back = crop_quadrants(image);
  const auto back_masks = crop_quadrants(mask);
  for (size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i], images[i]);
    EXPECT_EQ(back_masks[i], masks[i]);
  }
}

TEST(Stitch, ShapeErrors) {
  std::vector<Image> three(3, Image(256, 256, 3));
  EXPECT_THROW(stitch4(three), ShapeError);
  std::vector<Image> wrong(4, Image(256, 256, 3));
  wrong[2] = Image(128, 256, 3);
  EXPECT_THROW(stitch4(wrong), ShapeError);
  std::vector<Image> channels(4, Image(256, 256, 3));
  channels[1] = Image(256, 256, 1);
  EXPECT_THROW(stitch4(channels), ShapeError);
  std::vector<BinaryMask> masks(5, BinaryMask(256, 256));
  EXPECT_THROW(stitch4(masks), ShapeError);
}

TEST(Png, RoundTripAndMaskContract) {
  TempDir dir("png");
  Raster r{3, 2, 3, {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255, 1, 2, 3, 4, 5, 6}};
  write_png(dir / "a.png", r);
  const auto back = read_png(dir / "a.png", 3);
  EXPECT_EQ(back.data, r.data);
  EXPECT_EQ(image_to_raster(raster_to_image(back)).data, r.data);

  const Raster ones{2, 2, 1, {0, 1, 1, 0}};
  const Raster full{2, 2, 1, {0, 255, 255, 0}};
  EXPECT_EQ(raster_to_mask(ones, "m"), raster_to_mask(full, "m"));
  EXPECT_EQ(mask_to_raster(raster_to_mask(ones, "m")).data, full.data);
  const Raster gray{2, 2, 1, {0, 128, 255, 0}};
  try {
    raster_to_mask(gray, "masks/x.png");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("masks/x.png"), std::string::npos);
  }
  EXPECT_THROW(read_png(dir / "missing.png", 3), ValidationError);
}

struct Fixture {
  TempDir dir{"manifest"};
  Registries reg = default_registries();

  void write_pair(const std::string& stem, int size, std::uint64_t seed, std::uint8_t mask_value = 255) {
    fs::create_directories((dir / stem).parent_path());
    write_png(dir / (stem + "_image.png"), image_to_raster(random_image(size, 3, seed)));
    Rng rng(seed);
    auto mask = oracle::random_mask(rng, size, size, 0.3);
    Raster mr = mask_to_raster(mask);
    for (auto& v : mr.data) v = v ? mask_value : 0;
    write_png(dir / (stem + "_mask.png"), mr);
  }

  fs::path write_manifest_text(const std::string& body, const std::string& name = "manifest.csv") {
    std::ofstream out(dir / name);
    out << kManifestHeader << '\n' << body;
    return dir / name;
  }
};

TEST(Manifest, LoadsAndResolvesRegistry) {
  Fixture f;
  f.write_pair("HUBMAP/HUBMAP_MV/train/a", 16, 1);
  f.write_pair("NEPTUNE/PT/test/b", 16, 2);
  const auto path = f.write_manifest_text(
      "HUBMAP/HUBMAP_MV/train/a_image.png,HUBMAP/HUBMAP_MV/train/a_mask.png,HUBMAP_MV,20,train,HUBMAP,\n"
      "NEPTUNE/PT/test/b_image.png,NEPTUNE/PT/test/b_mask.png,PT,40,test,NEPTUNE,\n");
  const auto m = load_manifest(path, f.reg);
  ASSERT_EQ(m.rows.size(), 1u);
  EXPECT_EQ(m.dropped_neptune_test, 1u);
  const auto s = load_sample(m, m.rows[0], f.reg);
  EXPECT_EQ(s.scale_id, 2);
  EXPECT_EQ(s.task_id, 6);
  EXPECT_EQ(s.source, Source::kHubmap);
  EXPECT_EQ(s.image.height, 16);
  for (auto v : s.mask.pixels) EXPECT_LE(v, 1);
}

TEST(Manifest, ErrorsNameTheLine) {
  Fixture f;
  f.write_pair("x/a", 8, 1);
  auto expect_error = [&](const std::string& body, const std::string& needle) {
    const auto path = f.write_manifest_text(body);
    try {
      load_manifest(path, f.reg);
      FAIL() << "no error for " << body;
    } catch (const ValidationError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error("x/a_image.png,x/a_mask.png,GLOM,20,train,HUBMAP,\n", ":2");
  expect_error("x/a_image.png,x/a_mask.png,PT,20,train,HUBMAP,\nx/a_image.png,x/nope.png,PT,20,train,HUBMAP,\n",
               "nope.png");
  expect_error("x/a_image.png,x/a_mask.png,PT,15,train,HUBMAP,\n", ":2");
  expect_error("x/a_image.png,x/a_mask.png,PT,20,holdout,HUBMAP,\n", ":2");
  expect_error("x/a_image.png,x/a_mask.png,PT,20\n", ":2");

  std::ofstream(f.dir / "bad_header.csv") << "image,mask\n";
  EXPECT_THROW(load_manifest(f.dir / "bad_header.csv", f.reg), ValidationError);
  try {
    load_manifest(f.dir / "absent.csv", f.reg);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.csv"), std::string::npos);
  }
}

TEST(Manifest, NonBinaryMaskRejectedAtLoad) {
  Fixture f;
  f.write_pair("x/a", 8, 1, 128);
  const auto path = f.write_manifest_text("x/a_image.png,x/a_mask.png,PT,20,train,HUBMAP,\n");
  const auto m = load_manifest(path, f.reg);
  EXPECT_THROW(load_sample(m, m.rows[0], f.reg), ValidationError);
}

TEST(Manifest, DataRootOverride) {
  Fixture f;
  f.write_pair("data/x/a", 8, 1);
  fs::create_directories(f.dir / "meta");
  const auto path = f.write_manifest_text("x/a_image.png,x/a_mask.png,PT,20,train,HUBMAP,\n", "meta/m.csv");
  EXPECT_THROW(load_manifest(path, f.reg), ValidationError);
  ::setenv("OMNISEG_DATA_ROOT", (f.dir / "data").c_str(), 1);
  EXPECT_EQ(manifest_root(path), f.dir / "data");
  EXPECT_NO_THROW(load_manifest(path, f.reg));
  ::unsetenv("OMNISEG_DATA_ROOT");
}

TEST(Manifest, WriteLoadRoundTrip) {
  Fixture f;
  f.write_pair("x/a", 8, 1);
  const auto path = f.write_manifest_text("x/a_image.png,x/a_mask.png,CAP,10,val,SYNTHETIC,g7\n");
  const auto m = load_manifest(path, f.reg);
  write_manifest(f.dir / "copy.csv", m);
  const auto again = load_manifest(f.dir / "copy.csv", f.reg);
  ASSERT_EQ(again.rows.size(), 1u);
  EXPECT_EQ(again.rows[0].group_id, "g7");
  EXPECT_EQ(again.rows[0].split, Split::kVal);
  EXPECT_EQ(again.rows[0].magnification, 10);
}

TEST(Dataset, StitchesGroupsIndependentOfRowOrderAndWorkers) {
  Fixture f;
  std::vector<std::string> rows;
  for (int i = 0; i < 4; ++i) {
    const std::string stem = "HUBMAP/HUBMAP_MV/train/p" + std::to_string(i);
    f.write_pair(stem, 256, 40 + i);
    rows.push_back(stem + "_image.png," + stem + "_mask.png,HUBMAP_MV,20,train,HUBMAP,tile1\n");
  }
  f.write_pair("HUBMAP/HUBMAP_MV/train/single", 512, 50);
  rows.push_back("HUBMAP/HUBMAP_MV/train/single_image.png,HUBMAP/HUBMAP_MV/train/single_mask.png,HUBMAP_MV,20,train,HUBMAP,\n");

  auto body = [&](const std::vector<int>& order) {
    std::string s;
    for (int i : order) s += rows[static_cast<size_t>(i)];
    return s;
  };
  const auto a = load_manifest(f.write_manifest_text(body({0, 1, 2, 3, 4}), "a.csv"), f.reg);
  const auto b = load_manifest(f.write_manifest_text(body({4, 3, 1, 0, 2}), "b.csv"), f.reg);
  const auto da = load_dataset(a, f.reg, Split::kTrain, 1);
  const auto db = load_dataset(b, f.reg, Split::kTrain, 3);
  ASSERT_EQ(da.size(), 2u);
  ASSERT_EQ(db.size(), 2u);
  auto find = [](const std::vector<Sample>& v, const std::string& id) -> const Sample& {
    for (const auto& s : v)
      if (s.id == id) return s;
    throw std::runtime_error("missing " + id);
  };
  const auto& ta = find(da, "tile1");
  const auto& tb = find(db, "tile1");
  EXPECT_EQ(ta.image.height, 512);
  EXPECT_EQ(ta.image, tb.image);
  EXPECT_EQ(ta.mask, tb.mask);
  const auto p0 = load_sample(a, a.rows[0], f.reg);
  EXPECT_EQ(crop_quadrants(ta.image)[0], p0.image);
  EXPECT_TRUE(load_dataset(a, f.reg, Split::kTest).empty());
}

TEST(Dataset, IncompleteGroupIsShapeError) {
  Fixture f;
  std::string body;
  for (int i = 0; i < 3; ++i) {
    const std::string stem = "g/p" + std::to_string(i);
    f.write_pair(stem, 256, i);
    body += stem + "_image.png," + stem + "_mask.png,PT,20,train,HUBMAP,tile\n";
  }
  const auto m = load_manifest(f.write_manifest_text(body), f.reg);
  EXPECT_THROW(load_dataset(m, f.reg), ShapeError);
}

TEST(Splits, HubmapCounts) {
  EXPECT_EQ(split_counts(5440, {3, 1, 1}), (std::array<size_t, 3>{3264, 1088, 1088}));
  EXPECT_EQ(split_counts(8, {3, 1, 1}), (std::array<size_t, 3>{5, 2, 1}));
  EXPECT_EQ(split_counts(10, {6, 1, 3}), (std::array<size_t, 3>{6, 1, 3}));
}

TEST(Splits, AssignmentIsSeededPartition) {
  for (size_t n : {1u, 7u, 100u, 5440u}) {
    const auto a = assign_splits(n, {3, 1, 1}, 5);
    EXPECT_EQ(a, assign_splits(n, {3, 1, 1}, 5));
    const auto counts = split_counts(n, {3, 1, 1});
    for (int s = 0; s < 3; ++s) {
      EXPECT_EQ(static_cast<size_t>(std::count(a.begin(), a.end(), static_cast<Split>(s))),
                counts[static_cast<size_t>(s)]);
    }
  }
  EXPECT_NE(assign_splits(100, {3, 1, 1}, 5), assign_splits(100, {3, 1, 1}, 6));
}

TEST(Synthetic, DiskMatchesPointInCircleScan) {
  BinaryMask m(32, 32);
  const double r = std::sqrt(100.0 / std::numbers::pi);
  rasterize_disk(m, 16.3, 15.8, r);
  size_t scan = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const double dx = x + 0.5 - 16.3, dy = y + 0.5 - 15.8;
      const bool in = dx * dx + dy * dy <= r * r;
      scan += in;
      EXPECT_EQ(m.at(y, x), in ? 1 : 0);
    }
  EXPECT_EQ(scan, 99u);
  EXPECT_EQ(m.foreground(), 99u);
}

TEST(Synthetic, GeneratorCountsAndDeterminism) {
  TempDir a("gen_a"), b("gen_b");
  SyntheticSpec spec;
  spec.count_per_task = 2;
  spec.image_size = 32;
  spec.seed = 4;
  const auto reg = default_registries();
  const auto ma = gen_synthetic(spec, a.path(), reg);
  gen_synthetic(spec, b.path(), reg);
  EXPECT_EQ(ma.rows.size(), 14u);
  EXPECT_EQ(slurp(a / "manifest.csv"), slurp(b / "manifest.csv"));
  for (const auto& row : ma.rows) {
    EXPECT_EQ(slurp(a / row.image_path), slurp(b / row.image_path));
    EXPECT_EQ(slurp(a / row.mask_path), slurp(b / row.mask_path));
    EXPECT_EQ(row.source, Source::kSynthetic);
  }
  const auto loaded = load_manifest(a / "manifest.csv", reg);
  EXPECT_EQ(loaded.rows.size(), 14u);
}

TEST(Synthetic, MasksMostlyNonEmptyAndBinary) {
  SyntheticSpec spec;
  spec.image_size = 64;
  spec.seed = 9;
  const auto reg = default_registries();
  int nonempty = 0, total = 0;
  for (int t = 0; t < 7; ++t) {
    for (int i = 0; i < 8; ++i) {
      const auto s = render_synthetic(t, i, spec, reg);
      EXPECT_NO_THROW(validate_sample(s, reg, 64));
      EXPECT_EQ(reg.scales.entry(s.scale_id).magnification, synthetic_magnification(t));
      nonempty += s.mask.foreground() > 0;
      ++total;
    }
  }
  EXPECT_GE(nonempty * 10, total * 9);
}

TEST(Synthetic, BackgroundHasNoForegroundStructure) {
  const auto a = render_background(32, 3);
  EXPECT_EQ(a, render_background(32, 3));
  EXPECT_NE(a, render_background(32, 4));
  for (float v : a.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

}  // namespace
}  // namespace omniseg
