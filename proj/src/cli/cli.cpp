// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/cli.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "omniseg/checkpoint.hpp"
#include "omniseg/dataio.hpp"
#include "omniseg/errors.hpp"
#include "omniseg/training.hpp"

namespace omniseg::cli {
namespace {

constexpr double kOverlayAlpha = 0.4;
constexpr std::array<float, 3> kOverlayTint{0.0f, 0.9f, 0.2f};

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string registry;
  TrainConfig config;
  BackboneConfig backbone;
};

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string out;
  std::string registry;
  std::string split = "test";
  int workers = 1;
};

struct PredictArgs {
  std::string checkpoint;
  std::string input;
  std::string task;
  int magnification = 0;
  std::string out;
};

struct StitchArgs {
  std::vector<std::string> inputs;
  std::string out;
  bool mask = false;
};

struct GenArgs {
  std::string out;
  SyntheticSpec spec;
  std::vector<int> split_ratios{3, 1, 1};
};

Registries load_registries(const std::string& path) {
  if (path.empty()) return default_registries();
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open registry file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("registry file " + path + ": " + e.what());
  }
  return registries_from_json(doc);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  const auto registries = load_registries(args.registry);
  args.config.validate();
  args.backbone.validate();
  const auto manifest = load_manifest(args.manifest, registries);
  const auto train = load_dataset(manifest, registries, Split::kTrain, args.config.workers);
  const auto val = load_dataset(manifest, registries, Split::kVal, args.config.workers);

  const fs::path run_dir(args.out);
  fs::create_directories(run_dir);
  std::ofstream log_file(run_dir / "train_log.txt", std::ios::binary | std::ios::trunc);
  if (!log_file) throw RuntimeFailure("cannot write " + (run_dir / "train_log.txt").string());

  OmniSegNet<float> net(args.backbone, registries.classes.size(), registries.scales.size(),
                        derive_seed({args.config.seed, 0x1417ULL}));
  Trainer trainer(net, args.backbone, registries, args.config);
  auto on_epoch = [&](const EpochLog& log, const Checkpoint& latest, bool is_best) {
    const auto line = format_epoch_log(log);
    out << line << '\n' << std::flush;
    log_file << line << '\n' << std::flush;
    save_checkpoint(run_dir / "last.ckpt", latest);
    if (is_best) {
      save_checkpoint(run_dir / "best.ckpt", latest);
      std::ostringstream marker;
      marker << "best.ckpt epoch " << latest.epoch << " val_mean_dsc " << log.val_mean_dsc << '\n';
      write_text(run_dir / "best", marker.str());
    }
  };
  const auto result = trainer.train(train, val, on_epoch);
  out << "best epoch " << result.best.epoch << " val_mean_dsc " << result.best.val_mean_dsc
      << " steps " << result.steps << '\n';
  return kExitOk;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const auto checkpoint = load_checkpoint(args.checkpoint);
  const auto registries = load_registries(args.registry);
  require_registries(checkpoint, registries);
  const auto split = parse_split(args.split);
  const auto manifest = load_manifest(args.manifest, registries);
  const bool has_rows = std::any_of(manifest.rows.begin(), manifest.rows.end(),
                                    [&](const ManifestRow& r) { return r.split == split; });
  if (!has_rows) throw ValidationError("no " + args.split + " rows in manifest " + args.manifest);
  const auto samples = load_dataset(manifest, registries, split, args.workers);

  auto net = build_network(checkpoint);
  const auto scores = evaluate(net, samples, registries, 1);
  const auto report = aggregate_report(scores);

  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  const auto table = report.to_table();
  write_text(out_dir / "report.txt", table);
  write_text(out_dir / "report.json", report.to_json().dump(2) + "\n");
  out << table;
  return kExitOk;
}

Image overlay(const Image& image, const BinaryMask& mask) {
  Image result = image;
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (!mask.at(y, x)) continue;
      for (int c = 0; c < image.channels; ++c) {
        float& v = result.at(y, x, c);
        v = static_cast<float>((1.0 - kOverlayAlpha) * v + kOverlayAlpha * kOverlayTint[c % 3]);
      }
    }
  }
  return result;
}

int cmd_predict(const PredictArgs& args, std::ostream& out) {
  const auto checkpoint = load_checkpoint(args.checkpoint);
  const auto& reg = checkpoint.registries;
  Sample sample;
  sample.task_id = reg.classes.id_of(args.task);
  sample.scale_id = reg.scales.id_of_magnification(args.magnification);
  sample.image = raster_to_image(read_png(args.input, checkpoint.backbone.in_channels));
  sample.id = args.input;
  const int size = checkpoint.image_size;
  if (sample.image.height != size || sample.image.width != size) {
    throw ShapeError("input " + args.input + " is " + std::to_string(sample.image.height) + "x" +
                     std::to_string(sample.image.width) + " but the model expects " +
                     std::to_string(size) + "x" + std::to_string(size) +
                     "; combine four patches with `omniseg stitch` first");
  }

  auto net = build_network(checkpoint);
  const auto masks = predict_masks(net, std::span<const Sample>(&sample, 1), reg.classes.size(),
                                   reg.scales.size(), 1);
  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  write_png(out_dir / "mask.png", mask_to_raster(masks.front()));
  write_png(out_dir / "overlay.png", image_to_raster(overlay(sample.image, masks.front())));
  out << "foreground " << masks.front().foreground() << " of " << size * size << " pixels\n";
  return kExitOk;
}

int cmd_stitch(const StitchArgs& args, std::ostream& out) {
  if (args.inputs.size() != 4) {
    throw ShapeError("stitch needs exactly 4 inputs, got " + std::to_string(args.inputs.size()));
  }
  if (args.mask) {
    std::vector<BinaryMask> patches;
    for (const auto& p : args.inputs) patches.push_back(raster_to_mask(read_png(p, 1), p));
    write_png(args.out, mask_to_raster(stitch4(patches)));
  } else {
    std::vector<Image> patches;
    for (const auto& p : args.inputs) patches.push_back(raster_to_image(read_png(p, 3)));
    write_png(args.out, image_to_raster(stitch4(patches)));
  }
  out << "wrote " << args.out << '\n';
  return kExitOk;
}

int cmd_gen_synthetic(GenArgs args, std::ostream& out) {
  if (args.split_ratios.size() != 3) {
    throw ValidationError("--split-ratios takes three integers");
  }
  std::copy(args.split_ratios.begin(), args.split_ratios.end(), args.spec.split_ratios.begin());
  const auto manifest = gen_synthetic(args.spec, args.out, default_registries());
  out << "wrote " << manifest.rows.size() << " samples to " << args.out << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task, multi-scale tissue segmentation", "omniseg"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train on a manifest");
  t->set_config("--config", "", "TOML/INI file with option defaults; flags win");
  t->add_option("--manifest", train.manifest, "Manifest CSV")->required();
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--registry", train.registry, "Registry JSON (default: built-in)");
  t->add_option("--epochs", train.config.epochs)->capture_default_str();
  t->add_option("--seed", train.config.seed)->capture_default_str();
  t->add_option("--batch-size", train.config.batch_size)->capture_default_str();
  t->add_option("--pool-capacity", train.config.pool_capacity)->capture_default_str();
  t->add_option("--lr", train.config.lr)->capture_default_str();
  t->add_option("--lr-decay", train.config.lr_decay)->capture_default_str();
  t->add_option("--aug-prob", train.config.aug_probability)->capture_default_str();
  t->add_option("--boundary-weight", train.config.boundary_weight)->capture_default_str();
  t->add_option("--max-steps", train.config.max_steps, "0 = unlimited")->capture_default_str();
  t->add_option("--workers", train.config.workers)->capture_default_str();
  t->add_option("--base-channels", train.backbone.base_channels)->capture_default_str();
  t->add_option("--levels", train.backbone.levels)->capture_default_str();
  t->add_option("--bottleneck-channels", train.backbone.bottleneck_channels)->capture_default_str();
  t->add_option("--groups", train.backbone.groupnorm_groups)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score a checkpoint on one manifest split");
  e->set_config("--config", "", "TOML/INI file with option defaults; flags win");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--manifest", ev.manifest)->required();
  e->add_option("--out", ev.out, "Directory for report.txt and report.json")->required();
  e->add_option("--registry", ev.registry, "Registry JSON (default: built-in)");
  e->add_option("--split", ev.split)->capture_default_str();
  e->add_option("--workers", ev.workers)->capture_default_str();

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Segment one image");
  p->set_config("--config", "", "TOML/INI file with option defaults; flags win");
  p->add_option("--checkpoint", pr.checkpoint)->required();
  p->add_option("--input", pr.input)->required();
  p->add_option("--task", pr.task)->required();
  p->add_option("--magnification", pr.magnification)->required();
  p->add_option("--out", pr.out, "Directory for mask.png and overlay.png")->required();

  StitchArgs st;
  auto* s = app.add_subcommand("stitch", "Combine four 256x256 patches into one 512x512 image");
  s->add_option("--inputs", st.inputs, "TL TR BL BR")->required()->expected(4);
  s->add_option("--out", st.out)->required();
  s->add_flag("--mask", st.mask, "Treat inputs as binary masks");

  GenArgs gen;
  auto* g = app.add_subcommand("gen-synthetic", "Write a synthetic dataset and manifest");
  g->set_config("--config", "", "TOML/INI file with option defaults; flags win");
  g->add_option("--out", gen.out)->required();
  g->add_option("--seed", gen.spec.seed)->capture_default_str();
  g->add_option("--count-per-task", gen.spec.count_per_task)->capture_default_str();
  g->add_option("--size", gen.spec.image_size)->capture_default_str();
  g->add_option("--noise", gen.spec.noise)->capture_default_str();
  g->add_option("--split-ratios", gen.split_ratios)->expected(3);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    std::ostringstream o, r;
    const int code = app.exit(ex, o, r);
    out << o.str();
    err << r.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*t) return cmd_train(train, out);
    if (*e) return cmd_eval(ev, out);
    if (*p) return cmd_predict(pr, out);
    if (*s) return cmd_stitch(st, out);
    if (*g) return cmd_gen_synthetic(gen, out);
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace omniseg::cli
