// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omniseg/checkpoint.hpp"
#include "omniseg/datamodel.hpp"
#include "omniseg/losses_metrics.hpp"
#include "omniseg/model.hpp"
#include "omniseg/rng.hpp"

namespace omniseg {

struct TrainConfig {
  int batch_size = 4;
  int pool_capacity = 8;
  double lr = 0.001;
  /// Multiplicative decay applied once per epoch.
  double lr_decay = 0.99;
  int epochs = 100;
  double aug_probability = 0.5;
  std::uint64_t seed = 0;
  double boundary_weight = kDefaultBoundaryWeight;
  /// Stop after this many optimizer steps; 0 means no limit.
  long max_steps = 0;
  /// Threads used for augmentation; results do not depend on it.
  int workers = 1;

  void validate() const;
};

/// lr * lr_decay^epoch, the rate used during 0-based `epoch`.
double learning_rate_at(const TrainConfig& config, int epoch);

// ------------------------------------------------------------ image pools

/// FIFO buffer of samples that all share one task id.
class ImagePool {
 public:
  ImagePool(int task_id, int capacity) : task_id_(task_id), capacity_(capacity) {}

  int task_id() const { return task_id_; }
  int capacity() const { return capacity_; }
  size_t size() const { return buffer_.size(); }

  /// Throws RuntimeFailure when full or when the task id differs.
  void push(Sample sample);
  /// Removes the `count` oldest samples.
  std::vector<Sample> pop(size_t count);
  size_t clear();

 private:
  int task_id_;
  int capacity_;
  std::deque<Sample> buffer_;
};

struct PoolStats {
  size_t fed = 0;
  size_t emitted = 0;
  size_t discarded = 0;
};

/// One pool per task. A feed that brings a pool to batch_size samples
/// dequeues them as a task-homogeneous batch.
class PoolSet {
 public:
  PoolSet(int num_tasks, int batch_size, int capacity, bool auto_flush = true);

  /// Throws RegistryError for an unknown task id.
  std::optional<std::vector<Sample>> feed(Sample sample);
  /// Drops every partially filled pool; returns how many samples were dropped.
  size_t discard_partial();

  const PoolStats& stats() const { return stats_; }
  const ImagePool& pool(int task_id) const { return pools_.at(static_cast<size_t>(task_id)); }

 private:
  int batch_size_;
  bool auto_flush_;
  std::vector<ImagePool> pools_;
  PoolStats stats_;
};

// ----------------------------------------------------------- augmentation

struct AffineParams {
  double rotation_deg = 0.0;
  /// Translation as a fraction of width / height.
  double translate_x = 0.0;
  double translate_y = 0.0;
  double scale = 1.0;
};

enum class FlipAxis { kHorizontal, kVertical };

struct DropoutBox {
  int y0, x0, height, width;
};

/// Concrete choice of transforms for one sample. Geometric transforms act on
/// image and mask; the rest touch the image only.
struct AugmentPlan {
  std::optional<AffineParams> affine;
  std::optional<FlipAxis> flip;
  std::optional<double> contrast;
  std::optional<double> brightness;
  std::optional<double> blur_sigma;
  std::optional<double> noise_sigma;
  std::optional<std::vector<DropoutBox>> dropout;
  std::uint64_t noise_seed = 0;
};

/// Each transform family is switched on independently with `probability`.
AugmentPlan sample_augment_plan(Rng& rng, int height, int width, double probability);
Sample apply_augment(const Sample& sample, const AugmentPlan& plan);
Sample augment(const Sample& sample, Rng& rng, double probability = 0.5);

Image gaussian_blur(const Image& image, double sigma);

// -------------------------------------------------------------- optimizer

/// p <- p - lr * g. Throws RuntimeFailure naming `name` on a non-finite
/// gradient, before touching any value.
template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, double lr, const std::string& name);

template <typename T>
void sgd_step(const nn::ParameterList<T>& params, double lr);

// --------------------------------------------------------------- training

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mean_dsc = 0.0;
  long steps = 0;
};

std::string format_epoch_log(const EpochLog& log);

struct TrainResult {
  std::vector<EpochLog> history;
  Checkpoint best;
  PoolStats pool_stats;
  long steps = 0;
};

/// Per-image scores of hard predictions; batches of `batch` samples.
std::vector<ImageScore> evaluate(OmniSegNet<float>& net, std::span<const Sample> samples,
                                 const Registries& registries, int batch = 1,
                                 EmptyPolicy policy = EmptyPolicy::kOne);
double mean_dsc(std::span<const ImageScore> scores);

/// Predicted masks for each sample, in order.
std::vector<BinaryMask> predict_masks(OmniSegNet<float>& net, std::span<const Sample> samples,
                                      int num_tasks, int num_scales, int batch = 1);

class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochLog&, const Checkpoint& latest, bool is_best)>;

  Trainer(OmniSegNet<float>& net, BackboneConfig backbone, Registries registries,
          TrainConfig config);

  /// Shuffles, augments and pools the training samples each epoch, steps on
  /// every emitted batch, decays the rate and scores the validation split.
  /// The returned checkpoint is the epoch with the highest validation mean
  /// DSC (earliest on ties).
  TrainResult train(std::span<const Sample> train, std::span<const Sample> val,
                    const EpochCallback& on_epoch = {});

  /// One SGD step on a task-homogeneous batch; returns the batch loss.
  double train_step(std::span<const Sample> batch, double lr);

  /// Loss of a batch without updating weights.
  double batch_loss(std::span<const Sample> batch);

 private:
  LossValue<float> forward_loss(std::span<const Sample> batch);

  OmniSegNet<float>& net_;
  BackboneConfig backbone_;
  Registries registries_;
  TrainConfig config_;
};

}  // namespace omniseg
