// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <thread>

#include "omniseg/errors.hpp"

namespace omniseg {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("train config: " + msg); };
  if (batch_size <= 0) fail("batch_size must be positive");
  if (batch_size > pool_capacity) fail("batch_size must not exceed the pool capacity");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay must lie in (0, 1]");
  if (epochs <= 0) fail("epochs must be positive");
  if (!(aug_probability >= 0.0 && aug_probability <= 1.0)) fail("aug_probability must lie in [0, 1]");
  if (!(boundary_weight > 0.0)) fail("boundary_weight must be positive");
  if (max_steps < 0) fail("max_steps must be non-negative");
  if (workers <= 0) fail("workers must be positive");
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(config.lr_decay, epoch);
}

// ------------------------------------------------------------ image pools

void ImagePool::push(Sample sample) {
  if (sample.task_id != task_id_) {
    throw RuntimeFailure("pool " + std::to_string(task_id_) + " received task " +
                         std::to_string(sample.task_id));
  }
  if (buffer_.size() >= static_cast<size_t>(capacity_)) {
    throw RuntimeFailure("image pool " + std::to_string(task_id_) + " overflow (capacity " +
                         std::to_string(capacity_) + ")");
  }
  buffer_.push_back(std::move(sample));
}

std::vector<Sample> ImagePool::pop(size_t count) {
  count = std::min(count, buffer_.size());
  std::vector<Sample> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    out.push_back(std::move(buffer_.front()));
    buffer_.pop_front();
  }
  return out;
}

size_t ImagePool::clear() {
  const size_t n = buffer_.size();
  buffer_.clear();
  return n;
}

PoolSet::PoolSet(int num_tasks, int batch_size, int capacity, bool auto_flush)
    : batch_size_(batch_size), auto_flush_(auto_flush) {
  if (batch_size <= 0 || batch_size > capacity) {
    throw ValidationError("pool batch size must lie in [1, capacity]");
  }
  for (int t = 0; t < num_tasks; ++t) pools_.emplace_back(t, capacity);
}

std::optional<std::vector<Sample>> PoolSet::feed(Sample sample) {
  if (sample.task_id < 0 || sample.task_id >= static_cast<int>(pools_.size())) {
    throw RegistryError("no image pool for task id " + std::to_string(sample.task_id));
  }
  auto& pool = pools_[static_cast<size_t>(sample.task_id)];
  pool.push(std::move(sample));
  ++stats_.fed;
  if (!auto_flush_ || pool.size() < static_cast<size_t>(batch_size_)) return std::nullopt;
  auto batch = pool.pop(static_cast<size_t>(batch_size_));
  stats_.emitted += batch.size();
  return batch;
}

size_t PoolSet::discard_partial() {
  size_t dropped = 0;
  for (auto& pool : pools_) dropped += pool.clear();
  stats_.discarded += dropped;
  return dropped;
}

// ----------------------------------------------------------- augmentation

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Image warp_image(const Image& src, const AffineParams& a) {
  Image out(src.height, src.width, src.channels);
  const double cx = 0.5 * (src.width - 1), cy = 0.5 * (src.height - 1);
  const double theta = a.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double tx = a.translate_x * src.width, ty = a.translate_y * src.height;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      // Inverse map: undo translation, scale and rotation about the centre.
      const double u = (x - cx - tx) / a.scale, v = (y - cy - ty) / a.scale;
      const double sx = c * u + s * v + cx, sy = -s * u + c * v + cy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const int xa = reflect(x0, src.width), xb = reflect(x0 + 1, src.width);
      const int ya = reflect(y0, src.height), yb = reflect(y0 + 1, src.height);
      for (int ch = 0; ch < src.channels; ++ch) {
        const double top = (1 - fx) * src.at(ya, xa, ch) + fx * src.at(ya, xb, ch);
        const double bottom = (1 - fx) * src.at(yb, xa, ch) + fx * src.at(yb, xb, ch);
        out.at(y, x, ch) = static_cast<float>(std::clamp((1 - fy) * top + fy * bottom, 0.0, 1.0));
      }
    }
  }
  return out;
}

BinaryMask warp_mask(const BinaryMask& src, const AffineParams& a) {
  BinaryMask out(src.height, src.width);
  const double cx = 0.5 * (src.width - 1), cy = 0.5 * (src.height - 1);
  const double theta = a.rotation_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double tx = a.translate_x * src.width, ty = a.translate_y * src.height;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      const double u = (x - cx - tx) / a.scale, v = (y - cy - ty) / a.scale;
      const double sx = c * u + s * v + cx, sy = -s * u + c * v + cy;
      const int nx = reflect(static_cast<int>(std::lround(sx)), src.width);
      const int ny = reflect(static_cast<int>(std::lround(sy)), src.height);
      out.at(y, x) = src.at(ny, nx);
    }
  }
  return out;
}

template <typename Raster>
void flip_in_place(Raster& r, int channels, FlipAxis axis) {
  auto px = [&r, channels](int y, int x) { return (static_cast<size_t>(y) * r.width + x) * channels; };
  if (axis == FlipAxis::kHorizontal) {
    for (int y = 0; y < r.height; ++y) {
      for (int x = 0; x < r.width / 2; ++x) {
        for (int c = 0; c < channels; ++c) {
          std::swap(r.pixels[px(y, x) + c], r.pixels[px(y, r.width - 1 - x) + c]);
        }
      }
    }
  } else {
    for (int y = 0; y < r.height / 2; ++y) {
      for (int x = 0; x < r.width; ++x) {
        for (int c = 0; c < channels; ++c) {
          std::swap(r.pixels[px(y, x) + c], r.pixels[px(r.height - 1 - y, x) + c]);
        }
      }
    }
  }
}

void clamp_unit(Image& image) {
  for (auto& v : image.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += kernel[static_cast<size_t>(k + radius)];
  }
  for (auto& k : kernel) k /= sum;

  Image tmp(image.height, image.width, image.channels);
  Image out(image.height, image.width, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<size_t>(k + radius)] * image.at(y, reflect(x + k, image.width), c);
        }
        tmp.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[static_cast<size_t>(k + radius)] * tmp.at(reflect(y + k, image.height), x, c);
        }
        out.at(y, x, c) = static_cast<float>(acc);
      }
    }
  }
  clamp_unit(out);
  return out;
}

AugmentPlan sample_augment_plan(Rng& rng, int height, int width, double probability) {
  AugmentPlan plan;
  if (rng.bernoulli(probability)) {
    plan.affine = AffineParams{rng.uniform(-15.0, 15.0), rng.uniform(-0.1, 0.1),
                               rng.uniform(-0.1, 0.1), rng.uniform(0.9, 1.1)};
  }
  if (rng.bernoulli(probability)) {
    plan.flip = rng.bernoulli(0.5) ? FlipAxis::kHorizontal : FlipAxis::kVertical;
  }
  if (rng.bernoulli(probability)) plan.contrast = rng.uniform(0.8, 1.2);
  if (rng.bernoulli(probability)) plan.brightness = rng.uniform(-0.1, 0.1);
  if (rng.bernoulli(probability)) plan.blur_sigma = rng.uniform(0.0, 1.5);
  if (rng.bernoulli(probability)) plan.noise_sigma = rng.uniform(0.0, 0.02);
  if (rng.bernoulli(probability)) {
    // Up to 8 boxes, stopping before the covered area would pass 5%.
    std::vector<DropoutBox> boxes;
    const double budget = 0.05 * height * width;
    double used = 0.0;
    for (int i = rng.uniform_int(1, 8); i > 0; --i) {
      const int bh = std::max(1, static_cast<int>(rng.uniform(0.02, 0.08) * height));
      const int bw = std::max(1, static_cast<int>(rng.uniform(0.02, 0.08) * width));
      if (used + static_cast<double>(bh) * bw > budget) break;
      boxes.push_back({rng.uniform_int(0, height - bh), rng.uniform_int(0, width - bw), bh, bw});
      used += static_cast<double>(bh) * bw;
    }
    plan.dropout = std::move(boxes);
  }
  plan.noise_seed = rng.next();
  return plan;
}

Sample apply_augment(const Sample& sample, const AugmentPlan& plan) {
  Sample out = sample;
  if (plan.affine) {
    out.image = warp_image(out.image, *plan.affine);
    out.mask = warp_mask(out.mask, *plan.affine);
  }
  if (plan.flip) {
    flip_in_place(out.image, out.image.channels, *plan.flip);
    flip_in_place(out.mask, 1, *plan.flip);
  }
  if (plan.contrast) {
    for (int c = 0; c < out.image.channels; ++c) {
      double mean = 0.0;
      const size_t n = static_cast<size_t>(out.image.height) * out.image.width;
      for (size_t i = 0; i < n; ++i) mean += out.image.pixels[i * out.image.channels + c];
      mean /= static_cast<double>(n);
      for (size_t i = 0; i < n; ++i) {
        float& v = out.image.pixels[i * out.image.channels + c];
        v = static_cast<float>((v - mean) * *plan.contrast + mean);
      }
    }
    clamp_unit(out.image);
  }
  if (plan.brightness) {
    for (auto& v : out.image.pixels) v = static_cast<float>(v + *plan.brightness);
    clamp_unit(out.image);
  }
  if (plan.blur_sigma) out.image = gaussian_blur(out.image, *plan.blur_sigma);
  if (plan.noise_sigma) {
    Rng rng(plan.noise_seed);
    for (auto& v : out.image.pixels) v = static_cast<float>(v + *plan.noise_sigma * rng.normal());
    clamp_unit(out.image);
  }
  if (plan.dropout) {
    for (const auto& box : *plan.dropout) {
      for (int y = box.y0; y < std::min(out.image.height, box.y0 + box.height); ++y) {
        for (int x = box.x0; x < std::min(out.image.width, box.x0 + box.width); ++x) {
          for (int c = 0; c < out.image.channels; ++c) out.image.at(y, x, c) = 0.0f;
        }
      }
    }
  }
  return out;
}

Sample augment(const Sample& sample, Rng& rng, double probability) {
  return apply_augment(sample,
                       sample_augment_plan(rng, sample.image.height, sample.image.width, probability));
}

// -------------------------------------------------------------- optimizer

template <typename T>
void sgd_update(std::span<T> params, std::span<const T> grads, double lr, const std::string& name) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd: parameter '" + name + "' has " + std::to_string(params.size()) +
                     " values but " + std::to_string(grads.size()) + " gradients");
  }
  if (!(lr > 0.0)) throw ValidationError("sgd: learning rate must be positive");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw RuntimeFailure("sgd: non-finite gradient in parameter '" + name + "' at index " +
                           std::to_string(i));
    }
  }
  const T step = static_cast<T>(lr);
  for (size_t i = 0; i < params.size(); ++i) params[i] -= step * grads[i];
}

template <typename T>
void sgd_step(const nn::ParameterList<T>& params, double lr) {
  // Validate everything first so a bad gradient leaves the model untouched.
  for (const auto* p : params) {
    const auto g = p->grad.values();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw RuntimeFailure("sgd: non-finite gradient in parameter '" + p->name + "' at index " +
                             std::to_string(i));
      }
    }
  }
  for (auto* p : params) sgd_update<T>(p->value.values(), p->grad.values(), lr, p->name);
}

template void sgd_update<float>(std::span<float>, std::span<const float>, double, const std::string&);
template void sgd_update<double>(std::span<double>, std::span<const double>, double, const std::string&);
template void sgd_step<float>(const nn::ParameterList<float>&, double);
template void sgd_step<double>(const nn::ParameterList<double>&, double);

// --------------------------------------------------------------- training

std::string format_epoch_log(const EpochLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %d lr %.9g train_loss %.6f val_mean_dsc %.6f steps %ld",
                log.epoch, log.lr, log.train_loss, log.val_mean_dsc, log.steps);
  return buf;
}

namespace {

struct BatchInputs {
  Tensor<float> images;
  std::vector<TaskCode> tasks;
  std::vector<ScaleCode> scales;
};

BatchInputs make_inputs(std::span<const Sample> batch, int num_tasks, int num_scales) {
  std::vector<const Image*> images;
  BatchInputs in;
  for (const auto& s : batch) {
    images.push_back(&s.image);
    in.tasks.push_back(encode_task(s.task_id, num_tasks));
    in.scales.push_back(encode_scale(s.scale_id, num_scales));
  }
  in.images = images_to_tensor<float>(images);
  return in;
}

}  // namespace

std::vector<BinaryMask> predict_masks(OmniSegNet<float>& net, std::span<const Sample> samples,
                                      int num_tasks, int num_scales, int batch) {
  std::vector<BinaryMask> out;
  batch = std::max(1, batch);
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch)) {
    const auto chunk = samples.subspan(start, std::min(samples.size() - start, static_cast<size_t>(batch)));
    auto in = make_inputs(chunk, num_tasks, num_scales);
    auto pred = net.forward(in.images, in.tasks, in.scales, false);
    for (auto& m : pred.masks()) out.push_back(std::move(m));
  }
  return out;
}

std::vector<ImageScore> evaluate(OmniSegNet<float>& net, std::span<const Sample> samples,
                                 const Registries& registries, int batch, EmptyPolicy policy) {
  const auto masks = predict_masks(net, samples, registries.classes.size(),
                                   registries.scales.size(), batch);
  std::vector<ImageScore> scores;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& gt = samples[i].mask;
    scores.push_back({registries.classes.entry(samples[i].task_id).semantic_label,
                      dsc(masks[i], gt, policy), iou(masks[i], gt, policy),
                      masks[i].foreground() == 0 && gt.foreground() == 0});
  }
  return scores;
}

double mean_dsc(std::span<const ImageScore> scores) {
  if (scores.empty()) throw ValidationError("mean_dsc of an empty score list");
  double sum = 0.0;
  for (const auto& s : scores) sum += s.dsc;
  return sum / static_cast<double>(scores.size());
}

Trainer::Trainer(OmniSegNet<float>& net, BackboneConfig backbone, Registries registries,
                 TrainConfig config)
    : net_(net), backbone_(backbone), registries_(std::move(registries)), config_(config) {
  config_.validate();
}

LossValue<float> Trainer::forward_loss(std::span<const Sample> batch) {
  if (batch.empty()) throw ValidationError("empty batch");
  for (const auto& s : batch) {
    if (s.task_id != batch.front().task_id) {
      throw RuntimeFailure("batch mixes task ids " + std::to_string(batch.front().task_id) +
                           " and " + std::to_string(s.task_id));
    }
  }
  auto in = make_inputs(batch, registries_.classes.size(), registries_.scales.size());
  std::vector<BinaryMask> masks;
  std::vector<WeightMap> weights;
  for (const auto& s : batch) {
    masks.push_back(s.mask);
    weights.push_back(boundary_weight_map(s.mask, config_.boundary_weight));
  }
  auto pred = net_.forward(in.images, in.tasks, in.scales, true);
  return total_loss<float>(pred.logits, masks, weights);
}

double Trainer::batch_loss(std::span<const Sample> batch) {
  return forward_loss(batch).total;
}

double Trainer::train_step(std::span<const Sample> batch, double lr) {
  auto loss = forward_loss(batch);
  net_.zero_grad();
  net_.backward(loss.d_logits);
  sgd_step(net_.parameters(), lr);
  return loss.total;
}

TrainResult Trainer::train(std::span<const Sample> train, std::span<const Sample> val,
                           const EpochCallback& on_epoch) {
  if (train.empty()) throw ValidationError("training split is empty");
  if (val.empty()) throw ValidationError("validation split is empty");
  {
    std::vector<int> per_task(static_cast<size_t>(registries_.classes.size()), 0);
    for (const auto& s : train) per_task.at(static_cast<size_t>(s.task_id))++;
    if (*std::max_element(per_task.begin(), per_task.end()) < config_.batch_size) {
      throw ValidationError("no task has at least batch_size = " +
                            std::to_string(config_.batch_size) + " training samples");
    }
  }
  const int image_size = train.front().image.height;
  for (auto part : {train, val}) {
    for (const auto& s : part) {
      if (s.image.height != image_size || s.image.width != image_size) {
        throw ShapeError("sample '" + s.id + "' is " + std::to_string(s.image.height) + "x" +
                         std::to_string(s.image.width) + ", expected " +
                         std::to_string(image_size) + "x" + std::to_string(image_size));
      }
    }
  }

  TrainResult result;
  result.best.epoch = 0;
  result.best.val_mean_dsc = -1.0;
  PoolSet pools(registries_.classes.size(), config_.batch_size, config_.pool_capacity);
  const size_t chunk = static_cast<size_t>(std::max(16, 4 * config_.workers));

  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    const double lr = learning_rate_at(config_, epoch);
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(derive_seed({config_.seed, 0x5aff1eULL, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    long epoch_steps = 0;
    bool budget_hit = false;
    for (size_t start = 0; start < order.size() && !budget_hit; start += chunk) {
      const size_t count = std::min(chunk, order.size() - start);
      std::vector<Sample> augmented(count);
      auto work = [&](size_t k) {
        const size_t idx = order[start + k];
        Rng rng(derive_seed({config_.seed, static_cast<std::uint64_t>(epoch), idx}));
        augmented[k] = config_.aug_probability > 0.0
                           ? augment(train[idx], rng, config_.aug_probability)
                           : train[idx];
      };
      if (config_.workers > 1) {
        std::vector<std::thread> threads;
        for (int w = 0; w < config_.workers; ++w) {
          threads.emplace_back([&, w] {
            for (size_t k = static_cast<size_t>(w); k < count; k += static_cast<size_t>(config_.workers)) work(k);
          });
        }
        for (auto& t : threads) t.join();
      } else {
        for (size_t k = 0; k < count; ++k) work(k);
      }
      for (auto& sample : augmented) {
        auto batch = pools.feed(std::move(sample));
        if (!batch) continue;
        loss_sum += train_step(*batch, lr);
        ++epoch_steps;
        ++result.steps;
        if (config_.max_steps > 0 && result.steps >= config_.max_steps) {
          budget_hit = true;
          break;
        }
      }
    }
    pools.discard_partial();

    EpochLog log{epoch + 1, lr, epoch_steps ? loss_sum / epoch_steps : 0.0, 0.0, epoch_steps};
    log.val_mean_dsc = mean_dsc(evaluate(net_, val, registries_, 1));
    result.history.push_back(log);

    Checkpoint latest;
    latest.epoch = log.epoch;
    latest.val_mean_dsc = log.val_mean_dsc;
    latest.image_size = image_size;
    latest.backbone = backbone_;
    latest.registries = registries_;
    latest.train_config = {{"batch_size", config_.batch_size}, {"lr", config_.lr},
                           {"lr_decay", config_.lr_decay},     {"epochs", config_.epochs},
                           {"aug_probability", config_.aug_probability},
                           {"seed", config_.seed},             {"boundary_weight", config_.boundary_weight},
                           {"max_steps", config_.max_steps}};
    latest.tensors = snapshot_parameters(net_);
    const bool is_best = log.val_mean_dsc > result.best.val_mean_dsc;
    if (is_best) result.best = latest;
    if (on_epoch) on_epoch(log, latest, is_best);
    if (budget_hit) break;
  }
  result.pool_stats = pools.stats();
  return result;
}

}  // namespace omniseg
