// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/losses_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace omniseg {

namespace {

void require_binary(const BinaryMask& mask) {
  if (mask.pixels.size() != static_cast<size_t>(mask.height) * mask.width) {
    throw ShapeError("mask buffer does not match its dims");
  }
  for (auto v : mask.pixels) {
    if (v > 1) throw ValidationError("mask is not binary (found value " + std::to_string(v) + ")");
  }
}

void require_same_dims(const BinaryMask& a, const BinaryMask& b, const char* who) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(who) + ": " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

struct Counts {
  size_t pred = 0;
  size_t gt = 0;
  size_t both = 0;
};

Counts count_pair(const BinaryMask& pred, const BinaryMask& gt, const char* who) {
  require_same_dims(pred, gt, who);
  require_binary(pred);
  require_binary(gt);
  Counts c;
  for (size_t i = 0; i < pred.pixels.size(); ++i) {
    c.pred += pred.pixels[i];
    c.gt += gt.pixels[i];
    c.both += pred.pixels[i] & gt.pixels[i];
  }
  return c;
}

}  // namespace

BinaryMask erode_cross(const BinaryMask& mask) {
  require_binary(mask);
  BinaryMask out(mask.height, mask.width);
  auto on = [&mask](int y, int x) {
    return y >= 0 && y < mask.height && x >= 0 && x < mask.width && mask.at(y, x) == 1;
  };
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      out.at(y, x) = on(y, x) && on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1);
    }
  }
  return out;
}

BinaryMask boundary_set(const BinaryMask& mask) {
  BinaryMask eroded = erode_cross(mask);
  for (size_t i = 0; i < eroded.pixels.size(); ++i) eroded.pixels[i] ^= mask.pixels[i];
  return eroded;
}

WeightMap boundary_weight_map(const BinaryMask& mask, double boundary_weight) {
  const BinaryMask rim = boundary_set(mask);
  WeightMap map{mask.height, mask.width, std::vector<double>(rim.pixels.size(), 1.0)};
  for (size_t i = 0; i < rim.pixels.size(); ++i) {
    if (rim.pixels[i]) map.weights[i] = boundary_weight;
  }
  return map;
}

template <typename T>
T dice_loss(std::span<const T> prob_fg, const BinaryMask& mask, double eps) {
  if (prob_fg.size() != mask.pixels.size()) {
    throw ShapeError("dice_loss: " + std::to_string(prob_fg.size()) + " probabilities vs " +
                     std::to_string(mask.pixels.size()) + " mask pixels");
  }
  if (!(eps > 0.0)) throw ValidationError("dice_loss: eps must be positive");
  double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
  for (size_t i = 0; i < prob_fg.size(); ++i) {
    inter += prob_fg[i] * mask.pixels[i];
    sum_p += prob_fg[i];
    sum_y += mask.pixels[i];
  }
  return static_cast<T>(1.0 - (2.0 * inter + eps) / (sum_p + sum_y + eps));
}

template <typename T>
T weighted_ce_loss(std::span<const T> logits, const BinaryMask& mask, const WeightMap& weights) {
  const size_t plane = mask.pixels.size();
  if (logits.size() != 2 * plane || weights.weights.size() != plane) {
    throw ShapeError("weighted_ce_loss: logits, mask and weights do not align");
  }
  double total = 0.0;
  for (size_t i = 0; i < plane; ++i) {
    const double bg = logits[i], fg = logits[plane + i];
    if (!std::isfinite(bg) || !std::isfinite(fg)) {
      throw ValidationError("weighted_ce_loss: non-finite logit at pixel " + std::to_string(i));
    }
    const double hi = std::max(bg, fg);
    const double lse = hi + std::log(std::exp(bg - hi) + std::exp(fg - hi));
    total += weights.weights[i] * (lse - (mask.pixels[i] ? fg : bg));
  }
  return static_cast<T>(total / static_cast<double>(plane));
}

template <typename T>
LossValue<T> total_loss(const Tensor<T>& logits, std::span<const BinaryMask> masks,
                        std::span<const WeightMap> weights, double eps) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ShapeError("total_loss expects N x 2 x H x W logits, got " + shape_str(logits.shape()));
  }
  const int n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  if (masks.size() != static_cast<size_t>(n) || weights.size() != static_cast<size_t>(n)) {
    throw ShapeError("total_loss: " + std::to_string(n) + " samples but " +
                     std::to_string(masks.size()) + " masks and " +
                     std::to_string(weights.size()) + " weight maps");
  }
  const size_t plane = static_cast<size_t>(h) * w;
  LossValue<T> out;
  out.d_logits = Tensor<T>(logits.shape());
  double dice_sum = 0.0, ce_sum = 0.0;
  std::vector<T> prob(plane);
  for (int i = 0; i < n; ++i) {
    const auto& mask = masks[static_cast<size_t>(i)];
    const auto& wmap = weights[static_cast<size_t>(i)];
    if (mask.height != h || mask.width != w || wmap.height != h || wmap.width != w) {
      throw ShapeError("total_loss: mask/weight dims differ from logits for sample " +
                       std::to_string(i));
    }
    require_binary(mask);
    auto sample_logits = logits.slab(i);
    const T* bg = sample_logits.data();
    const T* fg = bg + plane;
    double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
    for (size_t k = 0; k < plane; ++k) {
      prob[k] = T(1) / (T(1) + std::exp(bg[k] - fg[k]));
      inter += prob[k] * mask.pixels[k];
      sum_p += prob[k];
      sum_y += mask.pixels[k];
    }
    const double denom = sum_p + sum_y + eps;
    const double numer = 2.0 * inter + eps;
    dice_sum += 1.0 - numer / denom;
    ce_sum += weighted_ce_loss<T>(sample_logits, mask, wmap);

    // Both terms depend on the logits only through z = fg - bg.
    T* d_bg = out.d_logits.slab(i).data();
    T* d_fg = d_bg + plane;
    const double inv_n = 1.0 / n;
    for (size_t k = 0; k < plane; ++k) {
      const double p = prob[k];
      const double y = mask.pixels[k];
      const double d_dice_dp = -(2.0 * y * denom - numer) / (denom * denom);
      const double dz = d_dice_dp * p * (1.0 - p) + wmap.weights[k] * (p - y) / plane;
      d_fg[k] = static_cast<T>(dz * inv_n);
      d_bg[k] = static_cast<T>(-dz * inv_n);
    }
  }
  out.dice = static_cast<T>(dice_sum / n);
  out.cross_entropy = static_cast<T>(ce_sum / n);
  out.total = static_cast<T>((dice_sum + ce_sum) / n);
  return out;
}

double dsc(const BinaryMask& pred, const BinaryMask& gt, EmptyPolicy policy) {
  const Counts c = count_pair(pred, gt, "dsc");
  if (c.pred + c.gt == 0) return policy == EmptyPolicy::kOne ? 1.0 : 0.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.gt);
}

double iou(const BinaryMask& pred, const BinaryMask& gt, EmptyPolicy policy) {
  const Counts c = count_pair(pred, gt, "iou");
  const size_t uni = c.pred + c.gt - c.both;
  if (uni == 0) return policy == EmptyPolicy::kOne ? 1.0 : 0.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

namespace {

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ReportRow summarize(const std::string& label, const std::vector<const ImageScore*>& scores) {
  ReportRow row;
  row.label = label;
  row.images = scores.size();
  std::vector<double> dscs;
  double iou_sum = 0.0, iou_zero_sum = 0.0;
  for (const auto* s : scores) {
    dscs.push_back(s->dsc);
    iou_sum += s->iou;
    iou_zero_sum += s->empty_pair ? 0.0 : s->iou;
  }
  const double n = static_cast<double>(dscs.size());
  const double mean = std::accumulate(dscs.begin(), dscs.end(), 0.0) / n;
  double sq = 0.0;
  for (double d : dscs) sq += (d - mean) * (d - mean);
  row.median_dsc = 100.0 * median(dscs);
  row.mean_dsc = 100.0 * mean;
  row.std_dsc = dscs.size() > 1 ? 100.0 * std::sqrt(sq / (n - 1.0)) : 0.0;
  row.mean_iou = 100.0 * iou_sum / n;
  row.mean_iou_zero_on_empty = 100.0 * iou_zero_sum / n;
  return row;
}

}  // namespace

MetricsReport aggregate_report(std::span<const ImageScore> per_image) {
  if (per_image.empty()) throw ValidationError("aggregate_report: no per-image scores");
  std::map<std::string, std::vector<const ImageScore*>> by_label;
  std::vector<const ImageScore*> all;
  for (const auto& s : per_image) {
    if (!(s.dsc >= 0.0 && s.dsc <= 1.0) || !(s.iou >= 0.0 && s.iou <= 1.0)) {
      throw ValidationError("aggregate_report: score outside [0, 1] for label '" +
                            s.semantic_label + "'");
    }
    by_label[s.semantic_label].push_back(&s);
    all.push_back(&s);
  }
  MetricsReport report;
  for (const auto& [label, scores] : by_label) report.rows.push_back(summarize(label, scores));
  report.rows.push_back(summarize("overall", all));
  return report;
}

const ReportRow* MetricsReport::find(const std::string& label) const {
  for (const auto& row : rows) {
    if (row.label == label) return &row;
  }
  return nullptr;
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << "Model performance on testing set (%)\n";
  os << std::left << std::setw(12) << "Label" << std::right;
  for (const char* column : kReportColumns) os << std::setw(14) << column;
  os << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& row : rows) {
    os << std::left << std::setw(12) << row.label << std::right << std::setw(14) << row.median_dsc
       << std::setw(14) << row.mean_dsc << std::setw(14) << row.std_dsc << std::setw(14)
       << row.mean_iou << '\n';
  }
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json doc;
  doc["columns"] = nlohmann::json::array();
  for (const char* column : kReportColumns) doc["columns"].push_back(column);
  doc["units"] = "percent";
  doc["rows"] = nlohmann::json::array();
  for (const auto& row : rows) {
    doc["rows"].push_back({{"label", row.label},
                           {"images", row.images},
                           {"Median DSC", row.median_dsc},
                           {"Mean DSC", row.mean_dsc},
                           {"Std Dev DSC", row.std_dsc},
                           {"Mean IoU", row.mean_iou},
                           {"mean_iou_zero_on_empty", row.mean_iou_zero_on_empty}});
  }
  return doc;
}

#define OMNISEG_INSTANTIATE(T)                                                                \
  template T dice_loss<T>(std::span<const T>, const BinaryMask&, double);                    \
  template T weighted_ce_loss<T>(std::span<const T>, const BinaryMask&, const WeightMap&);   \
  template LossValue<T> total_loss<T>(const Tensor<T>&, std::span<const BinaryMask>,         \
                                      std::span<const WeightMap>, double);

OMNISEG_INSTANTIATE(float)
OMNISEG_INSTANTIATE(double)

#undef OMNISEG_INSTANTIATE

}  // namespace omniseg
