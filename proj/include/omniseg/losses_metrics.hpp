// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "omniseg/datamodel.hpp"
#include "omniseg/tensor.hpp"

namespace omniseg {

inline constexpr double kDefaultBoundaryWeight = 1.2;
inline constexpr double kDiceEps = 1e-5;

/// Per-pixel loss weights: `boundary_weight` on the one-pixel inner rim of the
/// foreground, 1.0 elsewhere.
struct WeightMap {
  int height = 0;
  int width = 0;
  std::vector<double> weights;

  double at(int y, int x) const { return weights[static_cast<size_t>(y) * width + x]; }
};

/// Binary erosion with the 3x3 cross; pixels outside the image count as
/// background.
BinaryMask erode_cross(const BinaryMask& mask);
/// mask AND NOT erode_cross(mask).
BinaryMask boundary_set(const BinaryMask& mask);
WeightMap boundary_weight_map(const BinaryMask& mask,
                              double boundary_weight = kDefaultBoundaryWeight);

/// 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps).
template <typename T>
T dice_loss(std::span<const T> prob_fg, const BinaryMask& mask, double eps = kDiceEps);

/// Mean over pixels of weight * -log softmax(logits)[label]. `logits` holds
/// the background plane followed by the foreground plane.
template <typename T>
T weighted_ce_loss(std::span<const T> logits, const BinaryMask& mask, const WeightMap& weights);

template <typename T>
struct LossValue {
  T total = 0;
  T dice = 0;
  T cross_entropy = 0;
  /// dL/dlogits, same shape as the logits.
  Tensor<T> d_logits;
};

/// Soft dice on the foreground probability plus boundary-weighted CE, per
/// sample, averaged over the batch.
template <typename T>
LossValue<T> total_loss(const Tensor<T>& logits, std::span<const BinaryMask> masks,
                        std::span<const WeightMap> weights, double eps = kDiceEps);

/// Both-empty pairs score 1 under kOne and 0 under kZero.
enum class EmptyPolicy { kOne, kZero };

double dsc(const BinaryMask& pred, const BinaryMask& gt, EmptyPolicy policy = EmptyPolicy::kOne);
double iou(const BinaryMask& pred, const BinaryMask& gt, EmptyPolicy policy = EmptyPolicy::kOne);

struct ImageScore {
  std::string semantic_label;
  double dsc = 0.0;
  double iou = 0.0;
  /// Prediction and ground truth both empty.
  bool empty_pair = false;
};

/// One row of the report; all values are percentages.
struct ReportRow {
  std::string label;
  size_t images = 0;
  double median_dsc = 0.0;
  double mean_dsc = 0.0;
  double std_dsc = 0.0;
  double mean_iou = 0.0;
  /// Mean IoU with both-empty pairs scored 0 instead of 100.
  double mean_iou_zero_on_empty = 0.0;
};

struct MetricsReport {
  /// Semantic labels in lexicographic order, then "overall".
  std::vector<ReportRow> rows;

  const ReportRow& overall() const { return rows.back(); }
  const ReportRow* find(const std::string& label) const;

  std::string to_table() const;
  nlohmann::json to_json() const;
};

inline constexpr const char* kReportColumns[] = {"Median DSC", "Mean DSC", "Std Dev DSC",
                                                 "Mean IoU"};

MetricsReport aggregate_report(std::span<const ImageScore> per_image);

}  // namespace omniseg
