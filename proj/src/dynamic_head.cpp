// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/dynamic_head.hpp"

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "omniseg/rng.hpp"

namespace omniseg {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

constexpr int kParams = HeadSpec::total_params();

}  // namespace

template <typename T>
std::array<HeadLayerParams<T>, 3> slice_params(std::span<const T> omega_row) {
  if (omega_row.size() != static_cast<size_t>(kParams)) {
    throw ShapeError("dynamic head expects " + std::to_string(kParams) + " parameters, got " +
                     std::to_string(omega_row.size()));
  }
  std::array<HeadLayerParams<T>, 3> out;
  for (int l = 0; l < 3; ++l) {
    const auto shape = HeadSpec::kLayers[static_cast<size_t>(l)];
    const auto offset = static_cast<size_t>(HeadSpec::layer_offset(l));
    out[static_cast<size_t>(l)] = {
        shape, omega_row.subspan(offset, static_cast<size_t>(shape.weight_count())),
        omega_row.subspan(offset + shape.weight_count(), static_cast<size_t>(shape.out))};
  }
  return out;
}

// ------------------------------------------------------------- Controller

template <typename T>
Controller<T>::Controller(int feature_dim, int num_tasks, int num_scales, std::uint64_t seed)
    : feature_dim_(feature_dim),
      num_tasks_(num_tasks),
      num_scales_(num_scales),
      weight_("controller.weight", {kParams, feature_dim + num_tasks + num_scales}),
      bias_("controller.bias", {kParams}) {
  Rng rng(derive_seed({seed, 0xc0c0ULL}));
  const double bound = std::sqrt(6.0 / input_dim());
  for (auto& w : weight_.value.values()) w = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
ControllerOutput<T> Controller<T>::forward(const Tensor<T>& gap_feature,
                                           std::span<const TaskCode> tasks,
                                           std::span<const ScaleCode> scales, bool keep) {
  if (gap_feature.rank() != 2 || gap_feature.dim(1) != feature_dim_) {
    throw ShapeError("controller expects N x " + std::to_string(feature_dim_) +
                     " GAP feature, got " + shape_str(gap_feature.shape()));
  }
  const int n = gap_feature.dim(0);
  auto code_at = [n](auto span, int i, const char* what) -> const auto& {
    if (span.size() != 1 && span.size() != static_cast<size_t>(n)) {
      throw ShapeError(std::string("controller: ") + what + " codes must number 1 or " +
                       std::to_string(n) + ", got " + std::to_string(span.size()));
    }
    return span[span.size() == 1 ? 0 : static_cast<size_t>(i)];
  };

  Tensor<T> fused({n, input_dim()});
  for (int i = 0; i < n; ++i) {
    const auto& task = code_at(tasks, i, "task");
    const auto& scale = code_at(scales, i, "scale");
    const int concat_len = feature_dim_ + task.length() + scale.length();
    if (task.length() != num_tasks_ || scale.length() != num_scales_) {
      throw ShapeError("controller input length " + std::to_string(concat_len) + " (" +
                       std::to_string(feature_dim_) + " + " + std::to_string(task.length()) + " + " +
                       std::to_string(scale.length()) + "), expected " +
                       std::to_string(input_dim()) + " (" + std::to_string(feature_dim_) + " + " +
                       std::to_string(num_tasks_) + " + " + std::to_string(num_scales_) + ")");
    }
    T* dst = fused.slab(i).data();
    auto src = gap_feature.slab(i);
    std::copy(src.begin(), src.end(), dst);
    for (int k = 0; k < num_tasks_; ++k) dst[feature_dim_ + k] = static_cast<T>(task.bits()[k]);
    for (int k = 0; k < num_scales_; ++k) {
      dst[feature_dim_ + num_tasks_ + k] = static_cast<T>(scale.bits()[k]);
    }
  }
  if (!fused.all_finite()) throw ValidationError("controller input contains non-finite values");

  ControllerOutput<T> out{Tensor<T>({n, kParams})};
  ConstMatMap<T> w(weight_.value.data(), kParams, input_dim());
  ConstVecMap<T> b(bias_.value.data(), kParams);
  MatMap<T> omega(out.omega.data(), n, kParams);
  omega.noalias() = ConstMatMap<T>(fused.data(), n, input_dim()) * w.transpose();
  omega.rowwise() += b.transpose();
  if (keep) fused_ = std::move(fused);
  return out;
}

template <typename T>
Tensor<T> Controller<T>::backward(const Tensor<T>& d_omega) {
  if (fused_.empty()) throw RuntimeFailure("controller backward without cached forward");
  const int n = fused_.dim(0);
  if (d_omega.shape() != Shape{n, kParams}) {
    throw ShapeError("controller gradient shape " + shape_str(d_omega.shape()));
  }
  ConstMatMap<T> grad(d_omega.data(), n, kParams);
  MatMap<T>(weight_.grad.data(), kParams, input_dim()).noalias() +=
      grad.transpose() * ConstMatMap<T>(fused_.data(), n, input_dim());
  VecMap<T>(bias_.grad.data(), kParams) += grad.colwise().sum().transpose();

  ConstMatMap<T> w(weight_.value.data(), kParams, input_dim());
  Tensor<T> d_gap({n, feature_dim_});
  MatMap<T>(d_gap.data(), n, feature_dim_).noalias() =
      grad * w.leftCols(feature_dim_);
  return d_gap;
}

// ------------------------------------------------------------- Prediction

template <typename T>
Tensor<T> Prediction<T>::probabilities() const {
  Tensor<T> probs(logits.shape());
  const int n = logits.dim(0);
  const size_t plane = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
  for (int i = 0; i < n; ++i) {
    const T* bg = logits.slab(i).data();
    const T* fg = bg + plane;
    T* pb = probs.slab(i).data();
    T* pf = pb + plane;
    for (size_t k = 0; k < plane; ++k) {
      // Two-class softmax as a logistic of the logit difference.
      const T z = fg[k] - bg[k];
      const T p = T(1) / (T(1) + std::exp(-z));
      pf[k] = p;
      pb[k] = T(1) - p;
    }
  }
  return probs;
}

template <typename T>
std::vector<BinaryMask> Prediction<T>::masks() const {
  const int n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  const size_t plane = static_cast<size_t>(h) * w;
  std::vector<BinaryMask> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    BinaryMask mask(h, w);
    const T* bg = logits.slab(i).data();
    const T* fg = bg + plane;
    for (size_t k = 0; k < plane; ++k) mask.pixels[k] = fg[k] > bg[k] ? 1 : 0;
    out.push_back(std::move(mask));
  }
  return out;
}

// ------------------------------------------------------------ DynamicHead

template <typename T>
Prediction<T> DynamicHead<T>::forward(const Tensor<T>& decoder_map,
                                      const ControllerOutput<T>& params, bool keep) {
  if (decoder_map.rank() != 4 || decoder_map.dim(1) != HeadSpec::kInputChannels) {
    throw ShapeError("dynamic head expects N x 8 x H x W input, got " +
                     shape_str(decoder_map.shape()));
  }
  const int n = decoder_map.dim(0), h = decoder_map.dim(2), w = decoder_map.dim(3);
  if (params.omega.rank() != 2 || params.batch() != n) {
    throw ShapeError("dynamic head: " + std::to_string(n) + " samples but parameter rows " +
                     shape_str(params.omega.shape()));
  }
  const int pixels = h * w;
  Prediction<T> pred{Tensor<T>({n, HeadSpec::kOutputChannels, h, w})};
  Tensor<T> hidden1({n, 8, h, w});
  Tensor<T> hidden2({n, 8, h, w});
  for (int i = 0; i < n; ++i) {
    const auto layers = params.slices(i);
    auto apply = [pixels](const HeadLayerParams<T>& layer, const T* in, T* out, bool relu) {
      MatMap<T> y(out, layer.shape.out, pixels);
      y.noalias() = ConstMatMap<T>(layer.weight.data(), layer.shape.out, layer.shape.in) *
                    ConstMatMap<T>(in, layer.shape.in, pixels);
      y.colwise() += ConstVecMap<T>(layer.bias.data(), layer.shape.out);
      if (relu) y = y.cwiseMax(T(0));
    };
    apply(layers[0], decoder_map.slab(i).data(), hidden1.slab(i).data(), true);
    apply(layers[1], hidden1.slab(i).data(), hidden2.slab(i).data(), true);
    apply(layers[2], hidden2.slab(i).data(), pred.logits.slab(i).data(), false);
  }
  if (keep) {
    input_ = decoder_map;
    omega_ = params.omega;
    hidden1_ = std::move(hidden1);
    hidden2_ = std::move(hidden2);
  }
  return pred;
}

template <typename T>
typename DynamicHead<T>::Gradients DynamicHead<T>::backward(const Tensor<T>& d_logits) {
  if (input_.empty()) throw RuntimeFailure("dynamic head backward without cached forward");
  const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  if (d_logits.shape() != Shape{n, 2, h, w}) {
    throw ShapeError("dynamic head gradient shape " + shape_str(d_logits.shape()));
  }
  const int pixels = h * w;
  Gradients grads{Tensor<T>(input_.shape()), Tensor<T>({n, kParams})};
  RowMatrix<T> d_hidden2(8, pixels), d_hidden1(8, pixels);
  for (int i = 0; i < n; ++i) {
    const auto layers = slice_params<T>(omega_.slab(i));
    T* d_row = grads.d_omega.slab(i).data();
    ConstMatMap<T> m(input_.slab(i).data(), 8, pixels);
    ConstMatMap<T> h1(hidden1_.slab(i).data(), 8, pixels);
    ConstMatMap<T> h2(hidden2_.slab(i).data(), 8, pixels);
    ConstMatMap<T> d3(d_logits.slab(i).data(), 2, pixels);

    auto weight_grad = [d_row](int layer, int out, int in) {
      return MatMap<T>(d_row + HeadSpec::layer_offset(layer), out, in);
    };
    auto bias_grad = [d_row](int layer, int out, int in) {
      return VecMap<T>(d_row + HeadSpec::layer_offset(layer) + out * in, out);
    };
    auto weights = [&layers](int layer) {
      const auto& l = layers[static_cast<size_t>(layer)];
      return ConstMatMap<T>(l.weight.data(), l.shape.out, l.shape.in);
    };

    weight_grad(2, 2, 8).noalias() = d3 * h2.transpose();
    bias_grad(2, 2, 8) = d3.rowwise().sum();
    d_hidden2.noalias() = weights(2).transpose() * d3;
    d_hidden2 = (h2.array() > T(0)).select(d_hidden2, T(0));

    weight_grad(1, 8, 8).noalias() = d_hidden2 * h1.transpose();
    bias_grad(1, 8, 8) = d_hidden2.rowwise().sum();
    d_hidden1.noalias() = weights(1).transpose() * d_hidden2;
    d_hidden1 = (h1.array() > T(0)).select(d_hidden1, T(0));

    weight_grad(0, 8, 8).noalias() = d_hidden1 * m.transpose();
    bias_grad(0, 8, 8) = d_hidden1.rowwise().sum();
    MatMap<T>(grads.d_decoder_map.slab(i).data(), 8, pixels).noalias() =
        weights(0).transpose() * d_hidden1;
  }
  return grads;
}

template <typename T>
Prediction<T> head_forward(const Tensor<T>& decoder_map, const ControllerOutput<T>& params) {
  DynamicHead<T> head;
  return head.forward(decoder_map, params, false);
}

#define OMNISEG_INSTANTIATE(T)                                                           \
  template std::array<HeadLayerParams<T>, 3> slice_params<T>(std::span<const T>);        \
  template class Controller<T>;                                                          \
  template struct Prediction<T>;                                                         \
  template class DynamicHead<T>;                                                         \
  template Prediction<T> head_forward(const Tensor<T>&, const ControllerOutput<T>&);

OMNISEG_INSTANTIATE(float)
OMNISEG_INSTANTIATE(double)

#undef OMNISEG_INSTANTIATE

}  // namespace omniseg
