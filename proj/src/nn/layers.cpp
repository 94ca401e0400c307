// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include "omniseg/nn/layers.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include <Eigen/Core>

namespace omniseg::nn {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void im2col(const T* x, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, T* col) {
  for (int c = 0; c < channels; ++c) {
    const T* plane = x + static_cast<size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* row = col + (static_cast<size_t>(c * kernel + ky) * kernel + kx) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<size_t>(iy) * width;
          if (stride == 1) {
            const int shift = kx - pad;
            const int lo = std::max(0, -shift);
            const int hi = std::min(out_w, width - shift);
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) std::memcpy(dst + lo, src + lo + shift, sizeof(T) * (hi - lo));
            std::fill(dst + std::max(hi, lo), dst + out_w, T(0));
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, T* x) {
  std::fill(x, x + static_cast<size_t>(channels) * height * width, T(0));
  for (int c = 0; c < channels; ++c) {
    T* plane = x + static_cast<size_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* row = col + (static_cast<size_t>(c * kernel + ky) * kernel + kx) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          const T* src = row + static_cast<size_t>(oy) * out_w;
          T* dst = plane + static_cast<size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_rank4(const Shape& shape, const char* who) {
  if (shape.size() != 4) {
    throw ShapeError(std::string(who) + " expects an NCHW tensor, got " + shape_str(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(kernel / 2),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", {out_channels}) {}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / (static_cast<double>(in_) * kernel_ * kernel_));
  for (auto& w : weight_.value.values()) w = static_cast<T>(rng.uniform(-bound, bound));
  bias_.value.fill(T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool keep_for_backward) {
  require_rank4(x.shape(), "Conv2d");
  if (x.dim(1) != in_) {
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     shape_str(x.shape()));
  }
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int oh = out_size(h), ow = out_size(w);
  const int patch = in_ * kernel_ * kernel_;
  const int pixels = oh * ow;
  Tensor<T> y({n, out_, oh, ow});

  ConstMatMap<T> weight(weight_.value.data(), out_, patch);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), out_);
  const bool pointwise = kernel_ == 1 && stride_ == 1;
  AlignedVector<T> col(pointwise ? 0 : static_cast<size_t>(patch) * pixels);
  for (int i = 0; i < n; ++i) {
    const T* src = x.slab(i).data();
    if (!pointwise) {
      im2col(src, in_, h, w, kernel_, stride_, pad_, oh, ow, col.data());
      src = col.data();
    }
    MatMap<T> out(y.slab(i).data(), out_, pixels);
    out.noalias() = weight * ConstMatMap<T>(src, patch, pixels);
    out.colwise() += bias;
  }
  if (keep_for_backward) input_ = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  if (input_.empty()) throw RuntimeFailure(weight_.name + ": backward without cached forward");
  const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const int oh = out_size(h), ow = out_size(w);
  if (dy.shape() != Shape{n, out_, oh, ow}) {
    throw ShapeError(weight_.name + ": gradient shape " + shape_str(dy.shape()));
  }
  const int patch = in_ * kernel_ * kernel_;
  const int pixels = oh * ow;
  Tensor<T> dx(input_.shape());

  ConstMatMap<T> weight(weight_.value.data(), out_, patch);
  MatMap<T> dweight(weight_.grad.data(), out_, patch);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbias(bias_.grad.data(), out_);
  const bool pointwise = kernel_ == 1 && stride_ == 1;
  AlignedVector<T> col(pointwise ? 0 : static_cast<size_t>(patch) * pixels);
  AlignedVector<T> dcol(pointwise ? 0 : static_cast<size_t>(patch) * pixels);
  for (int i = 0; i < n; ++i) {
    ConstMatMap<T> grad(dy.slab(i).data(), out_, pixels);
    const T* src = input_.slab(i).data();
    if (!pointwise) {
      im2col(src, in_, h, w, kernel_, stride_, pad_, oh, ow, col.data());
      src = col.data();
    }
    dweight.noalias() += grad * ConstMatMap<T>(src, patch, pixels).transpose();
    dbias += grad.rowwise().sum();
    if (pointwise) {
      MatMap<T>(dx.slab(i).data(), patch, pixels).noalias() = weight.transpose() * grad;
    } else {
      MatMap<T>(dcol.data(), patch, pixels).noalias() = weight.transpose() * grad;
      col2im(dcol.data(), in_, h, w, kernel_, stride_, pad_, oh, ow, dx.slab(i).data());
    }
  }
  return dx;
}

// ------------------------------------------------------------- GroupNorm

template <typename T>
GroupNorm<T>::GroupNorm(const std::string& name, int channels, int groups, double eps)
    : channels_(channels),
      groups_(groups),
      eps_(eps),
      gamma_(name + ".gamma", {channels}),
      beta_(name + ".beta", {channels}) {
  if (groups <= 0 || channels % groups != 0) {
    throw ShapeError(name + ": " + std::to_string(groups) + " groups do not divide " +
                     std::to_string(channels) + " channels");
  }
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(const Tensor<T>& x, bool keep_for_backward) {
  require_rank4(x.shape(), "GroupNorm");
  if (x.dim(1) != channels_) {
    throw ShapeError(gamma_.name + ": expected " + std::to_string(channels_) + " channels, got " +
                     shape_str(x.shape()));
  }
  const int n = x.dim(0);
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  const int per_group = channels_ / groups_;
  const size_t group_size = plane * per_group;
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(n) * groups_);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const size_t base = (static_cast<size_t>(i) * channels_ + g * per_group) * plane;
      const T* src = x.data() + base;
      double sum = 0.0;
      for (size_t k = 0; k < group_size; ++k) sum += src[k];
      const double mean = sum / static_cast<double>(group_size);
      double sq = 0.0;
      for (size_t k = 0; k < group_size; ++k) {
        const double d = src[k] - mean;
        sq += d * d;
      }
      const double istd = 1.0 / std::sqrt(sq / static_cast<double>(group_size) + eps_);
      inv_std[static_cast<size_t>(i) * groups_ + g] = istd;
      T* xh = xhat.data() + base;
      T* dst = y.data() + base;
      for (int c = 0; c < per_group; ++c) {
        const int ch = g * per_group + c;
        const T scale = gamma_.value[ch];
        const T shift = beta_.value[ch];
        for (size_t k = 0; k < plane; ++k) {
          const size_t idx = c * plane + k;
          xh[idx] = static_cast<T>((src[idx] - mean) * istd);
          dst[idx] = scale * xh[idx] + shift;
        }
      }
    }
  }
  if (keep_for_backward) {
    normalized_ = std::move(xhat);
    inv_std_ = std::move(inv_std);
  }
  return y;
}

template <typename T>
Tensor<T> GroupNorm<T>::backward(const Tensor<T>& dy) {
  if (normalized_.empty()) throw RuntimeFailure(gamma_.name + ": backward without cached forward");
  normalized_.require_same_shape(dy, "GroupNorm backward");
  const int n = dy.dim(0);
  const size_t plane = static_cast<size_t>(dy.dim(2)) * dy.dim(3);
  const int per_group = channels_ / groups_;
  const double count = static_cast<double>(plane * per_group);
  Tensor<T> dx(dy.shape());
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups_; ++g) {
      const size_t base = (static_cast<size_t>(i) * channels_ + g * per_group) * plane;
      const T* xh = normalized_.data() + base;
      const T* grad = dy.data() + base;
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int c = 0; c < per_group; ++c) {
        const int ch = g * per_group + c;
        const double scale = gamma_.value[ch];
        double dgamma = 0.0, dbeta = 0.0;
        for (size_t k = 0; k < plane; ++k) {
          const size_t idx = c * plane + k;
          dgamma += grad[idx] * xh[idx];
          dbeta += grad[idx];
        }
        gamma_.grad[ch] += static_cast<T>(dgamma);
        beta_.grad[ch] += static_cast<T>(dbeta);
        sum_dxhat += scale * dbeta;
        sum_dxhat_xhat += scale * dgamma;
      }
      const double istd = inv_std_[static_cast<size_t>(i) * groups_ + g];
      T* out = dx.data() + base;
      for (int c = 0; c < per_group; ++c) {
        const double scale = gamma_.value[g * per_group + c];
        for (size_t k = 0; k < plane; ++k) {
          const size_t idx = c * plane + k;
          const double dxhat = grad[idx] * scale;
          out[idx] = static_cast<T>(istd * (dxhat - (sum_dxhat + xh[idx] * sum_dxhat_xhat) / count));
        }
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------------ ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, bool keep_for_backward) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  if (keep_for_backward) output_ = y;
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) const {
  output_.require_same_shape(dy, "ReLU backward");
  Tensor<T> dx = dy;
  for (size_t i = 0; i < dx.size(); ++i) {
    if (!(output_[i] > T(0))) dx[i] = T(0);
  }
  return dx;
}

// -------------------------------------------------------------- ConvBlock

template <typename T>
ConvBlock<T>::ConvBlock(const std::string& name, int in_channels, int out_channels, int groups,
                        int stride)
    : conv_(name + ".conv", in_channels, out_channels, 3, stride),
      norm_(name + ".norm", out_channels, groups) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x, bool keep) {
  return norm_.forward(relu_.forward(conv_.forward(x, keep), keep), keep);
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& dy) {
  return conv_.backward(relu_.backward(norm_.backward(dy)));
}

// ---------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(const std::string& name, int channels, int groups)
    : first_(name + ".block1", channels, channels, groups),
      second_(name + ".block2", channels, channels, groups) {}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, bool keep) {
  Tensor<T> y = second_.forward(first_.forward(x, keep), keep);
  y += x;
  return y;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx = first_.backward(second_.backward(dy));
  dx += dy;
  return dx;
}

// ------------------------------------------------------ shape utilities

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require_rank4(x.shape(), "upsample");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      for (int yy = 0; yy < 2 * h; ++yy) {
        const T* src = &x.at(i, ch, yy / 2, 0);
        T* dst = &y.at(i, ch, yy, 0);
        for (int xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample_nearest2x_backward(const Tensor<T>& dy) {
  require_rank4(dy.shape(), "upsample backward");
  const int n = dy.dim(0), c = dy.dim(1), h = dy.dim(2) / 2, w = dy.dim(3) / 2;
  Tensor<T> dx({n, c, h, w});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      for (int yy = 0; yy < 2 * h; ++yy) {
        const T* src = &dy.at(i, ch, yy, 0);
        T* dst = &dx.at(i, ch, yy / 2, 0);
        for (int xx = 0; xx < 2 * w; ++xx) dst[xx / 2] += src[xx];
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "concat");
  require_rank4(b.shape(), "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const int n = a.dim(0);
  Tensor<T> y({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    auto sa = a.slab(i), sb = b.slab(i);
    T* dst = y.slab(i).data();
    std::copy(sa.begin(), sa.end(), dst);
    std::copy(sb.begin(), sb.end(), dst + sa.size());
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first_channels) {
  require_rank4(x.shape(), "split");
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor<T> a({n, first_channels, h, w});
  Tensor<T> b({n, x.dim(1) - first_channels, h, w});
  for (int i = 0; i < n; ++i) {
    const T* src = x.slab(i).data();
    auto da = a.slab(i), db = b.slab(i);
    std::copy(src, src + da.size(), da.data());
    std::copy(src + da.size(), src + da.size() + db.size(), db.data());
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank4(x.shape(), "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> y({n, c});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* src = &x.at(i, ch, 0, 0);
      double sum = 0.0;
      for (size_t k = 0; k < plane; ++k) sum += src[k];
      y[static_cast<size_t>(i) * c + ch] = static_cast<T>(sum / static_cast<double>(plane));
    }
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, int height, int width) {
  const int n = dy.dim(0), c = dy.dim(1);
  const T scale = T(1) / static_cast<T>(static_cast<double>(height) * width);
  Tensor<T> dx({n, c, height, width});
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T g = dy[static_cast<size_t>(i) * c + ch] * scale;
      T* dst = &dx.at(i, ch, 0, 0);
      std::fill(dst, dst + static_cast<size_t>(height) * width, g);
    }
  }
  return dx;
}

#define OMNISEG_INSTANTIATE(T)                                                              \
  template class Conv2d<T>;                                                                 \
  template class GroupNorm<T>;                                                              \
  template class ReLU<T>;                                                                   \
  template class ConvBlock<T>;                                                              \
  template class ResidualBlock<T>;                                                          \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                  \
  template Tensor<T> upsample_nearest2x_backward(const Tensor<T>&);                         \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                   \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);           \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                     \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, int, int);

OMNISEG_INSTANTIATE(float)
OMNISEG_INSTANTIATE(double)

#undef OMNISEG_INSTANTIATE

}  // namespace omniseg::nn
