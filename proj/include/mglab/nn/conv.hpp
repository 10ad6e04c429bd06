#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <string>
#include <vector>

#include "mglab/parallel.hpp"
#include "mglab/tensor.hpp"

namespace mglab::nn {

struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;

  std::size_t effective_kernel() const { return dilation * (kernel - 1) + 1; }

  std::size_t out_extent(std::size_t in) const {
    const std::size_t padded = in + 2 * padding;
    if (padded < effective_kernel()) {
      throw ShapeError("conv2d: input extent " + std::to_string(in) + " smaller than kernel footprint " +
                       std::to_string(effective_kernel()));
    }
    return (padded - effective_kernel()) / stride + 1;
  }

  bool is_pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// col is (C*k*k) x (Ho*Wo), row-major.
template <typename T>
void im2col(const T* in, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho, std::size_t wo,
            T* col) {
  const std::size_t k = g.kernel;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = in + c * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        T* dst = col + row * ho * wo;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki * g.dilation) - static_cast<long>(g.padding);
          if (ii < 0 || ii >= static_cast<long>(h)) {
            std::fill_n(dst + oi * wo, wo, T{0});
            continue;
          }
          const T* src_row = plane + ii * w;
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj * g.dilation) - static_cast<long>(g.padding);
            dst[oi * wo + oj] = (jj < 0 || jj >= static_cast<long>(w)) ? T{0} : src_row[jj];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t h, std::size_t w, const ConvGeometry& g, std::size_t ho, std::size_t wo,
                T* out) {
  const std::size_t k = g.kernel;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = out + c * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        const T* src = col + row * ho * wo;
        for (std::size_t oi = 0; oi < ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki * g.dilation) - static_cast<long>(g.padding);
          if (ii < 0 || ii >= static_cast<long>(h)) continue;
          T* dst_row = plane + ii * w;
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj * g.dilation) - static_cast<long>(g.padding);
            if (jj >= 0 && jj < static_cast<long>(w)) dst_row[jj] += src[oi * wo + oj];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                     const ConvGeometry& g) {
  if (input.rank() != 4 || input.dim(1) != g.in_channels) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with " +
                     std::to_string(g.in_channels) + " input channels");
  }
  require_shape(weight, {g.out_channels, g.in_channels, g.kernel, g.kernel}, "conv2d weight");
  require_shape(bias, {g.out_channels}, "conv2d bias");
}

}  // namespace detail

/// Cross-correlation over an [N, C, H, W] batch. Weight is [Co, C, k, k].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvGeometry& g) {
  detail::check_conv_args(input, weight, bias, g);
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;
  Tensor<T> out({n, g.out_channels, ho, wo});
  detail::CMapMat<T> wmat(weight.data(), g.out_channels, patch);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.data(), g.out_channels);

  // Every sample goes through aligned scratch buffers so its result does not
  // depend on its position in the batch.
  parallel_for(n, [&](std::size_t s) {
    AlignedVector<T> col(patch * ho * wo), res(g.out_channels * ho * wo);
    const T* src = input.data() + s * g.in_channels * h * w;
    if (g.is_pointwise()) {
      std::copy_n(src, col.size(), col.data());
    } else {
      detail::im2col(src, h, w, g, ho, wo, col.data());
    }
    detail::CMapMat<T> cmat(col.data(), patch, ho * wo);
    detail::MapMat<T> omat(res.data(), g.out_channels, ho * wo);
    omat.noalias() = wmat * cmat;
    omat.colwise() += bvec;
    std::copy(res.begin(), res.end(), out.data() + s * g.out_channels * ho * wo);
  });
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Exact analytic gradients of conv2d_forward. Per-sample partial weight
/// gradients are summed in sample order, so the result is independent of the
/// worker count.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                             const ConvGeometry& g, bool need_input_grad = true) {
  const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const std::size_t ho = g.out_extent(h), wo = g.out_extent(w);
  require_shape(grad_out, {n, g.out_channels, ho, wo}, "conv2d grad_out");
  const std::size_t patch = g.in_channels * g.kernel * g.kernel;

  ConvGrads<T> grads{Tensor<T>(need_input_grad ? input.shape() : Shape{0}), Tensor<T>(weight.shape()),
                     Tensor<T>({g.out_channels})};
  std::vector<Tensor<T>> partial_w(n, Tensor<T>(weight.shape()));
  std::vector<Tensor<T>> partial_b(n, Tensor<T>({g.out_channels}));
  detail::CMapMat<T> wmat(weight.data(), g.out_channels, patch);

  parallel_for(n, [&](std::size_t s) {
    AlignedVector<T> col(patch * ho * wo), gout(g.out_channels * ho * wo);
    const T* src = input.data() + s * g.in_channels * h * w;
    if (g.is_pointwise()) {
      std::copy_n(src, col.size(), col.data());
    } else {
      detail::im2col(src, h, w, g, ho, wo, col.data());
    }
    std::copy_n(grad_out.data() + s * gout.size(), gout.size(), gout.data());
    detail::CMapMat<T> cmat(col.data(), patch, ho * wo);
    detail::CMapMat<T> gmat(gout.data(), g.out_channels, ho * wo);
    detail::MapMat<T> dw(partial_w[s].data(), g.out_channels, patch);
    dw.noalias() = gmat * cmat.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(partial_b[s].data(), g.out_channels);
    db = gmat.rowwise().sum();
    if (need_input_grad) {
      T* din = grads.input.data() + s * g.in_channels * h * w;
      AlignedVector<T> dcol(patch * ho * wo);
      detail::MapMat<T> dmat(dcol.data(), patch, ho * wo);
      dmat.noalias() = wmat.transpose() * gmat;
      if (g.is_pointwise()) {
        std::copy(dcol.begin(), dcol.end(), din);
      } else {
        detail::col2im_add(dcol.data(), h, w, g, ho, wo, din);
      }
    }
  });
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < grads.weight.size(); ++i) grads.weight[i] += partial_w[s][i];
    for (std::size_t i = 0; i < grads.bias.size(); ++i) grads.bias[i] += partial_b[s][i];
  }
  return grads;
}

}  // namespace mglab::nn
