#pragma once

// Per-task loop bodies shared by the serial and OpenMP kernels.

#include <algorithm>
#include <cstddef>

#include "edf/kernels.hpp"

namespace edf::kernels::detail {

inline void matmul_row(const double* a, const double* b, double* c, std::size_t row,
                       std::size_t k, std::size_t n) {
  double* crow = c + row * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a + row * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double av = arow[kk];
    const double* brow = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// valid output columns for kernel offset `kw`: iw = ow + kw - pad in [0, width)
inline void valid_range(std::size_t kw, std::size_t pad, std::size_t width, std::size_t out_w,
                        std::size_t& lo, std::size_t& hi) {
  lo = kw < pad ? pad - kw : 0;
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(width + pad) - static_cast<std::ptrdiff_t>(kw);
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(h, 0, static_cast<std::ptrdiff_t>(out_w)));
}

inline void conv2d_plane(const double* x, const double* w, double* y, const ConvDims& d,
                         std::size_t b, std::size_t o) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const std::size_t plane = d.height * d.width;
  double* yp = y + (b * d.out_channels + o) * oh_n * ow_n;
  std::fill(yp, yp + oh_n * ow_n, 0.0);
  for (std::size_t i = 0; i < d.in_channels; ++i) {
    const double* xp = x + (b * d.in_channels + i) * plane;
    const double* wp = w + (o * d.in_channels + i) * d.kernel_h * d.kernel_w;
    for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
      std::size_t rlo, rhi;
      valid_range(kh, d.pad, d.height, oh_n, rlo, rhi);
      for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
        const double wv = wp[kh * d.kernel_w + kw];
        std::size_t clo, chi;
        valid_range(kw, d.pad, d.width, ow_n, clo, chi);
        for (std::size_t oh = rlo; oh < rhi; ++oh) {
          const double* xr = xp + (oh + kh - d.pad) * d.width;
          double* yr = yp + oh * ow_n;
          for (std::size_t ow = clo; ow < chi; ++ow) yr[ow] += wv * xr[ow + kw - d.pad];
        }
      }
    }
  }
}

inline void conv2d_input_grad_plane(const double* gy, const double* w, double* gx,
                                    const ConvDims& d, std::size_t b, std::size_t i) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  double* gp = gx + (b * d.in_channels + i) * d.height * d.width;
  std::fill(gp, gp + d.height * d.width, 0.0);
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    const double* gyp = gy + (b * d.out_channels + o) * oh_n * ow_n;
    const double* wp = w + (o * d.in_channels + i) * d.kernel_h * d.kernel_w;
    for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
      std::size_t rlo, rhi;
      valid_range(kh, d.pad, d.height, oh_n, rlo, rhi);
      for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
        const double wv = wp[kh * d.kernel_w + kw];
        std::size_t clo, chi;
        valid_range(kw, d.pad, d.width, ow_n, clo, chi);
        for (std::size_t oh = rlo; oh < rhi; ++oh) {
          double* gr = gp + (oh + kh - d.pad) * d.width;
          const double* yr = gyp + oh * ow_n;
          for (std::size_t ow = clo; ow < chi; ++ow) gr[ow + kw - d.pad] += wv * yr[ow];
        }
      }
    }
  }
}

inline void conv2d_weight_grad_plane(const double* x, const double* gy, double* gw,
                                     const ConvDims& d, std::size_t o, std::size_t i) {
  const std::size_t oh_n = d.out_h(), ow_n = d.out_w();
  const std::size_t plane = d.height * d.width;
  double* gwp = gw + (o * d.in_channels + i) * d.kernel_h * d.kernel_w;
  for (std::size_t kh = 0; kh < d.kernel_h; ++kh) {
    std::size_t rlo, rhi;
    valid_range(kh, d.pad, d.height, oh_n, rlo, rhi);
    for (std::size_t kw = 0; kw < d.kernel_w; ++kw) {
      std::size_t clo, chi;
      valid_range(kw, d.pad, d.width, ow_n, clo, chi);
      double acc = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* xp = x + (b * d.in_channels + i) * plane;
        const double* gyp = gy + (b * d.out_channels + o) * oh_n * ow_n;
        for (std::size_t oh = rlo; oh < rhi; ++oh) {
          const double* xr = xp + (oh + kh - d.pad) * d.width;
          const double* yr = gyp + oh * ow_n;
          for (std::size_t ow = clo; ow < chi; ++ow) acc += yr[ow] * xr[ow + kw - d.pad];
        }
      }
      gwp[kh * d.kernel_w + kw] = acc;
    }
  }
}

}  // namespace edf::kernels::detail
