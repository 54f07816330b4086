#pragma once

#include <cstddef>
#include <span>

// Dense compute kernels behind the differentiable ops.
//
// Every kernel exists twice: `serial::` is the plain reference loop nest,
// the unqualified version splits the same loop nest across OpenMP threads.
// Both accumulate each output element in the same order, so results are
// bit-identical regardless of thread count.

namespace edf::kernels {

/// Stride-1 2-D convolution geometry (cross-correlation, zero padding).
struct ConvDims {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t pad = 0;

  std::size_t out_h() const { return height + 2 * pad - kernel_h + 1; }
  std::size_t out_w() const { return width + 2 * pad - kernel_w + 1; }
};

namespace serial {

// c[m,n] = sum_k a[m,k] b[k,n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

// y[b,o,:,:] = sum_{i,kh,kw} w[o,i,kh,kw] x[b,i,:+kh-p,:+kw-p]
void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y,
            const ConvDims& d);

// gradient of <gy, conv2d(x, w)> with respect to x
void conv2d_input_grad(std::span<const double> gy, std::span<const double> w,
                       std::span<double> gx, const ConvDims& d);

// gradient of <gy, conv2d(x, w)> with respect to w
void conv2d_weight_grad(std::span<const double> x, std::span<const double> gy,
                        std::span<double> gw, const ConvDims& d);

}  // namespace serial

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y,
            const ConvDims& d);
void conv2d_input_grad(std::span<const double> gy, std::span<const double> w,
                       std::span<double> gx, const ConvDims& d);
void conv2d_weight_grad(std::span<const double> x, std::span<const double> gy,
                        std::span<double> gw, const ConvDims& d);

/// Thread count used by the parallel kernels (OpenMP max threads, or 1).
int thread_count();
void set_thread_count(int n);

}  // namespace edf::kernels
