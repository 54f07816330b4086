#include "edf/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kernel_bodies.hpp"

namespace edf::kernels {

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_thread_count(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    detail::matmul_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(r), k, n);
}

void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y,
            const ConvDims& d) {
  const auto tasks = static_cast<std::ptrdiff_t>(d.batch * d.out_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const auto u = static_cast<std::size_t>(t);
    detail::conv2d_plane(x.data(), w.data(), y.data(), d, u / d.out_channels, u % d.out_channels);
  }
}

void conv2d_input_grad(std::span<const double> gy, std::span<const double> w,
                       std::span<double> gx, const ConvDims& d) {
  const auto tasks = static_cast<std::ptrdiff_t>(d.batch * d.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const auto u = static_cast<std::size_t>(t);
    detail::conv2d_input_grad_plane(gy.data(), w.data(), gx.data(), d, u / d.in_channels,
                                    u % d.in_channels);
  }
}

void conv2d_weight_grad(std::span<const double> x, std::span<const double> gy,
                        std::span<double> gw, const ConvDims& d) {
  const auto tasks = static_cast<std::ptrdiff_t>(d.out_channels * d.in_channels);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    const auto u = static_cast<std::size_t>(t);
    detail::conv2d_weight_grad_plane(x.data(), gy.data(), gw.data(), d, u / d.in_channels,
                                     u % d.in_channels);
  }
}

}  // namespace edf::kernels
