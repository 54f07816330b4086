#include "edf/kernels.hpp"
#include "kernel_bodies.hpp"

namespace edf::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t r = 0; r < m; ++r) detail::matmul_row(a.data(), b.data(), c.data(), r, k, n);
}

void conv2d(std::span<const double> x, std::span<const double> w, std::span<double> y,
            const ConvDims& d) {
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      detail::conv2d_plane(x.data(), w.data(), y.data(), d, b, o);
}

void conv2d_input_grad(std::span<const double> gy, std::span<const double> w,
                       std::span<double> gx, const ConvDims& d) {
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t i = 0; i < d.in_channels; ++i)
      detail::conv2d_input_grad_plane(gy.data(), w.data(), gx.data(), d, b, i);
}

void conv2d_weight_grad(std::span<const double> x, std::span<const double> gy,
                        std::span<double> gw, const ConvDims& d) {
  for (std::size_t o = 0; o < d.out_channels; ++o)
    for (std::size_t i = 0; i < d.in_channels; ++i)
      detail::conv2d_weight_grad_plane(x.data(), gy.data(), gw.data(), d, o, i);
}

}  // namespace edf::kernels::serial
