#include "edf/dae.hpp"

namespace edf::dae {

Tensor weights_from_map(const cam::ActivationMapSet& maps, double beta) {
  if (!(beta > 0.0)) throw ConfigError("enhancement factor beta must be positive");
  const std::size_t n = maps.size();
  if (maps.maps.rank() != 3 || maps.maps.dim(0) != n) throw ShapeError("weights_from_map: malformed map set");
  const std::size_t hw = maps.maps.dim(1) * maps.maps.dim(2);
  const auto m = maps.maps.values();
  std::vector<double> w(n * hw, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!maps.degenerate.empty() && maps.degenerate[i]) continue;
    const double mean = maps.means[i];
    for (std::size_t p = 0; p < hw; ++p) {
      const double v = m[i * hw + p];
      if (v >= mean) w[i * hw + p] = beta + v;
    }
  }
  return Tensor(maps.maps.shape(), std::move(w));
}

Tensor rescale_gradients(const Tensor& grad, const Tensor& weights) {
  if (grad.rank() != 4 || weights.rank() != 3 || grad.dim(0) != weights.dim(0) ||
      grad.dim(2) != weights.dim(1) || grad.dim(3) != weights.dim(2)) {
    throw ShapeError("rescale_gradients: gradient " + shape_str(grad.shape()) + " and weights " +
                     shape_str(weights.shape()) + " do not align");
  }
  const std::size_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
  const auto g = grad.values();
  const auto w = weights.values();
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) out[base + p] = g[base + p] * w[i * hw + p];
    }
  }
  return Tensor(grad.shape(), std::move(out));
}

bool refresh_due(long iteration, long period) {
  if (period < 1) throw ConfigError("map refresh period K must be >= 1");
  return iteration % period == 0;
}

}  // namespace edf::dae
