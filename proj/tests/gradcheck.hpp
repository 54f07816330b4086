#pragma once

// Central finite-difference oracle used by the gradient tests. It only reads
// tensor values and re-evaluates the function; it never touches a tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "edf/ops.hpp"
#include "edf/tape.hpp"

namespace edf::testing {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

inline std::vector<Tensor> finite_difference(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                             double h = 1e-5) {
  std::vector<Tensor> grads;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> g(inputs[k].numel());
    for (std::size_t e = 0; e < g.size(); ++e) {
      auto eval = [&](double delta) {
        std::vector<Tensor> moved = inputs;
        std::vector<double> v = inputs[k].vec();
        v[e] += delta;
        moved[k] = Tensor(inputs[k].shape(), std::move(v));
        return f(moved).item();
      };
      g[e] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    grads.emplace_back(inputs[k].shape(), std::move(g));
  }
  return grads;
}

inline std::vector<Tensor> tape_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  TapeScope scope(tape);
  std::vector<Tensor> watched;
  for (const auto& t : inputs) watched.push_back(tape.watch(t));
  Tensor out = f(watched);
  auto g = tape.grad(out, watched);
  for (auto& t : g) t = t.detach();
  return g;
}

/// |a-b| / max(|a|, |b|, floor), maximized over all elements.
inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace edf::testing
