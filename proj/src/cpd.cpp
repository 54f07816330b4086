#include "edf/cpd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace edf::cpd {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::LossSorted: return "loss_sorted";
    case Strategy::Random: return "random";
    case Strategy::Uniform: return "uniform";
    case Strategy::First: return "first";
    case Strategy::Middle: return "middle";
    case Strategy::Last: return "last";
  }
  return "?";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all{Strategy::Random, Strategy::Uniform, Strategy::First,
                                         Strategy::Middle, Strategy::Last,    Strategy::LossSorted};
  return all;
}

Strategy parse_strategy(const std::string& s) {
  for (Strategy v : all_strategies()) {
    if (strategy_name(v) == s) return v;
  }
  throw ConfigError("unknown dropout strategy '" + s +
                    "' (expected loss_sorted, random, uniform, first, middle or last)");
}

std::vector<double> entry_keys(const matcher::LossArray& arr, SortKey key) {
  std::vector<double> keys(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const double n = arr[i].numerator.item();
    if (key == SortKey::Raw) {
      keys[i] = n;
      continue;
    }
    const double d = arr[i].denominator.item();
    if (d > 0.0) {
      keys[i] = n / d;
    } else {
      keys[i] = n > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    }
  }
  return keys;
}

std::vector<std::size_t> select_drop_indices(const matcher::LossArray& arr, double alpha,
                                             Strategy strategy, std::mt19937_64& rng, SortKey key) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("dropout ratio alpha must be in [0, 1)");
  const std::size_t p = arr.size();
  const auto k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(p)));
  std::vector<std::size_t> out;
  if (k == 0) return out;
  out.reserve(k);
  switch (strategy) {
    case Strategy::LossSorted: {
      const auto keys = entry_keys(arr, key);
      std::vector<std::size_t> idx(p);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
      out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    }
    case Strategy::Random: {
      std::vector<std::size_t> idx(p);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    }
    case Strategy::Uniform:
      for (std::size_t j = 0; j < k; ++j) out.push_back((2 * j + 1) * p / (2 * k));
      break;
    case Strategy::First:
      for (std::size_t j = 0; j < k; ++j) out.push_back(j);
      break;
    case Strategy::Middle:
      for (std::size_t j = 0; j < k; ++j) out.push_back((p - k) / 2 + j);
      break;
    case Strategy::Last:
      for (std::size_t j = 0; j < k; ++j) out.push_back(p - k + j);
      break;
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor drop_and_reduce(const matcher::LossArray& arr, const std::vector<std::size_t>& drop,
                       Scope scope) {
  std::vector<bool> keep(arr.size(), true);
  for (std::size_t i : drop) {
    if (i >= arr.size()) throw ShapeError("drop index " + std::to_string(i) + " out of range");
    keep[i] = false;
  }
  if (std::none_of(keep.begin(), keep.end(), [](bool b) { return b; })) {
    throw ConfigError("cannot drop every loss entry");
  }
  if (scope == Scope::Full) return matcher::masked_ratio(arr, keep, std::vector<bool>(arr.size(), true));
  return matcher::masked_ratio(arr, keep, keep);
}

}  // namespace edf::cpd
