#pragma once

#include <random>
#include <string>
#include <vector>

#include "edf/matcher.hpp"

namespace edf::cpd {

enum class Strategy { LossSorted, Random, Uniform, First, Middle, Last };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& s);
const std::vector<Strategy>& all_strategies();

/// Key used to rank entries for LossSorted.
enum class SortKey {
  Normalized,  // n_i / d_i
  Raw,         // n_i
};

/// Which denominators survive the drop.
enum class Scope {
  Kept,  // sum over kept entries only
  Full,  // sum over all entries
};

/// floor(alpha * P) indices, ascending. LossSorted takes the smallest keys
/// (ties by lower index); First/Last take the leading/trailing block,
/// Middle the centered block, Uniform evenly spaced indices.
std::vector<std::size_t> select_drop_indices(const matcher::LossArray& arr, double alpha,
                                             Strategy strategy, std::mt19937_64& rng,
                                             SortKey key = SortKey::Normalized);

/// Sort key of every entry; a zero baseline maps to +inf (or 0 when n_i is 0 too).
std::vector<double> entry_keys(const matcher::LossArray& arr, SortKey key);

Tensor drop_and_reduce(const matcher::LossArray& arr, const std::vector<std::size_t>& drop,
                       Scope scope = Scope::Kept);

}  // namespace edf::cpd
