#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "edf/data_io.hpp"
#include "edf/nets.hpp"

namespace edf::matcher {

/// Learnable synthetic set. Images live in pixel space and may leave [0,1]
/// while optimized. Label logits are optional; when present the targets are
/// their softmax, otherwise one-hot rows of `labels`.
struct SyntheticDataset {
  Tensor images;        // [S, C, H, W]
  Tensor label_logits;  // [S, classes] or undefined
  Tensor inner_lr;      // scalar step size of the student
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  Tensor targets() const;
  void validate() const;
};

/// Visits 0..n-1 in shuffled order, `batch` at a time, reshuffling once fewer
/// than `batch` unvisited indices remain.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::mt19937_64& rng);
  std::vector<std::size_t> next();

 private:
  void reshuffle();
  std::size_t batch_;
  std::mt19937_64& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// N differentiable SGD steps from `start` on batches of `syn`. The fields of
/// `syn` should already be on the active tape for the result to depend on
/// them. batch_size 0 means the whole set.
nets::ParamSet student_unroll(const nets::ModelSpec& spec, const nets::ParamSet& start,
                              const SyntheticDataset& syn, const data::ChannelStats& stats, int steps,
                              std::size_t batch_size, std::mt19937_64& rng);

struct LossEntry {
  std::size_t index = 0;
  int layer = 0;
  std::string name;
  Tensor numerator;    // |student_i - target_i|^2
  Tensor denominator;  // |target_i - start_i|^2
};

struct LossArray {
  std::vector<LossEntry> entries;

  std::size_t size() const { return entries.size(); }
  const LossEntry& operator[](std::size_t i) const { return entries.at(i); }
};

LossArray loss_array(const nets::ParamSet& student, const nets::ParamSet& start,
                     const nets::ParamSet& target);

/// sum(n) / sum(d) over all entries.
Tensor total_loss(const LossArray& arr);

/// Sum of numerators where `num_mask` is set over the sum of denominators
/// where `den_mask` is set, accumulated in index order.
Tensor masked_ratio(const LossArray& arr, const std::vector<bool>& num_mask,
                    const std::vector<bool>& den_mask);

}  // namespace edf::matcher
