#include "edf/matcher.hpp"

#include <algorithm>
#include <numeric>

#include "edf/ops.hpp"
#include "edf/tape.hpp"

namespace edf::matcher {

Tensor SyntheticDataset::targets() const {
  if (label_logits.defined()) return softmax(label_logits);
  return nets::one_hot(labels, classes);
}

void SyntheticDataset::validate() const {
  if (!images.defined() || images.rank() != 4) throw ShapeError("synthetic images must be [S,C,H,W]");
  if (images.dim(0) != labels.size()) throw ShapeError("synthetic image/label count mismatch");
  if (labels.empty()) throw ShapeError("synthetic set is empty");
  if (classes < 2) throw ConfigError("synthetic set needs at least 2 classes");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ShapeError("synthetic label out of range");
  }
  if (label_logits.defined() &&
      label_logits.shape() != Shape{labels.size(), static_cast<std::size_t>(classes)}) {
    throw ShapeError("label logits must be [S, classes], got " + shape_str(label_logits.shape()));
  }
  if (!inner_lr.defined() || inner_lr.numel() != 1) throw ShapeError("inner step size must be a scalar");
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch, std::mt19937_64& rng)
    : batch_(batch), rng_(rng), order_(n) {
  if (batch == 0 || batch > n) throw ConfigError("batch size must be in [1, " + std::to_string(n) + "]");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  pos_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (pos_ + batch_ > order_.size()) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
  pos_ += batch_;
  return out;
}

nets::ParamSet student_unroll(const nets::ModelSpec& spec, const nets::ParamSet& start,
                              const SyntheticDataset& syn, const data::ChannelStats& stats, int steps,
                              std::size_t batch_size, std::mt19937_64& rng) {
  if (steps < 1) throw ConfigError("syn_steps must be >= 1");
  syn.validate();
  if (syn.classes != spec.classes) throw ShapeError("synthetic classes do not match the model");
  const std::size_t n = syn.size();
  if (batch_size == 0) batch_size = n;
  if (batch_size > n) {
    throw ConfigError("batch_syn " + std::to_string(batch_size) + " exceeds the " + std::to_string(n) +
                      " synthetic images");
  }
  const Tensor inputs = data::normalize(syn.images, stats);
  const Tensor targets = syn.targets();
  BatchSampler sampler(n, batch_size, rng);
  nets::ParamSet params = start;
  for (int s = 0; s < steps; ++s) {
    if (batch_size == n) {
      // Full batches keep the natural order; only the reshuffle draws differ.
      sampler.next();
      params = nets::sgd_step_on_tape(spec, params, inputs, targets, syn.inner_lr);
    } else {
      const auto rows = sampler.next();
      params = nets::sgd_step_on_tape(spec, params, take_rows(inputs, rows), take_rows(targets, rows),
                                      syn.inner_lr);
    }
  }
  return params;
}

LossArray loss_array(const nets::ParamSet& student, const nets::ParamSet& start,
                     const nets::ParamSet& target) {
  if (!student.same_structure(start) || !student.same_structure(target)) {
    throw ShapeError("loss_array: parameter sets differ in structure");
  }
  LossArray arr;
  arr.entries.reserve(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    LossEntry e;
    e.index = i;
    e.layer = student[i].layer;
    e.name = student[i].name;
    e.numerator = sum_of_squares(sub(student[i].value, target[i].value));
    {
      NoRecordScope constant;
      e.denominator = sum_of_squares(sub(target[i].value, start[i].value));
    }
    arr.entries.push_back(std::move(e));
  }
  return arr;
}

Tensor masked_ratio(const LossArray& arr, const std::vector<bool>& num_mask,
                    const std::vector<bool>& den_mask) {
  if (num_mask.size() != arr.size() || den_mask.size() != arr.size()) {
    throw ShapeError("masked_ratio: mask length differs from the loss array");
  }
  Tensor num, den;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (num_mask[i]) num = num.defined() ? add(num, arr[i].numerator) : arr[i].numerator;
    if (den_mask[i]) den = den.defined() ? add(den, arr[i].denominator) : arr[i].denominator;
  }
  if (!num.defined() || !den.defined() || den.item() <= 0.0) {
    throw Error("degenerate segment: baseline distance is zero (start equals target)");
  }
  return div(num, den);
}

Tensor total_loss(const LossArray& arr) {
  const std::vector<bool> all(arr.size(), true);
  return masked_ratio(arr, all, all);
}

}  // namespace edf::matcher
