#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "edf/tensor.hpp"

namespace edf {

/// Maps the upstream gradient of an op output to one gradient per op input.
/// `needs[i]` is false for inputs whose gradient is not required; the
/// function may return an undefined tensor for those.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

struct OpRecord {
  std::string_view op;
  std::vector<int> inputs;  // node ids, -1 for constants
  int output = -1;
  BackwardFn backward;  // empty for leaves
};

/// Linear record of the ops executed while the tape is active. Node ids are
/// record indices, so inputs always precede their consumers.
///
/// Gradients are built from the same differentiable ops. With
/// `create_graph` they are recorded on this tape and can be differentiated
/// again.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t size() const { return records_.size(); }
  const OpRecord& record(std::size_t i) const { return records_.at(i); }

  /// Returns a copy of `t` registered as a leaf of this tape.
  Tensor watch(const Tensor& t);

  /// Appends an op record and returns the output's node id.
  int append(std::string_view op, std::vector<int> inputs, BackwardFn backward);
  Tensor attach(Tensor t, int node) const;

  bool owns(const Tensor& t) const { return t.defined() && t.tape_id() == id_ && t.node() >= 0; }

  /// d output / d wrt for a scalar output. Tensors in `wrt` that the output
  /// does not depend on get zero gradients.
  std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt,
                           bool create_graph = false);

 private:
  std::uint64_t id_;
  std::deque<OpRecord> records_;
};

Tape* active_tape();

/// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the active tape; ops produce constants.
class NoRecordScope {
 public:
  NoRecordScope();
  ~NoRecordScope();
  NoRecordScope(const NoRecordScope&) = delete;
  NoRecordScope& operator=(const NoRecordScope&) = delete;

 private:
  bool previous_;
};

bool recording_enabled();

/// Convenience wrapper over the active tape.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> wrt,
                         bool create_graph = false);
Tensor grad(const Tensor& output, const Tensor& wrt, bool create_graph = false);

}  // namespace edf
