#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "edf/error.hpp"

namespace edf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Arithmetic precision of op results. Storage is always double; in F32 mode
/// every op result is rounded to the nearest float, which reproduces f32
/// arithmetic at op granularity.
enum class Precision { F32, F64 };

Precision precision();

/// Sets the precision for the current thread until destroyed.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

class Tape;

/// Immutable n-dimensional array. Copies share storage. A tensor may be
/// attached to a tape through a node id; attachment is only meaningful while
/// that tape is alive and active on the current thread.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }

  std::span<const double> values() const;
  const std::vector<double>& vec() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  /// True when this tensor is a node of the tape active on this thread.
  bool attached() const;
  int node() const { return node_; }
  std::uint64_t tape_id() const { return tape_id_; }

  /// Same values, no tape attachment.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::uint64_t tape_id_ = 0;
  int node_ = -1;
};

bool bit_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace edf
