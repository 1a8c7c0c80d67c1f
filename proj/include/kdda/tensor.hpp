// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

// Dense double-precision tensors with define-by-run reverse-mode
// differentiation. Every operation that has at least one operand with
// requires_grad() records itself; backward() walks the recorded graph once in
// reverse topological order and then releases it.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdda/errors.hpp"

namespace kdda {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
struct NodeAccess;
}

// Backward rule of a custom operation: receives d(out) and one gradient span
// per input (empty when that input needs no gradient) and must accumulate
// into the latter with +=.
using BackwardFn =
    std::function<void(std::span<const double> out_grad,
                       std::span<const std::span<double>> in_grads)>;

class DiffTensor {
 public:
  DiffTensor() = default;
  DiffTensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static DiffTensor zeros(Shape shape, bool requires_grad = false);
  static DiffTensor filled(Shape shape, double value, bool requires_grad = false);
  static DiffTensor scalar(double value, bool requires_grad = false);
  static DiffTensor vector(std::vector<double> values, bool requires_grad = false);
  static DiffTensor matrix(std::size_t rows, std::size_t cols,
                           std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;  // 2-D only
  std::size_t cols() const;  // 2-D only

  std::span<const double> data() const;
  // Leaves only: optimizers write parameters in place.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Same value, no history, requires_grad() == false.
  DiffTensor detach() const;
  // Independent leaf with copied value and the same requires_grad flag.
  DiffTensor clone() const;

  // Name of the operation that produced this tensor, "leaf" otherwise.
  std::string_view op_name() const;
  std::uint64_t id() const;

 private:
  explicit DiffTensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend struct detail::NodeAccess;
  friend void backward(const DiffTensor& output);
  friend DiffTensor make_op(std::string_view name, Shape shape,
                            std::vector<double> value,
                            std::vector<DiffTensor> inputs, BackwardFn backward_fn);
};

// Builds an operation output. The op is recorded when gradient recording is
// enabled and any input requires a gradient.
DiffTensor make_op(std::string_view name, Shape shape, std::vector<double> value,
                   std::vector<DiffTensor> inputs, BackwardFn backward_fn);

// Recorded graph reachable from one output, in topological order: every
// entry's inputs are produced before it.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::uint64_t output;
    std::vector<std::uint64_t> inputs;
  };

  static Tape trace(const DiffTensor& output);

  std::span<const Entry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<Entry> entries_;
};

// Populates grad() of every requires_grad leaf reachable from a scalar
// output, then releases the graph. Leaf gradients accumulate across calls
// until zero_grad().
void backward(const DiffTensor& output);

// While alive, operations on this thread do not record.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// While alive, every operation output on this thread is scanned for NaN/Inf
// and a NumericError naming the operation is thrown.
class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool enabled = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

bool checked_mode();

enum class SoftmaxConvention {
  kStandardDivide,  // exp(z / tau)
  kMultiply,        // exp(z * tau)
};

// Primitive operations. No broadcasting: elementwise operands must have
// identical shapes; use expand_rows to tile a bias.
DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor sub(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);
DiffTensor scale(const DiffTensor& a, double factor);
DiffTensor matmul(const DiffTensor& a, const DiffTensor& b);
DiffTensor relu(const DiffTensor& a);
DiffTensor exp(const DiffTensor& a);
DiffTensor log(const DiffTensor& a);
DiffTensor reduce_sum(const DiffTensor& a);
DiffTensor reduce_mean(const DiffTensor& a);
// Concatenates along the leading axis; trailing dims must agree.
DiffTensor concat(std::span<const DiffTensor> parts);
DiffTensor concat(std::initializer_list<DiffTensor> parts);
DiffTensor reshape(const DiffTensor& a, Shape shape);
DiffTensor squared_l2_norm(const DiffTensor& a);

// Identity forward; backward multiplies the upstream gradient by -lambda.
DiffTensor grad_reverse(const DiffTensor& a, double lambda);

// [n] or [1 x n] tiled into [rows x n].
DiffTensor expand_rows(const DiffTensor& a, std::size_t rows);

// Row-wise over the last axis of a 1-D or 2-D tensor of logits.
DiffTensor log_softmax(const DiffTensor& logits, double tau,
                       SoftmaxConvention convention);
DiffTensor softmax_temperature(const DiffTensor& logits, double tau,
                               SoftmaxConvention convention);

// out[i, j] = ||a_i - b_j||^2 for a[m x d], b[n x d].
DiffTensor pairwise_sq_dist(const DiffTensor& a, const DiffTensor& b);

inline DiffTensor operator+(const DiffTensor& a, const DiffTensor& b) { return add(a, b); }
inline DiffTensor operator-(const DiffTensor& a, const DiffTensor& b) { return sub(a, b); }
inline DiffTensor operator*(double s, const DiffTensor& a) { return scale(a, s); }

}  // namespace kdda
