#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flute {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major f64 array. Parameters carry an optional gradient buffer
/// that Tape::backward fills when requires_grad() is set.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return grad_.has_value(); }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  /// Bitwise equality of shape and values; gradients are ignored.
  bool same_values(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in execution order, so the
/// record is topologically sorted by construction; backward walks it once in
/// reverse.
///
/// A tape is single-owner. Bound parameters must outlive the tape.
class Tape {
 public:
  /// Called during backward with the output adjoint; accumulates into the
  /// adjoints of inputs that need gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a copy of `value` that never receives a gradient.
  Var constant(Tensor value);

  /// Records a copy of a read-only parameter; no gradient is tracked.
  Var param(const Tensor& value);

  /// Binds a mutable parameter. If it requires grad, backward() writes
  /// dLoss/dParam into its gradient buffer.
  Var param(Tensor& value);

  /// Appends an op output. `backward` may be empty for ops whose inputs
  /// never need gradients.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Populates gradient buffers of every bound requires_grad parameter.
  /// Parameters off the loss path receive exact zeros.
  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t input(std::size_t id, std::size_t k) const { return nodes_.at(id).inputs.at(k); }

  /// Adjoint buffer of node `id`, allocated as zeros on first access.
  std::vector<double>& adjoint(std::size_t id);
  const std::vector<double>* adjoint_if_any(std::size_t id) const;

  /// Gradient of the loss w.r.t. a recorded value, valid after backward().
  std::vector<double> grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t id() const { return id_; }
  bool consumed() const { return consumed_; }

  /// Hash of the branch decisions taken by piecewise ops (ReLU masks, pooling
  /// argmax). Two forward passes with equal signatures lie on the same smooth
  /// piece of the function.
  std::uint64_t branch_signature() const { return branch_signature_; }
  void mix_branch(std::uint64_t bits);

  void check_owned(const Var& v, const char* op) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<std::vector<double>> adjoint;
    Tensor* bound = nullptr;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::uint64_t id_;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ULL;
  bool consumed_ = false;
};

}  // namespace flute
