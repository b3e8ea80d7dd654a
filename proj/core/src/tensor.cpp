#include "flute/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "flute/error.hpp"

namespace flute {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.reset();
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw TapeError("tensor has no gradient buffer");
  return *grad_;
}

std::vector<double>& Tensor::mutable_grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::same_values(const Tensor& other) const {
  return shape_ == other.shape_ && data_.size() == other.data_.size() &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

const Tensor& Var::value() const {
  if (!tape_) throw TapeError("use of an unbound Var");
  return tape_->value(id_);
}

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape() : id_(next_tape_id.fetch_add(1)) {}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  nodes_.push_back(Node{std::move(value), {}, {}, std::nullopt, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(const Tensor& value) {
  Tensor copy(value.shape(), value.values());
  return constant(std::move(copy));
}

Var Tape::param(Tensor& value) {
  Tensor copy(value.shape(), value.values());
  nodes_.push_back(Node{std::move(copy), {}, {}, std::nullopt, &value, value.requires_grad()});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (consumed_) throw TapeError("cannot record on a tape after backward()");
  bool needs = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw TapeError("op input is not on this tape");
    needs = needs || nodes_[in].needs_grad;
  }
  if (!backward) needs = false;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), std::nullopt, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::adjoint(std::size_t id) {
  auto& node = nodes_.at(id);
  if (!node.adjoint) node.adjoint.emplace(node.value.numel(), 0.0);
  return *node.adjoint;
}

const std::vector<double>* Tape::adjoint_if_any(std::size_t id) const {
  const auto& node = nodes_.at(id);
  return node.adjoint ? &*node.adjoint : nullptr;
}

void Tape::check_owned(const Var& v, const char* op) const {
  if (v.tape() != this) throw TapeError(std::string(op) + ": tensor belongs to a different tape");
}

void Tape::mix_branch(std::uint64_t bits) {
  branch_signature_ ^= bits;
  branch_signature_ *= 0x100000001b3ULL;
}

void Tape::backward(const Var& loss) {
  check_owned(loss, "backward");
  if (consumed_) throw TapeError("backward() already ran on this tape");
  if (loss.numel() != 1) {
    throw TapeError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;

  for (auto& node : nodes_) {
    if (node.bound && node.bound->requires_grad()) node.bound->zero_grad();
  }

  adjoint(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.needs_grad || !node.adjoint || !node.backward) continue;
    node.backward(*this, i);
  }

  for (auto& node : nodes_) {
    if (!node.bound || !node.bound->requires_grad() || !node.adjoint) continue;
    auto& g = node.bound->mutable_grad();
    const auto& a = *node.adjoint;
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += a[k];
  }
}

std::vector<double> Tape::grad(const Var& v) const {
  check_owned(v, "grad");
  const auto* a = adjoint_if_any(v.id());
  if (a) return *a;
  return std::vector<double>(v.numel(), 0.0);
}

}  // namespace flute
