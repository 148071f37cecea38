#include "mixacm/tensor.hpp"

#include <sstream>

#include "mixacm/error.hpp"

namespace mixacm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<Data>()) {
  impl_->shape = std::move(shape);
  impl_->values.assign(shape_numel(impl_->shape), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<Data>()) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("Tensor: " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("Tensor: use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->values.size() : 0; }

std::span<double> Tensor::data() {
  if (!impl_) throw ContractError("Tensor: use of undefined tensor");
  return impl_->values;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("Tensor: use of undefined tensor");
  return impl_->values;
}

double Tensor::value() const {
  if (numel() != 1) throw ContractError("Tensor::value: tensor is not scalar, shape " + shape_str(shape()));
  return impl_->values[0];
}

double& Tensor::at(std::size_t flat_index) {
  if (flat_index >= numel()) throw DimensionError("Tensor::at: index out of range");
  return impl_->values[flat_index];
}

double Tensor::at(std::size_t flat_index) const {
  if (flat_index >= numel()) throw DimensionError("Tensor::at: index out of range");
  return impl_->values[flat_index];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool b) {
  if (!impl_) throw ContractError("Tensor: use of undefined tensor");
  impl_->requires_grad = b;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() {
  if (!impl_) throw ContractError("Tensor: use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("Tensor::grad: no gradient present");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detached() const {
  Tensor t(shape(), std::vector<double>(data().begin(), data().end()), false);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(shape(), std::vector<double>(data().begin(), data().end()), requires_grad());
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
thread_local bool g_no_grad = false;
}  // namespace

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_no_grad ? nullptr : g_active_tape; }

void Tape::record(const void* output_id, std::function<void()> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
  outputs_.insert(output_id);
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("Tape::backward: tape already consumed; reset() first");
  if (loss.numel() != 1)
    throw ContractError("Tape::backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (nodes_.empty() || !produced(loss.id()))
    throw ContractError("Tape::backward: loss is detached from the tape (empty tape)");
  Tensor seed = loss;  // shares the buffer
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  outputs_.clear();
  consumed_ = false;
}

NoGradScope::NoGradScope() : prev_(g_no_grad) { g_no_grad = true; }

NoGradScope::~NoGradScope() { g_no_grad = prev_; }

bool NoGradScope::active() { return g_no_grad; }

}  // namespace mixacm
