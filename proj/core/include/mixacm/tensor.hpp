#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace mixacm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats. Value-semantic handle over a
/// shared buffer; tensors participating in a tape are never mutated in place,
/// except for gradient accumulation during backward.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double value() const;  // scalar tensors only
  double& at(std::size_t flat_index);
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  void set_requires_grad(bool b);

  bool has_grad() const;
  /// Gradient buffer, zero-initialized on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy that does not participate in any tape.
  Tensor detached() const;
  Tensor clone() const;

  /// Identity of the underlying buffer, used by the tape bookkeeping.
  const void* id() const { return impl_.get(); }

 private:
  struct Data {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> impl_;
};

/// Reverse-mode tape. Constructing a Tape makes it the active tape for the
/// current thread (stack discipline); ops record backward closures onto the
/// active tape when any input requires a gradient. backward() visits nodes in
/// exact reverse construction order and may run once per tape until reset().
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(const void* output_id, std::function<void()> backward_fn);
  bool produced(const void* id) const { return outputs_.contains(id); }
  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must be scalar and
  /// produced by this tape.
  void backward(const Tensor& loss);
  void reset();

 private:
  std::vector<std::function<void()>> nodes_;
  std::unordered_set<const void*> outputs_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

/// Suppresses recording within a scope (frozen-model forwards, evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  static bool active();

 private:
  bool prev_;
};

}  // namespace mixacm
