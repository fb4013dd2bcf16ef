#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pulse::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "absent"
  bool requires_grad = false;
  bool leaf = true;
};

/// Dense row-major f64 array. A Tensor is a cheap handle: copies share storage,
/// so parameters can be handed to ops and to the optimizer without copying.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->leaf; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  // Fresh leaf holding a copy of the values; never tracked.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_result(Shape shape, std::vector<double> values, bool tracked);
};

/// Ordered record of executed operations. Entries are appended as ops run, so
/// the record is already topologically sorted; backward() replays adjoints in
/// reverse and skips entries that the loss does not reach.
class Tape {
 public:
  using Adjoint = std::function<void()>;

  void record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
              Adjoint adjoint);
  void backward(const Tensor& loss);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    Adjoint adjoint;
  };
  std::vector<Entry> entries_;
};

// Tape used by ops on this thread; nullptr means ops run untracked.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on this thread (evaluation passes).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

// Backward pass over the active tape. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

// Lazily allocate (zero-filled) the gradient buffer of a tensor.
std::vector<double>& grad_buffer(TensorImpl& t);

Tensor make_result(Shape shape, std::vector<double> values, bool tracked);

}  // namespace pulse::ad
