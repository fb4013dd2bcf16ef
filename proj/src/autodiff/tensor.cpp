#include "pulse/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "pulse/errors.hpp"

namespace pulse::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  if (!impl_->leaf) throw ContractError("requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = on;
}

std::span<double> Tensor::mutable_grad() { return grad_buffer(*impl_); }

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

Tensor make_result(Shape shape, std::vector<double> values, bool tracked) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = tracked;
  impl->leaf = !tracked;
  return Tensor(std::move(impl));
}

void Tape::record(std::vector<std::shared_ptr<TensorImpl>> inputs, std::shared_ptr<TensorImpl> output,
                  Adjoint adjoint) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(adjoint)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  TensorImpl* root = loss.impl();
  if (root->leaf) {
    if (root->requires_grad) grad_buffer(*root)[0] += 1.0;
    return;
  }
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.output.get() == root; });
  if (it == entries_.end()) throw ContractError("loss was not produced on this tape");

  // Intermediate adjoints belong to this pass only; leaf gradients accumulate.
  for (auto& e : entries_) e.output->grad.clear();
  grad_buffer(*root)[0] = 1.0;
  const auto stop = static_cast<std::size_t>(it - entries_.begin());
  for (std::size_t i = stop + 1; i-- > 0;) {
    Entry& e = entries_[i];
    if (e.output->grad.empty()) continue;
    e.adjoint();
  }
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (!tape) {
    if (loss.defined() && loss.numel() == 1 && loss.is_leaf()) {
      if (loss.requires_grad()) grad_buffer(*loss.impl())[0] += 1.0;
      return;
    }
    throw ContractError("backward called without an active tape");
  }
  tape->backward(loss);
}

}  // namespace pulse::ad
