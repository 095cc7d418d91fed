#include "pts/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace pts {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local Tape* active_tape = nullptr;
thread_local MultiplyCounter* active_counter = nullptr;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values,
                                      bool requires_grad) {
  if (numel_of(shape) != values.size()) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  impl->node_id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(make_impl(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::span<double> Tensor::mutable_grad() { return detail::grad_buffer(*this); }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != ndim()) {
    throw ShapeError("index rank mismatch for shape " + shape_str(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

Tensor Tensor::clone() const {
  Tensor copy(impl_->shape, impl_->data, impl_->requires_grad);
  copy.impl_->grad = impl_->grad;
  return copy;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }

Tape::Scope::~Scope() { active_tape = previous_; }

Tape* Tape::active() { return active_tape; }

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
  Record rec;
  rec.output = output.impl();
  rec.inputs.reserve(inputs.size());
  for (auto& t : inputs) rec.inputs.push_back(t.impl());
  rec.backward = std::move(fn);
  records_.push_back(std::move(rec));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (records_.empty()) throw std::logic_error("backward() on an empty tape");
  if (!std::isfinite(loss.item())) throw NumericError("backward() on a non-finite loss");

  auto& seed = detail::grad_buffer(loss);
  seed[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const auto& out = it->output;
    if (out->grad.empty()) continue;  // not reachable from the loss
    it->backward(out->grad);
  }
  records_.clear();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw std::logic_error("backward() without an active tape");
  tape->backward(loss);
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
  output.impl()->requires_grad = true;
  active_tape->record(output, std::move(inputs), std::move(fn));
}

std::vector<double>& grad_buffer(const Tensor& t) {
  auto& impl = *t.impl();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

}  // namespace detail

MultiplyCounter::MultiplyCounter() : previous_(active_counter) { active_counter = this; }

MultiplyCounter::~MultiplyCounter() { active_counter = previous_; }

void MultiplyCounter::add(std::uint64_t n) {
  if (active_counter != nullptr) active_counter->count_ += n;
}

}  // namespace pts
