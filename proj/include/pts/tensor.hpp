#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pts {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::uint64_t node_id = 0;
};

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage. Use clone() for a
// deep copy and detach() for a copy that is cut off from the tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Mutating data of a tensor that is on a live tape invalidates its records.
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  Tensor clone() const;
  Tensor detach() const;

  std::uint64_t node_id() const { return impl_->node_id; }
  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Receives d(loss)/d(output) and accumulates into the inputs' grads.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

// Ordered record of differentiable operations for one forward/backward step.
//
// Policy: a tape is single-use. backward() runs the records in reverse order
// exactly once and then clears the tape. Ops only record while a tape is
// active on the calling thread (see Tape::Scope); without one, forward passes
// build no graph.
class Tape {
 public:
  struct Record {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn);
  void backward(const Tensor& loss);
  void clear() { records_.clear(); }

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

 private:
  std::vector<Record> records_;
};

// Runs backward on the thread's active tape.
void backward(const Tensor& loss);

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs);
void record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn);
// Gradient buffer of `t`, zero-filled on first use.
std::vector<double>& grad_buffer(const Tensor& t);

}  // namespace detail

// Counts scalar multiplies performed by the instrumented kernels (matmul,
// linear, elementwise mul/div) on the current thread while a scope is alive.
class MultiplyCounter {
 public:
  MultiplyCounter();
  ~MultiplyCounter();
  MultiplyCounter(const MultiplyCounter&) = delete;
  MultiplyCounter& operator=(const MultiplyCounter&) = delete;

  std::uint64_t count() const { return count_; }
  static void add(std::uint64_t n);

 private:
  std::uint64_t count_ = 0;
  MultiplyCounter* previous_;
};

}  // namespace pts
