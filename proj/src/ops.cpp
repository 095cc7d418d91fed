#include "pts/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pts {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

// Maps every flat index of `out` onto the flat index of a broadcast operand.
class Broadcast {
 public:
  Broadcast(const char* op, const Shape& out, const Shape& in) {
    if (in.size() > out.size()) shape_mismatch(op, out, in);
    const std::size_t offset = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] != out[offset + i] && in[i] != 1) shape_mismatch(op, out, in);
    }
    n_out_ = numel_of(out);
    n_in_ = numel_of(in);
    if (in == out) {
      mode_ = Mode::kSame;
    } else if (std::equal(in.begin(), in.end(), out.begin() + offset)) {
      mode_ = Mode::kSuffix;
    } else {
      mode_ = Mode::kGeneral;
      std::vector<std::size_t> stride(out.size(), 0);
      std::size_t s = 1;
      for (std::size_t i = in.size(); i-- > 0;) {
        stride[offset + i] = in[i] == 1 ? 0 : s;
        s *= in[i];
      }
      map_.resize(n_out_);
      std::vector<std::size_t> idx(out.size(), 0);
      std::size_t pos = 0;
      for (std::size_t flat = 0; flat < n_out_; ++flat) {
        map_[flat] = pos;
        for (std::size_t ax = out.size(); ax-- > 0;) {
          ++idx[ax];
          pos += stride[ax];
          if (idx[ax] < out[ax]) break;
          pos -= stride[ax] * idx[ax];
          idx[ax] = 0;
        }
      }
    }
  }

  std::size_t operator()(std::size_t flat) const {
    switch (mode_) {
      case Mode::kSame: return flat;
      case Mode::kSuffix: return flat % n_in_;
      default: return map_[flat];
    }
  }

  std::size_t size() const { return n_out_; }

 private:
  enum class Mode { kSame, kSuffix, kGeneral };
  Mode mode_ = Mode::kSame;
  std::size_t n_out_ = 0;
  std::size_t n_in_ = 0;
  std::vector<std::size_t> map_;
};

template <typename Fwd, typename DerivA, typename DerivB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DerivA da, DerivB db) {
  auto bc = std::make_shared<Broadcast>(op, a.shape(), b.shape());
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(bc->size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[(*bc)(i)]);
  Tensor result(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, {a, b}, [a, b, bc, da, db](std::span<const double> g) {
      const auto av = a.data();
      const auto bv = b.data();
      if (a.requires_grad()) {
        auto& ga = detail::grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[(*bc)(i)]);
      }
      if (b.requires_grad()) {
        auto& gb = detail::grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = (*bc)(i);
          gb[j] += g[i] * db(av[i], bv[j]);
        }
      }
    });
  }
  return result;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  Tensor result(x.shape(), std::move(out));
  if (detail::should_record({&x})) {
    // deriv(x, y) receives the input and the forward output.
    detail::record(result, {x}, [x, result_impl = result.impl(), deriv](std::span<const double> g) {
      const auto xv = x.data();
      const auto& yv = result_impl->data;
      auto& gx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
  }
  return result;
}

// Views `shape` as [outer, extent, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  AxisSplit(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(shape));
    }
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  }
};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  MultiplyCounter::add(m * k * n);
  Tensor result(Shape{m, n}, std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, {a, b}, [a, b, m, k, n](std::span<const double> g) {
      ConstMap gm(g.data(), m, n);
      if (a.requires_grad()) {
        MutMap(detail::grad_buffer(a).data(), m, k).noalias() +=
            gm * ConstMap(b.data().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MutMap(detail::grad_buffer(b).data(), k, n).noalias() +=
            ConstMap(a.data().data(), m, k).transpose() * gm;
      }
    });
  }
  return result;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    shape_mismatch("bmm", a.shape(), b.shape());
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) * ConstMap(b.data().data() + i * k * n, k, n);
  }
  MultiplyCounter::add(batch * m * k * n);
  Tensor result(Shape{batch, m, n}, std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, {a, b}, [a, b, batch, m, k, n](std::span<const double> g) {
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMap gm(g.data() + i * m * n, m, n);
        if (a.requires_grad()) {
          MutMap(detail::grad_buffer(a).data() + i * m * k, m, k).noalias() +=
              gm * ConstMap(b.data().data() + i * k * n, k, n).transpose();
        }
        if (b.requires_grad()) {
          MutMap(detail::grad_buffer(b).data() + i * k * n, k, n).noalias() +=
              ConstMap(a.data().data() + i * m * k, m, k).transpose() * gm;
        }
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("transpose: rank < 2 for shape " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t r = shape[shape.size() - 2], c = shape[shape.size() - 1];
  const std::size_t batch = x.numel() / (r * c);
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.data() + i * r * c, c, r) = ConstMap(x.data().data() + i * r * c, r, c).transpose();
  }
  Tensor result(std::move(shape), std::move(out));
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x, batch, r, c](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < batch; ++i) {
        MutMap(gx.data() + i * r * c, r, c) += ConstMap(g.data() + i * r * c, c, r).transpose();
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2 || x.ndim() < 1 || x.shape().back() != weight.dim(1)) {
    shape_mismatch("linear", x.shape(), weight.shape());
  }
  const std::size_t in = weight.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != out_dim)) {
    shape_mismatch("linear(bias)", weight.shape(), bias.shape());
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<double> out(rows * out_dim);
  MutMap om(out.data(), rows, out_dim);
  om.noalias() = ConstMap(x.data().data(), rows, in) * ConstMap(weight.data().data(), out_dim, in).transpose();
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);
  }
  MultiplyCounter::add(rows * in * out_dim);
  Tensor result(std::move(shape), std::move(out));
  if (detail::should_record({&x, &weight, &bias})) {
    detail::record(result, {x, weight, bias}, [x, weight, bias, rows, in, out_dim](std::span<const double> g) {
      ConstMap gm(g.data(), rows, out_dim);
      if (x.requires_grad()) {
        MutMap(detail::grad_buffer(x).data(), rows, in).noalias() +=
            gm * ConstMap(weight.data().data(), out_dim, in);
      }
      if (weight.requires_grad()) {
        MutMap(detail::grad_buffer(weight).data(), out_dim, in).noalias() +=
            gm.transpose() * ConstMap(x.data().data(), rows, in);
      }
      if (bias.defined() && bias.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXd>(detail::grad_buffer(bias).data(), out_dim) += gm.colwise().sum();
      }
    });
  }
  return result;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  MultiplyCounter::add(a.numel());
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0 || !std::isfinite(v)) throw NumericError("div: zero or non-finite denominator");
  }
  MultiplyCounter::add(a.numel());
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
  require_finite("exp", out.data());
  return out;
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw NumericError("log: input must be strictly positive and finite, got " + std::to_string(v));
    }
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(x, [floor](double v) { return v < floor ? floor : v; },
               [floor](double v, double) { return v < floor ? 0.0 : 1.0; });
}

Tensor pow(const Tensor& x, double exponent) {
  for (double v : x.data()) {
    if (v < 0.0) throw NumericError("pow: negative base");
  }
  return unary(x, [exponent](double v) { return std::pow(v, exponent); },
               [exponent](double v, double) {
                 if (v == 0.0) return exponent > 1.0 ? 0.0 : (exponent == 1.0 ? 1.0 : 0.0);
                 return exponent * std::pow(v, exponent - 1.0);
               });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit s(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim || shape.size() == 1) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xv[(o * s.extent + e) * s.inner + i];
  Tensor result(std::move(shape), std::move(out));
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x, s](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < s.extent; ++e)
          for (std::size_t i = 0; i < s.inner; ++i)
            gx[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
    });
  }
  return result;
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor sum_all(const Tensor& x) { return sum(reshape(x, Shape{x.numel()}), 0); }

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(shape));
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) shape_mismatch("concat", shape, probe);
    probe[axis] = shape[axis];
    if (probe != shape) shape_mismatch("concat", shape, p.shape());
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisSplit whole(shape, axis);
  std::vector<double> out(numel_of(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const AxisSplit s(p.shape(), axis);
    const auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * s.extent * s.inner, s.extent * s.inner,
                  out.data() + (o * whole.extent + offset) * whole.inner);
    }
    offsets.push_back(offset);
    offset += s.extent;
  }
  Tensor result(std::move(shape), std::move(out));
  bool any = false;
  for (const auto& p : parts) any = any || detail::should_record({&p});
  if (any) {
    detail::record(result, parts, [parts, offsets, whole, axis](std::span<const double> g) {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = parts[k];
        if (!p.requires_grad()) continue;
        const AxisSplit s(p.shape(), axis);
        auto& gp = detail::grad_buffer(p);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = g.data() + (o * whole.extent + offsets[k]) * whole.inner;
          double* dst = gp.data() + o * s.extent * s.inner;
          for (std::size_t i = 0; i < s.extent * s.inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s(x.shape(), axis);
  if (begin >= end || end > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t len = end - begin;
  std::vector<double> out(s.outer * len * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, len * s.inner,
                out.data() + o * len * s.inner);
  }
  Tensor result(std::move(shape), std::move(out));
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x, s, begin, len](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = g.data() + o * len * s.inner;
        double* dst = gx.data() + (o * s.extent + begin) * s.inner;
        for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  Tensor result(std::move(shape), x.values());
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  auto bc = std::make_shared<Broadcast>("broadcast_to", shape, x.shape());
  std::vector<double> out(bc->size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*bc)(i)];
  Tensor result(shape, std::move(out));
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x, bc](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*bc)(i)] += g[i];
    });
  }
  return result;
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& index) {
  if (x.ndim() != 2 || x.dim(0) != index.size()) {
    throw ShapeError("gather: expected [" + std::to_string(index.size()) + "xK], got " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= cols) throw ShapeError("gather: index out of range");
    out[r] = x.data()[r * cols + index[r]];
  }
  Tensor result(Shape{rows}, std::move(out));
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x, index, cols](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t r = 0; r < g.size(); ++r) gx[r * cols + index[r]] += g[r];
    });
  }
  return result;
}

Tensor softmax(const Tensor& x) {
  require_finite("softmax", x.data());
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  Tensor result(x.shape(), std::move(out));
  if (detail::should_record({&x})) {
    detail::record(result, {x}, [x, y = result.impl(), rows, cols](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* p = y->data.data() + r * cols;
        const double* gr = g.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * p[c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += p[c] * (gr[c] - dot);
      }
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
  const std::size_t d = x.shape().back();
  if (d < 1 || gain.numel() != d || shift.numel() != d) {
    shape_mismatch("layer_norm", x.shape(), gain.shape());
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> xhat(x.numel()), inv_std(rows), out(x.numel());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto sv = shift.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mu) * inv_std[r];
      xhat[r * d + c] = h;
      out[r * d + c] = h * gv[c] + sv[c];
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (detail::should_record({&x, &gain, &shift})) {
    detail::record(result, {x, gain, shift},
                   [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
                       std::span<const double> g) {
                     const auto gv = gain.data();
                     if (gain.requires_grad() || shift.requires_grad()) {
                       auto& gg = detail::grad_buffer(gain);
                       auto& gs = detail::grad_buffer(shift);
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < d; ++c) {
                           gg[c] += g[r * d + c] * xhat[r * d + c];
                           gs[c] += g[r * d + c];
                         }
                     }
                     if (!x.requires_grad()) return;
                     auto& gx = detail::grad_buffer(x);
                     const double inv_d = 1.0 / static_cast<double>(d);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t c = 0; c < d; ++c) {
                         const double dh = g[r * d + c] * gv[c];
                         m1 += dh;
                         m2 += dh * xhat[r * d + c];
                       }
                       m1 *= inv_d;
                       m2 *= inv_d;
                       for (std::size_t c = 0; c < d; ++c) {
                         const double dh = g[r * d + c] * gv[c];
                         gx[r * d + c] += inv_std[r] * (dh - m1 - xhat[r * d + c] * m2);
                       }
                     }
                   });
  }
  return result;
}

BatchNormStats BatchNormStats::fresh(std::size_t channels) {
  return BatchNormStats{Tensor::zeros({channels}), Tensor::ones({channels})};
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, BatchNormStats& stats,
                  bool training) {
  const std::size_t c = x.shape().back();
  if (gain.numel() != c || shift.numel() != c || stats.running_mean.numel() != c) {
    shape_mismatch("batch_norm", x.shape(), gain.shape());
  }
  const std::size_t rows = x.numel() / c;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto sv = shift.data();
  std::vector<double> mu(c, 0.0), inv_std(c), xhat(x.numel()), out(x.numel());
  if (training) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    for (auto& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double dlt = xv[r * c + j] - mu[j];
        var[j] += dlt * dlt;
      }
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    const double unbias = rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    for (std::size_t j = 0; j < c; ++j) {
      var[j] /= static_cast<double>(rows);
      inv_std[j] = 1.0 / std::sqrt(var[j] + stats.eps);
      rm[j] = (1.0 - stats.momentum) * rm[j] + stats.momentum * mu[j];
      rv[j] = (1.0 - stats.momentum) * rv[j] + stats.momentum * var[j] * unbias;
    }
  } else {
    const auto rm = stats.running_mean.data();
    const auto rv = stats.running_var.data();
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = rm[j];
      inv_std[j] = 1.0 / std::sqrt(rv[j] + stats.eps);
    }
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mu[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = h * gv[j] + sv[j];
    }
  Tensor result(x.shape(), std::move(out));
  if (detail::should_record({&x, &gain, &shift})) {
    detail::record(result, {x, gain, shift},
                   [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c,
                    training](std::span<const double> g) {
                     const auto gv = gain.data();
                     std::vector<double> sum_g(c, 0.0), sum_gh(c, 0.0);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < c; ++j) {
                         sum_g[j] += g[r * c + j];
                         sum_gh[j] += g[r * c + j] * xhat[r * c + j];
                       }
                     if (gain.requires_grad() || shift.requires_grad()) {
                       auto& gg = detail::grad_buffer(gain);
                       auto& gs = detail::grad_buffer(shift);
                       for (std::size_t j = 0; j < c; ++j) {
                         gg[j] += sum_gh[j];
                         gs[j] += sum_g[j];
                       }
                     }
                     if (!x.requires_grad()) return;
                     auto& gx = detail::grad_buffer(x);
                     const double inv_n = 1.0 / static_cast<double>(rows);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t j = 0; j < c; ++j) {
                         const double scale_j = gv[j] * inv_std[j];
                         double v = g[r * c + j];
                         if (training) {
                           v -= sum_g[j] * inv_n + xhat[r * c + j] * sum_gh[j] * inv_n;
                         }
                         gx[r * c + j] += scale_j * v;
                       }
                   });
  }
  return result;
}

}  // namespace pts
