#pragma once

#include <vector>

#include "pts/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast the second
// operand onto the first: shapes are right-aligned and every dimension of `b`
// must equal the matching dimension of `a` or be 1.
namespace pts {

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B,m,k] x [B,k,n]
Tensor transpose(const Tensor& x);                // swaps the last two axes

// x[..., in] * weight[out, in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // throws NumericError on non-positive input
Tensor clamp_min(const Tensor& x, double floor);
Tensor pow(const Tensor& x, double exponent);  // requires x >= 0

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

// Picks x[i, index[i]] from a [B,K] tensor.
Tensor gather(const Tensor& x, const std::vector<std::size_t>& index);

// Over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

// Normalizes over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormStats fresh(std::size_t channels);
};

// Per-channel (last axis) normalization over every leading position. Training
// mode uses batch statistics and updates the running estimates (unbiased
// variance); inference mode is the frozen affine map.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  BatchNormStats& stats, bool training);

}  // namespace pts
