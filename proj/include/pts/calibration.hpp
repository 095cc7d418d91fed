#pragma once

#include <random>

#include "pts/ops.hpp"
#include "pts/plif.hpp"

// Prompt concatenation, spiking sparse linear attention, context pooling, the
// homeostatic bias generator and bias injection.
namespace pts {

// Column normalization applied to the keys before the context product.
enum class ColumnNorm {
  kSum,     // K[:, d] / (sum_n K[n, d] + eps)
  kAbsSum,  // K[:, d] / (sum_n |K[n, d]| + eps)
};

struct SslaParams {
  Tensor w_q;  // [D, D], bias-free
  Tensor w_k;
  Tensor w_v;
  double eps_norm = 1e-6;
  ColumnNorm column_norm = ColumnNorm::kSum;

  static SslaParams init(std::size_t d, std::mt19937_64& rng);
};

struct BiasGenerator {
  Tensor w_down;  // [D_h, D]
  Tensor beta1;   // [D_h]
  Tensor w_up;    // [D, D_h], zero at init
  Tensor beta2;   // [D], zero at init
  double kappa = 0.5;

  static BiasGenerator init(std::size_t d, std::size_t hidden, double kappa, std::mt19937_64& rng);
};

// prompts[L_p, D] shared across the batch, x_enc[B, T, D] -> [B, L_p + T, D].
Tensor concat_prompts(const Tensor& prompts, const Tensor& x_enc);

Tensor column_normalize(const Tensor& keys, double eps, ColumnNorm mode);

struct SslaActivity {
  Tensor spikes;  // binary filter output S
};

// S = PLIF1(x), Q/K/V = S W^T, out = Q (sigma(K)^T V). Cost is linear in the
// sequence length: the [D, D] context is formed before touching Q.
Tensor ssla_forward(const Tensor& x_joint, const SslaParams& params, const PlifConfig& filter,
                    SslaActivity* activity = nullptr);

// Mean over the first `prompt_length` positions of [B, N, D].
Tensor pool_context(const Tensor& ssla_out, std::size_t prompt_length);

// kappa * tanh(W_up relu(W_down c + beta1) + beta2)
Tensor generate_bias(const Tensor& context, const BiasGenerator& gen);

// x_feat[B, T, D] + v_bias[B, D] broadcast over time.
Tensor calibrate(const Tensor& x_feat, const Tensor& v_bias);

}  // namespace pts
