#include "pts/calibration.hpp"

#include <string>

#include "pts/init.hpp"

namespace pts {

SslaParams SslaParams::init(std::size_t d, std::mt19937_64& rng) {
  SslaParams p;
  p.w_q = init::kaiming_uniform(d, d, rng);
  p.w_k = init::kaiming_uniform(d, d, rng);
  p.w_v = init::kaiming_uniform(d, d, rng);
  return p;
}

BiasGenerator BiasGenerator::init(std::size_t d, std::size_t hidden, double kappa,
                                  std::mt19937_64& rng) {
  if (hidden == 0 || hidden >= d) {
    throw std::invalid_argument("bias generator bottleneck must satisfy 0 < D_h < D");
  }
  BiasGenerator g;
  g.w_down = init::kaiming_uniform(hidden, d, rng);
  g.beta1 = Tensor::zeros({hidden}, true);
  g.w_up = Tensor::zeros({d, hidden}, true);
  g.beta2 = Tensor::zeros({d}, true);
  g.kappa = kappa;
  return g;
}

Tensor concat_prompts(const Tensor& prompts, const Tensor& x_enc) {
  if (prompts.ndim() != 2 || x_enc.ndim() != 3 || prompts.dim(1) != x_enc.dim(2)) {
    throw ShapeError("concat_prompts: prompts " + shape_str(prompts.shape()) + " vs features " +
                     shape_str(x_enc.shape()));
  }
  const Tensor shared = broadcast_to(prompts, {x_enc.dim(0), prompts.dim(0), prompts.dim(1)});
  return concat({shared, x_enc}, 1);
}

Tensor column_normalize(const Tensor& keys, double eps, ColumnNorm mode) {
  const Tensor mass = mode == ColumnNorm::kSum ? keys : abs(keys);
  return div(keys, add_scalar(sum(mass, 1, true), eps));
}

Tensor ssla_forward(const Tensor& x_joint, const SslaParams& params, const PlifConfig& filter,
                    SslaActivity* activity) {
  if (x_joint.ndim() != 3 || x_joint.dim(2) != params.w_q.dim(1)) {
    throw ShapeError("ssla: input " + shape_str(x_joint.shape()) + " vs projection " +
                     shape_str(params.w_q.shape()));
  }
  const Tensor s = plif_single_step(x_joint, filter);
  if (activity != nullptr) activity->spikes = s;
  const Tensor q = linear(s, params.w_q);
  const Tensor k = linear(s, params.w_k);
  const Tensor v = linear(s, params.w_v);
  const Tensor context = bmm(transpose(column_normalize(k, params.eps_norm, params.column_norm)), v);
  return bmm(q, context);
}

Tensor pool_context(const Tensor& ssla_out, std::size_t prompt_length) {
  if (ssla_out.ndim() != 3 || prompt_length == 0 || ssla_out.dim(1) <= prompt_length) {
    throw ShapeError("pool_context: need 0 < L_p < N, got L_p=" + std::to_string(prompt_length) +
                     " for " + shape_str(ssla_out.shape()));
  }
  return mean(slice(ssla_out, 1, 0, prompt_length), 1);
}

Tensor generate_bias(const Tensor& context, const BiasGenerator& gen) {
  const Tensor hidden = relu(linear(context, gen.w_down, gen.beta1));
  return scale(tanh(linear(hidden, gen.w_up, gen.beta2)), gen.kappa);
}

Tensor calibrate(const Tensor& x_feat, const Tensor& v_bias) {
  if (x_feat.ndim() != 3 || v_bias.ndim() != 2 || v_bias.dim(0) != x_feat.dim(0) ||
      v_bias.dim(1) != x_feat.dim(2)) {
    throw ShapeError("calibrate: features " + shape_str(x_feat.shape()) + " vs bias " +
                     shape_str(v_bias.shape()));
  }
  return add(x_feat, reshape(v_bias, {v_bias.dim(0), 1, v_bias.dim(1)}));
}

}  // namespace pts
