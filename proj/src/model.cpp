#include "pts/model.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "pts/init.hpp"

namespace pts {

void ModelConfig::validate() const {
  encoder.validate();
  plif.validate();
  if (prompt_length < 1) throw std::invalid_argument("prompt_length must be >= 1");
  if (!(prompt_init_std >= 0.0)) throw std::invalid_argument("prompt_init_std must be >= 0");
  if (!(eps_norm > 0.0)) throw std::invalid_argument("eps_norm must be > 0");
  if (bias_hidden == 0 || bias_hidden >= model_dim()) {
    throw std::invalid_argument("bias_hidden must satisfy 0 < D_h < D");
  }
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be > 0");
  if (backend_hidden == 0) throw std::invalid_argument("backend_hidden must be > 0");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
}

PtsSnn::PtsSnn(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config_.model_dim();
  encoder = TemporalShiftEncoder::init(config_.encoder, config_.plif, rng);
  prompts = init::normal({config_.prompt_length, d}, config_.prompt_init_std, rng);
  ssla = SslaParams::init(d, rng);
  ssla.eps_norm = config_.eps_norm;
  ssla.column_norm = config_.column_norm;
  bias = BiasGenerator::init(d, config_.bias_hidden, config_.kappa, rng);
  backend = SpikingBackend::init(d, config_.backend_hidden, config_.num_classes, config_.plif, rng);
}

Tensor PtsSnn::forward(const Tensor& x, const ForwardOptions& options, ForwardTrace* trace) {
  auto stage = [&](std::string_view name, Tensor t) { return options.tap ? options.tap(name, t) : t; };
  EncoderActivity* enc_activity = trace ? &trace->encoder : nullptr;
  const Tensor x_enc = stage("encoder", encoder_forward(x, encoder, config_.encoder, config_.plif,
                                                        options.training,
                                                        options.bypass_soft_saturation, enc_activity));
  const Tensor joint = concat_prompts(prompts, x_enc);
  const Tensor out =
      stage("ssla", ssla_forward(joint, ssla, config_.plif, trace ? &trace->ssla : nullptr));
  const std::size_t lp = config_.prompt_length;
  const Tensor context = pool_context(out, lp);
  Tensor v_bias = stage("bias_generator", generate_bias(context, bias));
  if (options.zero_bias) v_bias = Tensor::zeros(v_bias.shape());
  const Tensor x_feat = slice(out, 1, lp, out.dim(1));
  const Tensor x_hat = calibrate(x_feat, v_bias);
  Tensor logits = stage("backend", backend_forward(x_hat, backend, config_.plif, options.training,
                                                   trace ? &trace->backend : nullptr));
  if (trace != nullptr) {
    trace->joint = joint;
    trace->ssla_out = out;
    trace->context = context;
    trace->v_bias = v_bias;
    trace->x_hat = x_hat;
    trace->logits = logits;
  }
  return logits;
}

std::vector<NamedTensor> PtsSnn::parameters() {
  std::vector<NamedTensor> p;
  p.push_back({"encoder.ln.gain", encoder.ln_gain});
  p.push_back({"encoder.ln.shift", encoder.ln_shift});
  for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
    auto& b = encoder.blocks[i];
    const std::string prefix = "encoder.block" + std::to_string(i + 1) + ".";
    p.push_back({prefix + "weight", b.weight});
    p.push_back({prefix + "bias", b.bias});
    p.push_back({prefix + "bn.gain", b.bn_gain});
    p.push_back({prefix + "bn.shift", b.bn_shift});
    p.push_back({prefix + "tau_raw", b.tau_raw});
    if (b.residual.defined()) p.push_back({prefix + "residual", b.residual});
  }
  p.push_back({"prompts", prompts});
  p.push_back({"ssla.w_q", ssla.w_q});
  p.push_back({"ssla.w_k", ssla.w_k});
  p.push_back({"ssla.w_v", ssla.w_v});
  p.push_back({"bias.w_down", bias.w_down});
  p.push_back({"bias.beta1", bias.beta1});
  p.push_back({"bias.w_up", bias.w_up});
  p.push_back({"bias.beta2", bias.beta2});
  p.push_back({"backend.hidden.weight", backend.w_hidden});
  p.push_back({"backend.hidden.bias", backend.b_hidden});
  p.push_back({"backend.bn.gain", backend.bn_gain});
  p.push_back({"backend.bn.shift", backend.bn_shift});
  p.push_back({"backend.tau_raw", backend.tau_raw});
  p.push_back({"backend.readout.weight", backend.w_out});
  p.push_back({"backend.readout.bias", backend.b_out});
  return p;
}

std::vector<NamedTensor> PtsSnn::buffers() {
  std::vector<NamedTensor> b;
  for (std::size_t i = 0; i < encoder.blocks.size(); ++i) {
    const std::string prefix = "encoder.block" + std::to_string(i + 1) + ".bn.";
    b.push_back({prefix + "running_mean", encoder.blocks[i].bn.running_mean});
    b.push_back({prefix + "running_var", encoder.blocks[i].bn.running_var});
  }
  b.push_back({"backend.bn.running_mean", backend.bn.running_mean});
  b.push_back({"backend.bn.running_var", backend.bn.running_var});
  return b;
}

std::vector<NamedTensor> PtsSnn::state() {
  auto all = parameters();
  auto extra = buffers();
  all.insert(all.end(), extra.begin(), extra.end());
  return all;
}

PtsSnn PtsSnn::clone() const {
  PtsSnn copy = *this;
  // Rebind every handle in the copy to fresh storage.
  auto deep = [](Tensor& t) {
    if (t.defined()) t = t.detach().set_requires_grad(t.requires_grad());
  };
  deep(copy.encoder.ln_gain);
  deep(copy.encoder.ln_shift);
  for (auto& b : copy.encoder.blocks) {
    for (Tensor* t : {&b.weight, &b.bias, &b.bn_gain, &b.bn_shift, &b.tau_raw, &b.residual,
                      &b.bn.running_mean, &b.bn.running_var}) {
      deep(*t);
    }
  }
  deep(copy.prompts);
  for (Tensor* t : {&copy.ssla.w_q, &copy.ssla.w_k, &copy.ssla.w_v, &copy.bias.w_down,
                    &copy.bias.beta1, &copy.bias.w_up, &copy.bias.beta2, &copy.backend.w_hidden,
                    &copy.backend.b_hidden, &copy.backend.bn_gain, &copy.backend.bn_shift,
                    &copy.backend.tau_raw, &copy.backend.w_out, &copy.backend.b_out,
                    &copy.backend.bn.running_mean, &copy.backend.bn.running_var}) {
    deep(*t);
  }
  return copy;
}

void load_state(PtsSnn& model, const std::vector<NamedTensor>& source) {
  for (auto& [name, tensor] : model.state()) {
    auto it = std::find_if(source.begin(), source.end(),
                           [&](const NamedTensor& s) { return s.name == name; });
    if (it == source.end()) throw std::runtime_error("state is missing tensor '" + name + "'");
    if (it->tensor.shape() != tensor.shape()) {
      throw ShapeError("state tensor '" + name + "' has shape " + shape_str(it->tensor.shape()) +
                       ", model expects " + shape_str(tensor.shape()));
    }
    std::copy(it->tensor.data().begin(), it->tensor.data().end(), tensor.mutable_data().begin());
  }
}

}  // namespace pts
