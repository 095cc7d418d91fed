#include "pts/pipeline_check.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "pts/classifier.hpp"
#include "pts/gradcheck.hpp"
#include "pts/init.hpp"

namespace pts::gradcheck {

Tensor faulty_identity(const Tensor& x) {
  Tensor out(x.shape(), x.values());
  if (detail::should_record({&x})) {
    detail::record(out, {x}, [x](std::span<const double> g) {
      auto& gx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 1.5 * g[i];
    });
  }
  return out;
}

namespace {

std::string stage_of(const std::string& name) {
  if (name.rfind("encoder.ln.", 0) == 0) return "soft_saturate";
  if (name.rfind("encoder.block", 0) == 0) return name.substr(0, name.find('.', 8));
  if (name == "prompts") return "prompts";
  if (name.rfind("ssla.", 0) == 0) return "ssla";
  if (name.rfind("bias.", 0) == 0) return "bias_generator";
  if (name.rfind("backend.", 0) == 0) return "backend";
  throw std::logic_error("parameter '" + name + "' has no gradcheck stage");
}

}  // namespace

std::vector<StageReport> check_pipeline(const PipelineOptions& options) {
  if (options.inject_fault &&
      std::find(std::begin(kForwardStages), std::end(kForwardStages), *options.inject_fault) ==
          std::end(kForwardStages)) {
    throw std::invalid_argument("unknown stage '" + *options.inject_fault + "' for fault injection");
  }
  ModelConfig cfg;
  cfg.encoder.dims = options.dims;
  cfg.plif.smooth = true;
  cfg.prompt_length = options.prompt_length;
  cfg.num_classes = options.classes;
  cfg.bias_hidden = options.bias_hidden;
  cfg.backend_hidden = options.backend_hidden;
  PtsSnn model(cfg, options.seed);

  // Move off the zero-initialized calibration branch so every parameter has
  // a non-trivial gradient.
  std::mt19937_64 rng(options.seed + 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Tensor* t : {&model.bias.w_up, &model.bias.beta2}) {
    for (double& v : t->mutable_data()) v = 0.5 * gauss(rng);
  }
  for (double& v : model.prompts.mutable_data()) v = gauss(rng);

  const std::size_t d_in = options.dims.front();
  std::vector<double> xs(options.batch * options.steps * d_in);
  for (double& v : xs) v = gauss(rng);
  Tensor x({options.batch, options.steps, d_in}, std::move(xs), true);
  std::vector<std::size_t> labels(options.batch);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % options.classes;

  ForwardOptions fwd;
  fwd.training = true;
  if (options.inject_fault) {
    const std::string target = *options.inject_fault;
    fwd.tap = [target](std::string_view stage, const Tensor& t) {
      return stage == target ? faulty_identity(t) : t;
    };
  }
  const LossConfig loss_cfg;
  auto loss = [&] {
    return total_loss(softmax_probs(model.forward(x, fwd)), labels, loss_cfg).item();
  };

  std::vector<NamedTensor> targets = model.parameters();
  targets.insert(targets.begin(), NamedTensor{"input", x});
  for (auto& t : targets) t.tensor.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    const Tensor l = total_loss(softmax_probs(model.forward(x, fwd)), labels, loss_cfg);
    tape.backward(l);
  }

  std::vector<StageReport> reports;
  for (auto& [name, tensor] : targets) {
    const std::string stage = name == "input" ? "input" : stage_of(name);
    std::vector<double> analytic(tensor.numel(), 0.0);
    if (tensor.has_grad()) std::copy(tensor.grad().begin(), tensor.grad().end(), analytic.begin());
    const auto numeric = numeric_gradient(loss, tensor, options.step);
    const Comparison c = compare(analytic, numeric, 1e-7);
    auto it = std::find_if(reports.begin(), reports.end(),
                           [&](const StageReport& r) { return r.stage == stage; });
    if (it == reports.end()) {
      reports.push_back(StageReport{stage, 0, 0.0, false});
      it = reports.end() - 1;
    }
    it->elements += tensor.numel();
    it->max_rel_error = std::max(it->max_rel_error, c.max_rel_error);
  }
  for (auto& r : reports) r.passed = r.max_rel_error < options.tolerance;
  return reports;
}

}  // namespace pts::gradcheck
