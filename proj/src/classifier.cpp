#include "pts/classifier.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pts/init.hpp"

namespace pts {

namespace {

void check_probs(const Tensor& probs, const std::vector<std::size_t>& labels) {
  if (probs.ndim() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("loss: probabilities " + shape_str(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (probs.dim(1) < 2) throw ShapeError("loss: need at least two classes");
  for (double p : probs.data()) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0 + 1e-9) {
      throw NumericError("loss: invalid probability " + std::to_string(p));
    }
  }
  for (std::size_t y : labels) {
    if (y >= probs.dim(1)) throw std::out_of_range("loss: label out of range");
  }
}

}  // namespace

SpikingBackend SpikingBackend::init(std::size_t d_in, std::size_t hidden, std::size_t classes,
                                    const PlifConfig& plif, std::mt19937_64& rng) {
  if (classes < 2) throw std::invalid_argument("backend needs at least two classes");
  SpikingBackend b;
  b.w_hidden = init::kaiming_uniform(hidden, d_in, rng);
  b.b_hidden = Tensor::zeros({hidden}, true);
  b.bn_gain = Tensor::ones({hidden}, true);
  b.bn_shift = Tensor::zeros({hidden}, true);
  b.bn = BatchNormStats::fresh(hidden);
  b.tau_raw = Tensor::full({hidden}, plif.tau_init_raw, true);
  b.w_out = init::kaiming_uniform(classes, hidden, rng);
  b.b_out = Tensor::zeros({classes}, true);
  return b;
}

Tensor backend_forward(const Tensor& x_hat, SpikingBackend& backend, const PlifConfig& plif,
                       bool training, BackendActivity* activity) {
  if (x_hat.ndim() != 3) throw ShapeError("backend: expected [B,T,D], got " + shape_str(x_hat.shape()));
  const Tensor drive = batch_norm(linear(x_hat, backend.w_hidden, backend.b_hidden), backend.bn_gain,
                                  backend.bn_shift, backend.bn, training);
  const Tensor spikes = plif_sequence(drive, backend.tau_raw, plif);
  if (activity != nullptr) *activity = BackendActivity{drive, spikes};
  return mean(linear(spikes, backend.w_out, backend.b_out), 1);
}

void LossConfig::validate() const {
  if (gamma < 0.0) throw std::invalid_argument("loss gamma must be >= 0");
  if (epsilon < 0.0 || epsilon >= 1.0) throw std::invalid_argument("loss epsilon must be in [0,1)");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw std::invalid_argument("loss weights must be >= 0");
}

Tensor softmax_probs(const Tensor& logits) { return softmax(logits); }

Tensor focal_loss(const Tensor& probs, const std::vector<std::size_t>& labels,
                  const LossConfig& cfg) {
  check_probs(probs, labels);
  const Tensor p_y = clamp_min(gather(probs, labels), kProbabilityFloor);
  const Tensor miss = clamp_min(add_scalar(scale(p_y, -1.0), 1.0), 0.0);
  const Tensor per_sample = mul(pow(miss, cfg.gamma), log(p_y));
  return scale(mean_all(per_sample), -cfg.alpha);
}

std::vector<double> smoothed_targets(std::size_t label, std::size_t classes, double epsilon) {
  std::vector<double> t(classes, epsilon / static_cast<double>(classes));
  t[label] = 1.0 - epsilon + epsilon / static_cast<double>(classes);
  return t;
}

Tensor label_smoothing_loss(const Tensor& probs, const std::vector<std::size_t>& labels,
                            double epsilon) {
  check_probs(probs, labels);
  const std::size_t classes = probs.dim(1);
  std::vector<double> targets;
  targets.reserve(probs.numel());
  for (std::size_t y : labels) {
    const auto row = smoothed_targets(y, classes, epsilon);
    targets.insert(targets.end(), row.begin(), row.end());
  }
  const Tensor log_p = log(clamp_min(probs, kProbabilityFloor));
  const Tensor per_sample = sum(mul(log_p, Tensor(probs.shape(), std::move(targets))), 1);
  return scale(mean_all(per_sample), -1.0);
}

Tensor total_loss(const Tensor& probs, const std::vector<std::size_t>& labels,
                  const LossConfig& cfg) {
  return add(scale(focal_loss(probs, labels, cfg), cfg.lambda1),
             scale(label_smoothing_loss(probs, labels, cfg.epsilon), cfg.lambda2));
}

std::size_t predict(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

std::vector<std::size_t> predict(const Tensor& logits) {
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.numel() / classes;
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = predict(logits.data().subspan(r * classes, classes));
  return out;
}

}  // namespace pts
