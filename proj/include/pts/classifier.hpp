#pragma once

#include <random>
#include <span>
#include <vector>

#include "pts/ops.hpp"
#include "pts/plif.hpp"

namespace pts {

// Linear -> BN -> PLIF hidden layer, per-step linear readout, rate-averaged.
struct SpikingBackend {
  Tensor w_hidden;  // [H, D]
  Tensor b_hidden;  // [H]
  Tensor bn_gain;
  Tensor bn_shift;
  BatchNormStats bn;
  Tensor tau_raw;   // [H]
  Tensor w_out;     // [K, H]
  Tensor b_out;     // [K]

  static SpikingBackend init(std::size_t d_in, std::size_t hidden, std::size_t classes,
                             const PlifConfig& plif, std::mt19937_64& rng);
};

struct BackendActivity {
  Tensor drive;
  Tensor spikes;
};

// x_hat[B, T, D] -> logits[B, K] = mean_t readout(spikes[t]).
Tensor backend_forward(const Tensor& x_hat, SpikingBackend& backend, const PlifConfig& plif,
                       bool training, BackendActivity* activity = nullptr);

struct LossConfig {
  double alpha = 0.8;
  double gamma = 2.5;
  double epsilon = 0.12;
  double lambda1 = 0.7;
  double lambda2 = 0.3;

  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-12;

Tensor softmax_probs(const Tensor& logits);

// Batch mean of -alpha (1 - p_y)^gamma log p_y.
Tensor focal_loss(const Tensor& probs, const std::vector<std::size_t>& labels,
                  const LossConfig& cfg);

// Batch mean of the cross-entropy against the epsilon-smoothed one-hot target.
Tensor label_smoothing_loss(const Tensor& probs, const std::vector<std::size_t>& labels,
                            double epsilon);

Tensor total_loss(const Tensor& probs, const std::vector<std::size_t>& labels,
                  const LossConfig& cfg);

std::vector<double> smoothed_targets(std::size_t label, std::size_t classes, double epsilon);

// Argmax; ties go to the lowest index.
std::size_t predict(std::span<const double> logits);
std::vector<std::size_t> predict(const Tensor& logits);

}  // namespace pts
