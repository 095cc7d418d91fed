#pragma once

#include "pts/tensor.hpp"

namespace pts {

// Parametric leaky integrate-and-fire neuron settings.
//
// Membrane update (soft reset by the previous step's spike):
//   u[t] = tau * u[t-1] + i[t] - v_threshold * s[t-1]
//   s[t] = H(u[t] - v_threshold), H(0) = 1
// with tau = sigmoid(tau_raw) per channel. The backward pass replaces dH/du by
// the logistic surrogate of steepness `surrogate_steepness`.
struct PlifConfig {
  double v_threshold = 1.0;
  double surrogate_steepness = 5.0;
  double tau_init_raw = 0.0;  // sigmoid(0) = 0.5
  // Smooth mode emits sigmoid(alpha * (u - v_th)) instead of hard spikes, so
  // the forward map is exactly the function whose derivative the surrogate
  // describes. Only used for finite-difference checks.
  bool smooth = false;

  void validate() const;
};

// alpha * sig(alpha x) * (1 - sig(alpha x)), x = u - v_threshold.
double surrogate_grad(double x, double alpha);

// Heaviside spike on the membrane potential with surrogate backward.
Tensor spike(const Tensor& membrane, const PlifConfig& cfg);

struct PlifState {
  Tensor u;       // [B, D]
  Tensor s_prev;  // [B, D], values in {0, 1}

  static PlifState rest(std::size_t batch, std::size_t channels);
};

struct PlifStepResult {
  Tensor spikes;
  PlifState state;
};

// One update of the membrane equation; `tau_raw` is [D].
PlifStepResult plif_step(const PlifState& state, const Tensor& current, const Tensor& tau_raw,
                         const PlifConfig& cfg);

// Runs the neuron over the time axis of x[B, T, D] starting from rest. Fused
// forward with hand-written backpropagation through time.
Tensor plif_sequence(const Tensor& x, const Tensor& tau_raw, const PlifConfig& cfg);

// Each position is one step from rest: output H(x - v_threshold).
Tensor plif_single_step(const Tensor& x, const PlifConfig& cfg);

}  // namespace pts
