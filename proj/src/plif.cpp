#include "pts/plif.hpp"

#include <cmath>
#include <string>

#include "pts/ops.hpp"

namespace pts {

namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_finite_current(const Tensor& t) {
  for (double v : t.data()) {
    if (std::isnan(v) || std::isinf(v)) throw NumericError("PLIF: non-finite input current");
  }
}

double fire(double membrane, const PlifConfig& cfg) {
  const double x = membrane - cfg.v_threshold;
  if (cfg.smooth) return logistic(cfg.surrogate_steepness * x);
  return x >= 0.0 ? 1.0 : 0.0;
}

}  // namespace

void PlifConfig::validate() const {
  if (!(v_threshold > 0.0)) throw std::invalid_argument("PLIF v_threshold must be > 0");
  if (!(surrogate_steepness > 0.0)) {
    throw std::invalid_argument("PLIF surrogate_steepness must be > 0");
  }
}

double surrogate_grad(double x, double alpha) {
  const double s = logistic(alpha * x);
  return alpha * s * (1.0 - s);
}

Tensor spike(const Tensor& membrane, const PlifConfig& cfg) {
  require_finite_current(membrane);
  const auto mv = membrane.data();
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fire(mv[i], cfg);
  Tensor result(membrane.shape(), std::move(out));
  if (detail::should_record({&membrane})) {
    detail::record(result, {membrane}, [membrane, cfg](std::span<const double> g) {
      const auto mv = membrane.data();
      auto& gm = detail::grad_buffer(membrane);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gm[i] += g[i] * surrogate_grad(mv[i] - cfg.v_threshold, cfg.surrogate_steepness);
      }
    });
  }
  return result;
}

PlifState PlifState::rest(std::size_t batch, std::size_t channels) {
  return PlifState{Tensor::zeros({batch, channels}), Tensor::zeros({batch, channels})};
}

PlifStepResult plif_step(const PlifState& state, const Tensor& current, const Tensor& tau_raw,
                         const PlifConfig& cfg) {
  if (current.shape() != state.u.shape()) {
    throw ShapeError("plif_step: current " + shape_str(current.shape()) + " vs state " +
                     shape_str(state.u.shape()));
  }
  require_finite_current(current);
  const Tensor tau = sigmoid(tau_raw);
  const Tensor u = sub(add(mul(state.u, tau), current), scale(state.s_prev, cfg.v_threshold));
  Tensor s = spike(u, cfg);
  return PlifStepResult{s, PlifState{u, s}};
}

Tensor plif_sequence(const Tensor& x, const Tensor& tau_raw, const PlifConfig& cfg) {
  if (x.ndim() != 3) throw ShapeError("plif_sequence: expected [B,T,D], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), steps = x.dim(1), d = x.dim(2);
  if (tau_raw.numel() != d) {
    throw ShapeError("plif_sequence: tau " + shape_str(tau_raw.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  require_finite_current(x);

  std::vector<double> tau(d);
  for (std::size_t j = 0; j < d; ++j) tau[j] = logistic(tau_raw.data()[j]);

  const auto xv = x.data();
  std::vector<double> membrane(x.numel());
  std::vector<double> out(x.numel());
  const double vth = cfg.v_threshold;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t row = (b * steps + t) * d;
      for (std::size_t j = 0; j < d; ++j) {
        double u = xv[row + j];
        if (t > 0) u += tau[j] * membrane[row - d + j] - vth * out[row - d + j];
        membrane[row + j] = u;
        out[row + j] = fire(u, cfg);
      }
    }
  }

  Tensor result(x.shape(), std::move(out));
  if (detail::should_record({&x, &tau_raw})) {
    detail::record(result, {x, tau_raw},
                   [x, tau_raw, cfg, tau = std::move(tau), membrane = std::move(membrane), batch,
                    steps, d](std::span<const double> g) {
                     const double vth = cfg.v_threshold;
                     const double alpha = cfg.surrogate_steepness;
                     std::vector<double> grad_tau(d, 0.0);
                     std::vector<double> gu_next(d);
                     std::vector<double>* gx = x.requires_grad() ? &detail::grad_buffer(x) : nullptr;
                     for (std::size_t b = 0; b < batch; ++b) {
                       std::fill(gu_next.begin(), gu_next.end(), 0.0);
                       for (std::size_t t = steps; t-- > 0;) {
                         const std::size_t row = (b * steps + t) * d;
                         for (std::size_t j = 0; j < d; ++j) {
                           // s[t] feeds u[t+1] through the reset term.
                           const double gs = g[row + j] - vth * gu_next[j];
                           const double gu = gs * surrogate_grad(membrane[row + j] - vth, alpha) +
                                             tau[j] * gu_next[j];
                           if (gx) (*gx)[row + j] += gu;
                           if (t > 0) grad_tau[j] += gu * membrane[row - d + j];
                           gu_next[j] = gu;
                         }
                       }
                     }
                     if (tau_raw.requires_grad()) {
                       auto& gr = detail::grad_buffer(tau_raw);
                       for (std::size_t j = 0; j < d; ++j) {
                         gr[j] += grad_tau[j] * tau[j] * (1.0 - tau[j]);
                       }
                     }
                   });
  }
  return result;
}

Tensor plif_single_step(const Tensor& x, const PlifConfig& cfg) { return spike(x, cfg); }

}  // namespace pts
