#pragma once

#include <random>
#include <vector>

#include "pts/ops.hpp"
#include "pts/plif.hpp"

namespace pts {

struct EncoderConfig {
  double xi = 0.1;
  std::vector<std::size_t> dims{768, 512, 256};
  std::size_t shift_div = 4;

  void validate() const;
};

// tanh(xi * LayerNorm(x)) over the channel axis.
Tensor soft_saturate(const Tensor& x, const Tensor& ln_gain, const Tensor& ln_shift, double xi);

// Parameter-free shift along time for h[B, T, C]. Channels [0, C/k) take the
// previous frame (first frame zero-padded), channels [C/k, 2C/k) take the next
// frame (last frame zero-padded), the rest pass through.
Tensor temporal_shift(const Tensor& h, std::size_t shift_div);

// One residual spiking block:
//   PLIF(BN(W * Shift(h) + b) + skip(h)),  skip = identity or bias-free R * h.
struct ShiftBlock {
  Tensor weight;    // [D_out, D_in]
  Tensor bias;      // [D_out]
  Tensor bn_gain;   // [D_out]
  Tensor bn_shift;  // [D_out]
  BatchNormStats bn;
  Tensor tau_raw;   // [D_out]
  Tensor residual;  // [D_out, D_in], undefined when D_in == D_out

  static ShiftBlock init(std::size_t d_in, std::size_t d_out, const PlifConfig& plif,
                         std::mt19937_64& rng);
  std::size_t d_in() const { return weight.dim(1); }
  std::size_t d_out() const { return weight.dim(0); }
};

struct BlockActivity {
  Tensor drive;   // pre-threshold input current
  Tensor spikes;
};

Tensor shift_block_forward(const Tensor& h, ShiftBlock& block, const EncoderConfig& cfg,
                           const PlifConfig& plif, bool training, BlockActivity* activity = nullptr);

struct TemporalShiftEncoder {
  Tensor ln_gain;
  Tensor ln_shift;
  std::vector<ShiftBlock> blocks;

  static TemporalShiftEncoder init(const EncoderConfig& cfg, const PlifConfig& plif,
                                   std::mt19937_64& rng);
};

struct EncoderActivity {
  Tensor saturated;                    // soft_saturate output (block 1 input)
  std::vector<BlockActivity> blocks;
};

// `bypass_saturation` feeds x straight into the first block (diagnostics only).
Tensor encoder_forward(const Tensor& x, TemporalShiftEncoder& encoder, const EncoderConfig& cfg,
                       const PlifConfig& plif, bool training, bool bypass_saturation = false,
                       EncoderActivity* activity = nullptr);

}  // namespace pts
